#include "concap/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace concap::ad {

namespace {

bool g_finite_checks = false;

void finish(Tensor& out, std::vector<Tensor> parents,
            std::function<void(TapeNode&)> backward, const char* op) {
  if (g_finite_checks && !out.all_finite())
    throw std::runtime_error(std::string("non-finite values produced by ") + op);
  if (Tape* t = active_tape()) t->record(out, std::move(parents), std::move(backward));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
}

Shape leading(const Shape& s) { return Shape(s.begin(), s.end() - 2); }

// Broadcast two leading-dim shapes; returns the result plus per-input strides
// (in units of one [r,c] matrix) for every result dim.
struct BatchMap {
  Shape batch;
  std::vector<int64_t> stride_a, stride_b;
  int64_t count = 1;
};

BatchMap broadcast_batches(const Shape& la, const Shape& lb) {
  BatchMap m;
  size_t r = std::max(la.size(), lb.size());
  m.batch.assign(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int da = i < r - la.size() ? 1 : la[i - (r - la.size())];
    int db = i < r - lb.size() ? 1 : lb[i - (r - lb.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("matmul: batch dims not broadcastable");
    m.batch[i] = std::max(da, db);
  }
  auto strides_for = [&](const Shape& l) {
    std::vector<int64_t> strides(r, 0);
    int64_t run = 1;
    for (size_t i = l.size(); i-- > 0;) {
      size_t pos = i + (r - l.size());
      strides[pos] = (l[i] == 1) ? 0 : run;
      run *= l[i];
    }
    return strides;
  };
  m.stride_a = strides_for(la);
  m.stride_b = strides_for(lb);
  for (int d : m.batch) m.count *= d;
  return m;
}

void batch_offsets(const BatchMap& m, int64_t flat, int64_t* off_a, int64_t* off_b) {
  int64_t oa = 0, ob = 0;
  for (size_t i = m.batch.size(); i-- > 0;) {
    int64_t idx = flat % m.batch[i];
    flat /= m.batch[i];
    oa += idx * m.stride_a[i];
    ob += idx * m.stride_b[i];
  }
  *off_a = oa;
  *off_b = ob;
}

}  // namespace

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks() { return g_finite_checks; }

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape);
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  finish(out, {a, b},
         [](TapeNode& n) {
           const double* g = n.out.grad_ptr();
           double* ga = n.parents[0].st->grad.data();
           double* gb = n.parents[1].st->grad.data();
           for (int64_t i = 0; i < n.out.size(); ++i) {
             ga[i] += g[i];
             gb[i] += g[i];
           }
         },
         "add");
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape);
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  finish(out, {a, b},
         [](TapeNode& n) {
           const double* g = n.out.grad_ptr();
           double* ga = n.parents[0].st->grad.data();
           double* gb = n.parents[1].st->grad.data();
           for (int64_t i = 0; i < n.out.size(); ++i) {
             ga[i] += g[i];
             gb[i] -= g[i];
           }
         },
         "sub");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape);
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  finish(out, {a, b},
         [](TapeNode& n) {
           const double* g = n.out.grad_ptr();
           const Tensor& a = n.parents[0];
           const Tensor& b = n.parents[1];
           double* ga = n.parents[0].st->grad.data();
           double* gb = n.parents[1].st->grad.data();
           for (int64_t i = 0; i < n.out.size(); ++i) {
             ga[i] += g[i] * b[i];
             gb[i] += g[i] * a[i];
           }
         },
         "mul");
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape);
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
  finish(out, {a},
         [c](TapeNode& n) {
           const double* g = n.out.grad_ptr();
           double* ga = n.parents[0].st->grad.data();
           for (int64_t i = 0; i < n.out.size(); ++i) ga[i] += g[i] * c;
         },
         "scale");
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape);
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + c;
  finish(out, {a},
         [](TapeNode& n) {
           const double* g = n.out.grad_ptr();
           double* ga = n.parents[0].st->grad.data();
           for (int64_t i = 0; i < n.out.size(); ++i) ga[i] += g[i];
         },
         "add_scalar");
  return out;
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (bias.rank() != 1 || bias.dim(0) != a.dim(-1))
    throw std::invalid_argument("add_bias: bias " + shape_str(bias.shape) +
                                " does not match " + shape_str(a.shape));
  const int64_t n = bias.size();
  Tensor out = Tensor::zeros(a.shape);
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + bias[i % n];
  finish(out, {a, bias},
         [n](TapeNode& nd) {
           const double* g = nd.out.grad_ptr();
           double* ga = nd.parents[0].st->grad.data();
           double* gb = nd.parents[1].st->grad.data();
           for (int64_t i = 0; i < nd.out.size(); ++i) {
             ga[i] += g[i];
             gb[i % n] += g[i];
           }
         },
         "add_bias");
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw std::invalid_argument("matmul: needs rank >= 2, got " +
                                shape_str(a.shape) + " and " + shape_str(b.shape));
  const int m = a.dim(-2), k = a.dim(-1);
  const int k2 = b.dim(-2), nn = b.dim(-1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner dims disagree for " +
                                shape_str(a.shape) + " x " + shape_str(b.shape));
  BatchMap bm = broadcast_batches(leading(a.shape), leading(b.shape));
  Shape out_shape = bm.batch;
  out_shape.push_back(m);
  out_shape.push_back(nn);
  Tensor out = Tensor::zeros(out_shape);

  const int64_t sa = static_cast<int64_t>(m) * k;
  const int64_t sb = static_cast<int64_t>(k) * nn;
  const int64_t so = static_cast<int64_t>(m) * nn;
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  for (int64_t batch = 0; batch < bm.count; ++batch) {
    int64_t oa, ob;
    batch_offsets(bm, batch, &oa, &ob);
    const double* A = pa + oa * sa;
    const double* B = pb + ob * sb;
    double* O = po + batch * so;
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = B + p * nn;
        double* orow = O + i * nn;
        for (int j = 0; j < nn; ++j) orow[j] += aip * brow[j];
      }
  }

  finish(out, {a, b},
         [bm, m, k, nn, sa, sb, so](TapeNode& nd) {
           const double* g = nd.out.grad_ptr();
           const double* A = nd.parents[0].ptr();
           const double* B = nd.parents[1].ptr();
           double* dA = nd.parents[0].st->grad.data();
           double* dB = nd.parents[1].st->grad.data();
           for (int64_t batch = 0; batch < bm.count; ++batch) {
             int64_t oa, ob;
             batch_offsets(bm, batch, &oa, &ob);
             const double* Ab = A + oa * sa;
             const double* Bb = B + ob * sb;
             double* dAb = dA + oa * sa;
             double* dBb = dB + ob * sb;
             const double* Gb = g + batch * so;
             // dA += G B^T
             for (int i = 0; i < m; ++i)
               for (int j = 0; j < nn; ++j) {
                 const double gij = Gb[i * nn + j];
                 if (gij == 0.0) continue;
                 double* darow = dAb + i * k;
                 for (int p = 0; p < k; ++p) darow[p] += gij * Bb[static_cast<int64_t>(p) * nn + j];
               }
             // dB += A^T G
             for (int i = 0; i < m; ++i)
               for (int p = 0; p < k; ++p) {
                 const double aip = Ab[i * k + p];
                 if (aip == 0.0) continue;
                 const double* grow = Gb + i * nn;
                 double* drow = dBb + p * nn;
                 for (int j = 0; j < nn; ++j) drow[j] += aip * grow[j];
               }
           }
         },
         "matmul");
  return out;
}

Tensor transpose2(const Tensor& a) {
  if (a.rank() < 2) throw std::invalid_argument("transpose2: needs rank >= 2");
  const int m = a.dim(-2), n = a.dim(-1);
  Shape s = a.shape;
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  Tensor out = Tensor::zeros(s);
  const int64_t mats = a.size() / (static_cast<int64_t>(m) * n);
  for (int64_t b = 0; b < mats; ++b) {
    const double* src = a.ptr() + b * m * n;
    double* dst = out.ptr() + b * m * n;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        dst[static_cast<int64_t>(j) * m + i] = src[static_cast<int64_t>(i) * n + j];
  }
  finish(out, {a},
         [m, n, mats](TapeNode& nd) {
           const double* g = nd.out.grad_ptr();
           double* ga = nd.parents[0].st->grad.data();
           for (int64_t b = 0; b < mats; ++b) {
             const double* gsrc = g + b * m * n;
             double* gdst = ga + b * m * n;
             for (int i = 0; i < m; ++i)
               for (int j = 0; j < n; ++j)
                 gdst[static_cast<int64_t>(i) * n + j] += gsrc[static_cast<int64_t>(j) * m + i];
           }
         },
         "transpose2");
  return out;
}

Tensor reshape(const Tensor& a, const Shape& s) {
  if (shape_numel(s) != a.size())
    throw std::invalid_argument("reshape: " + shape_str(a.shape) + " to " + shape_str(s));
  Tensor out = Tensor::zeros(s);
  std::copy(a.ptr(), a.ptr() + a.size(), out.ptr());
  finish(out, {a},
         [](TapeNode& nd) {
           const double* g = nd.out.grad_ptr();
           double* ga = nd.parents[0].st->grad.data();
           for (int64_t i = 0; i < nd.out.size(); ++i) ga[i] += g[i];
         },
         "reshape");
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  if (a.rank() != 2) throw std::invalid_argument("gather_rows: needs rank 2");
  const int rows = a.dim(0), cols = a.dim(1);
  if (idx.empty()) throw std::invalid_argument("gather_rows: empty index list");
  for (int i : idx)
    if (i < 0 || i >= rows)
      throw std::out_of_range("gather_rows: row index " + std::to_string(i));
  Tensor out = Tensor::zeros({static_cast<int>(idx.size()), cols});
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy(a.ptr() + static_cast<int64_t>(idx[r]) * cols,
              a.ptr() + static_cast<int64_t>(idx[r] + 1) * cols,
              out.ptr() + static_cast<int64_t>(r) * cols);
  finish(out, {a},
         [idx, cols](TapeNode& nd) {
           const double* g = nd.out.grad_ptr();
           double* ga = nd.parents[0].st->grad.data();
           for (size_t r = 0; r < idx.size(); ++r) {
             const double* grow = g + static_cast<int64_t>(r) * cols;
             double* arow = ga + static_cast<int64_t>(idx[r]) * cols;
             for (int c = 0; c < cols; ++c) arow[c] += grow[c];
           }
         },
         "gather_rows");
  return out;
}

Tensor slice_last(const Tensor& a, int start, int len) {
  if (a.rank() != 2) throw std::invalid_argument("slice_last: needs rank 2");
  const int rows = a.dim(0), cols = a.dim(1);
  if (start < 0 || len <= 0 || start + len > cols)
    throw std::invalid_argument("slice_last: bad range");
  Tensor out = Tensor::zeros({rows, len});
  for (int r = 0; r < rows; ++r)
    std::copy(a.ptr() + static_cast<int64_t>(r) * cols + start,
              a.ptr() + static_cast<int64_t>(r) * cols + start + len,
              out.ptr() + static_cast<int64_t>(r) * len);
  finish(out, {a},
         [rows, cols, start, len](TapeNode& nd) {
           const double* g = nd.out.grad_ptr();
           double* ga = nd.parents[0].st->grad.data();
           for (int r = 0; r < rows; ++r)
             for (int c = 0; c < len; ++c)
               ga[static_cast<int64_t>(r) * cols + start + c] +=
                   g[static_cast<int64_t>(r) * len + c];
         },
         "slice_last");
  return out;
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: no parts");
  const int rows = parts[0].dim(0);
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows)
      throw std::invalid_argument("concat_last: incompatible parts");
    total += p.dim(1);
  }
  Tensor out = Tensor::zeros({rows, total});
  std::vector<int> widths;
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    widths.push_back(w);
    for (int r = 0; r < rows; ++r)
      std::copy(p.ptr() + static_cast<int64_t>(r) * w,
                p.ptr() + static_cast<int64_t>(r + 1) * w,
                out.ptr() + static_cast<int64_t>(r) * total + off);
    off += w;
  }
  finish(out, parts,
         [rows, total, widths](TapeNode& nd) {
           const double* g = nd.out.grad_ptr();
           int off = 0;
           for (size_t k = 0; k < widths.size(); ++k) {
             const int w = widths[k];
             double* gp = nd.parents[k].st->grad.data();
             for (int r = 0; r < rows; ++r)
               for (int c = 0; c < w; ++c)
                 gp[static_cast<int64_t>(r) * w + c] +=
                     g[static_cast<int64_t>(r) * total + off + c];
             off += w;
           }
         },
         "concat_last");
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape);
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  finish(out, {a},
         [](TapeNode& nd) {
           const double* g = nd.out.grad_ptr();
           const Tensor& a = nd.parents[0];
           double* ga = nd.parents[0].st->grad.data();
           for (int64_t i = 0; i < nd.out.size(); ++i)
             if (a[i] > 0.0) ga[i] += g[i];
         },
         "relu");
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape);
  for (int64_t i = 0; i < a.size(); ++i) {
    const double x = a[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  finish(out, {a},
         [](TapeNode& nd) {
           const double* g = nd.out.grad_ptr();
           const Tensor& s = nd.out;
           double* ga = nd.parents[0].st->grad.data();
           for (int64_t i = 0; i < nd.out.size(); ++i) ga[i] += g[i] * s[i] * (1.0 - s[i]);
         },
         "sigmoid");
  return out;
}

Tensor softmax(const Tensor& a, int axis) {
  const int r = a.rank();
  if (axis < 0) axis += r;
  if (axis == r - 1) {
    const int n = a.dim(-1);
    const int64_t rows = a.size() / n;
    Tensor out = Tensor::zeros(a.shape);
    for (int64_t row = 0; row < rows; ++row) {
      const double* x = a.ptr() + row * n;
      double* y = out.ptr() + row * n;
      double mx = x[0];
      for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
      double denom = 0.0;
      for (int j = 0; j < n; ++j) {
        y[j] = std::exp(x[j] - mx);
        denom += y[j];
      }
      for (int j = 0; j < n; ++j) y[j] /= denom;
    }
    finish(out, {a},
           [n, rows](TapeNode& nd) {
             const double* g = nd.out.grad_ptr();
             const double* y = nd.out.ptr();
             double* ga = nd.parents[0].st->grad.data();
             for (int64_t row = 0; row < rows; ++row) {
               const double* yr = y + row * n;
               const double* gr = g + row * n;
               double dot = 0.0;
               for (int j = 0; j < n; ++j) dot += gr[j] * yr[j];
               double* gar = ga + row * n;
               for (int j = 0; j < n; ++j) gar[j] += yr[j] * (gr[j] - dot);
             }
           },
           "softmax");
    return out;
  }
  if (r == 2 && axis == 0) return transpose2(softmax(transpose2(a), -1));
  throw std::invalid_argument("softmax: unsupported axis");
}

Tensor masked_softmax(const Tensor& scores, const std::vector<uint8_t>& support) {
  if (scores.rank() != 2) throw std::invalid_argument("masked_softmax: needs rank 2");
  const int k = scores.dim(0), n = scores.dim(1);
  if (static_cast<int64_t>(support.size()) != scores.size())
    throw std::invalid_argument("masked_softmax: support size mismatch");
  constexpr double kNoMax = -std::numeric_limits<double>::infinity();
  Tensor out = Tensor::zeros(scores.shape);
  for (int i = 0; i < k; ++i) {
    const double* x = scores.ptr() + static_cast<int64_t>(i) * n;
    const uint8_t* m = support.data() + static_cast<int64_t>(i) * n;
    double* y = out.ptr() + static_cast<int64_t>(i) * n;
    double mx = kNoMax;
    for (int j = 0; j < n; ++j)
      if (m[j]) mx = std::max(mx, x[j]);
    if (mx == kNoMax)
      throw std::invalid_argument("masked_softmax: empty support row " + std::to_string(i));
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      if (m[j]) {
        y[j] = std::exp(x[j] - mx);
        denom += y[j];
      }
    }
    for (int j = 0; j < n; ++j)
      if (m[j]) y[j] /= denom;
  }
  finish(out, {scores},
         [k, n](TapeNode& nd) {
           const double* g = nd.out.grad_ptr();
           const double* y = nd.out.ptr();
           double* ga = nd.parents[0].st->grad.data();
           for (int i = 0; i < k; ++i) {
             const double* yr = y + static_cast<int64_t>(i) * n;
             const double* gr = g + static_cast<int64_t>(i) * n;
             double dot = 0.0;
             for (int j = 0; j < n; ++j) dot += gr[j] * yr[j];
             double* gar = ga + static_cast<int64_t>(i) * n;
             // off-support outputs are exactly zero, so their terms vanish
             for (int j = 0; j < n; ++j) gar[j] += yr[j] * (gr[j] - dot);
           }
         },
         "masked_softmax");
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const int n = x.dim(-1);
  if (n < 2) throw std::invalid_argument("layer_norm: last axis must have size >= 2");
  if (gain.rank() != 1 || gain.dim(0) != n || bias.rank() != 1 || bias.dim(0) != n)
    throw std::invalid_argument("layer_norm: gain/bias must be length " + std::to_string(n));
  const int64_t rows = x.size() / n;
  Tensor out = Tensor::zeros(x.shape);
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.size()));
  auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + r * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += xr[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= n;
    const double istd = 1.0 / std::sqrt(var + eps);
    (*inv)[static_cast<size_t>(r)] = istd;
    double* yr = out.ptr() + r * n;
    for (int j = 0; j < n; ++j) {
      const double xh = (xr[j] - mean) * istd;
      (*xhat)[static_cast<size_t>(r * n + j)] = xh;
      yr[j] = gain[j] * xh + bias[j];
    }
  }
  finish(out, {x, gain, bias},
         [n, rows, xhat, inv](TapeNode& nd) {
           const double* g = nd.out.grad_ptr();
           const Tensor& gain = nd.parents[1];
           double* gx = nd.parents[0].st->grad.data();
           double* gg = nd.parents[1].st->grad.data();
           double* gb = nd.parents[2].st->grad.data();
           for (int64_t r = 0; r < rows; ++r) {
             const double* gr = g + r * n;
             const double* xh = xhat->data() + r * n;
             const double istd = (*inv)[static_cast<size_t>(r)];
             double mean_dxh = 0.0, mean_dxh_xh = 0.0;
             for (int j = 0; j < n; ++j) {
               const double dxh = gr[j] * gain[j];
               mean_dxh += dxh;
               mean_dxh_xh += dxh * xh[j];
             }
             mean_dxh /= n;
             mean_dxh_xh /= n;
             double* gxr = gx + r * n;
             for (int j = 0; j < n; ++j) {
               const double dxh = gr[j] * gain[j];
               gxr[j] += (dxh - mean_dxh - xh[j] * mean_dxh_xh) * istd;
               gg[j] += gr[j] * xh[j];
               gb[j] += gr[j];
             }
           }
         },
         "layer_norm");
  return out;
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a[i];
  Tensor out = Tensor::scalar(s);
  finish(out, {a},
         [](TapeNode& nd) {
           const double g = nd.out.grad_ptr()[0];
           double* ga = nd.parents[0].st->grad.data();
           for (int64_t i = 0; i < nd.parents[0].size(); ++i) ga[i] += g;
         },
         "sum_all");
  return out;
}

Tensor mean_all(const Tensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a[i];
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = Tensor::scalar(s * inv);
  finish(out, {a},
         [inv](TapeNode& nd) {
           const double g = nd.out.grad_ptr()[0] * inv;
           double* ga = nd.parents[0].st->grad.data();
           for (int64_t i = 0; i < nd.parents[0].size(); ++i) ga[i] += g;
         },
         "mean_all");
  return out;
}

Tensor max_axis0(const Tensor& a, std::vector<int>* argmax) {
  if (a.rank() != 2) throw std::invalid_argument("max_axis0: needs rank 2");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n});
  auto arg = std::make_shared<std::vector<int>>(static_cast<size_t>(n), 0);
  for (int j = 0; j < n; ++j) {
    double best = a[j];
    int bi = 0;
    for (int i = 1; i < m; ++i) {
      const double v = a[static_cast<int64_t>(i) * n + j];
      if (v > best) {
        best = v;
        bi = i;
      }
    }
    out[j] = best;
    (*arg)[static_cast<size_t>(j)] = bi;
  }
  if (argmax) *argmax = *arg;
  finish(out, {a},
         [n, arg](TapeNode& nd) {
           const double* g = nd.out.grad_ptr();
           double* ga = nd.parents[0].st->grad.data();
           for (int j = 0; j < n; ++j)
             ga[static_cast<int64_t>((*arg)[static_cast<size_t>(j)]) * n + j] += g[j];
         },
         "max_axis0");
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int pad_id) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be rank 2");
  const int t_len = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != t_len)
    throw std::invalid_argument("cross_entropy: target length mismatch");
  for (int t : targets)
    if (t < 0 || t >= v)
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                              " out of range for vocab " + std::to_string(v));
  int count = 0;
  double loss = 0.0;
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(logits.size()));
  for (int t = 0; t < t_len; ++t) {
    const double* l = logits.ptr() + static_cast<int64_t>(t) * v;
    double mx = l[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, l[j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) denom += std::exp(l[j] - mx);
    const double lse = std::log(denom) + mx;
    for (int j = 0; j < v; ++j)
      (*probs)[static_cast<size_t>(t) * v + j] = std::exp(l[j] - lse);
    if (targets[static_cast<size_t>(t)] == pad_id) continue;
    loss += lse - l[targets[static_cast<size_t>(t)]];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: all targets are pad");
  loss /= count;
  Tensor out = Tensor::scalar(loss);
  finish(out, {logits},
         [targets, pad_id, t_len, v, count, probs](TapeNode& nd) {
           const double g = nd.out.grad_ptr()[0] / count;
           double* gl = nd.parents[0].st->grad.data();
           for (int t = 0; t < t_len; ++t) {
             const int target = targets[static_cast<size_t>(t)];
             if (target == pad_id) continue;
             const double* p = probs->data() + static_cast<int64_t>(t) * v;
             double* gr = gl + static_cast<int64_t>(t) * v;
             for (int j = 0; j < v; ++j) gr[j] += g * (p[j] - (j == target ? 1.0 : 0.0));
           }
         },
         "cross_entropy");
  return out;
}

Tensor asymmetric_loss(const Tensor& probs, const Tensor& labels, double gamma_pos,
                       double gamma_neg, double clip_margin) {
  check_same_shape(probs, labels, "asymmetric_loss");
  const double eps = 1e-7;
  const int64_t n = probs.size();
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double p = std::clamp(probs[i], eps, 1.0 - eps);
    if (labels[i] > 0.5) {
      loss += -std::pow(1.0 - p, gamma_pos) * std::log(p);
    } else {
      const double q = std::max(p - clip_margin, 0.0);
      if (q > 0.0) loss += -std::pow(q, gamma_neg) * std::log(1.0 - q);
    }
  }
  loss /= static_cast<double>(n);
  Tensor out = Tensor::scalar(loss);
  finish(out, {probs, labels},
         [gamma_pos, gamma_neg, clip_margin, eps, n](TapeNode& nd) {
           const double g = nd.out.grad_ptr()[0] / static_cast<double>(n);
           const Tensor& probs = nd.parents[0];
           const Tensor& labels = nd.parents[1];
           double* gp = nd.parents[0].st->grad.data();
           for (int64_t i = 0; i < n; ++i) {
             const double p = probs[i];
             if (p < eps || p > 1.0 - eps) continue;  // clamp region, zero slope
             double d;
             if (labels[i] > 0.5) {
               const double first =
                   gamma_pos > 0.0
                       ? gamma_pos * std::pow(1.0 - p, gamma_pos - 1.0) * std::log(p)
                       : 0.0;
               d = first - std::pow(1.0 - p, gamma_pos) / p;
             } else {
               const double q = p - clip_margin;
               if (q <= 0.0) {
                 d = 0.0;
               } else {
                 const double first =
                     gamma_neg > 0.0
                         ? -gamma_neg * std::pow(q, gamma_neg - 1.0) * std::log(1.0 - q)
                         : 0.0;
                 d = first + std::pow(q, gamma_neg) / (1.0 - q);
               }
             }
             gp[i] += g * d;
           }
         },
         "asymmetric_loss");
  return out;
}

}  // namespace concap::ad
