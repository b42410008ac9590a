#include "concap/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace concap::nn {

void Params::sort_by_name() {
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (size_t i = 1; i < items.size(); ++i)
    if (items[i].first == items[i - 1].first)
      throw std::logic_error("duplicate parameter name: " + items[i].first);
}

void Params::zero_grad() {
  for (auto& [name, t] : items) t->zero_grad();
}

Tensor* Params::find(const std::string& name) {
  for (auto& [n, t] : items)
    if (n == name) return t;
  return nullptr;
}

Tensor init_weight(Rng& rng, int rows, int cols, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros({rows, cols});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  t.ensure_grad();
  return t;
}

Tensor init_embedding(Rng& rng, int rows, int d) {
  return init_weight(rng, rows, d, d);
}

Linear make_linear(Rng& rng, int in, int out) {
  Linear l;
  l.w = init_weight(rng, in, out, in);
  l.b = Tensor::zeros({out});
  l.b.ensure_grad();
  return l;
}

Tensor linear(const Tensor& x, const Linear& l) {
  return ad::add_bias(ad::matmul(x, l.w), l.b);
}

void collect(Linear& l, const std::string& prefix, Params& out) {
  out.add(prefix + ".w", &l.w);
  out.add(prefix + ".b", &l.b);
}

LayerNorm make_layer_norm(int d) {
  LayerNorm ln;
  ln.gain = Tensor::full({d}, 1.0);
  ln.bias = Tensor::zeros({d});
  ln.gain.ensure_grad();
  ln.bias.ensure_grad();
  return ln;
}

Tensor layer_norm(const Tensor& x, const LayerNorm& ln) {
  return ad::layer_norm(x, ln.gain, ln.bias);
}

void collect(LayerNorm& l, const std::string& prefix, Params& out) {
  out.add(prefix + ".gain", &l.gain);
  out.add(prefix + ".bias", &l.bias);
}

Attention make_attention(Rng& rng, int d_model, int heads) {
  if (heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("attention: d_model " + std::to_string(d_model) +
                                " not divisible by heads " + std::to_string(heads));
  Attention a;
  a.heads = heads;
  a.q = make_linear(rng, d_model, d_model);
  a.k = make_linear(rng, d_model, d_model);
  a.v = make_linear(rng, d_model, d_model);
  a.o = make_linear(rng, d_model, d_model);
  return a;
}

void collect(Attention& a, const std::string& prefix, Params& out) {
  collect(a.q, prefix + ".q", out);
  collect(a.k, prefix + ".k", out);
  collect(a.v, prefix + ".v", out);
  collect(a.o, prefix + ".o", out);
}

Tensor attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                 const Attention& p, bool causal) {
  const int d_model = q_in.dim(-1);
  if (d_model % p.heads != 0)
    throw std::invalid_argument("attention: d_model not divisible by heads");
  const int dh = d_model / p.heads;
  const int tq = q_in.dim(0);
  const int tk = k_in.dim(0);
  if (causal && tq != tk)
    throw std::invalid_argument("attention: causal mask needs square scores");

  Tensor q = linear(q_in, p.q);
  Tensor k = linear(k_in, p.k);
  Tensor v = linear(v_in, p.v);

  Tensor mask;
  if (causal) {
    mask = Tensor::zeros({tq, tk});
    for (int i = 0; i < tq; ++i)
      for (int j = i + 1; j < tk; ++j) mask[static_cast<int64_t>(i) * tk + j] = -1e9;
  }

  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(p.heads));
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < p.heads; ++h) {
    Tensor qh = ad::slice_last(q, h * dh, dh);
    Tensor kh = ad::slice_last(k, h * dh, dh);
    Tensor vh = ad::slice_last(v, h * dh, dh);
    Tensor scores = ad::scale(ad::matmul(qh, ad::transpose2(kh)), inv_scale);
    if (causal) scores = ad::add(scores, mask);
    Tensor attn = ad::softmax(scores, -1);
    heads.push_back(ad::matmul(attn, vh));
  }
  Tensor merged = p.heads == 1 ? heads[0] : ad::concat_last(heads);
  return linear(merged, p.o);
}

Ffn make_ffn(Rng& rng, int d_model, int hidden) {
  Ffn f;
  f.fc1 = make_linear(rng, d_model, hidden);
  f.fc2 = make_linear(rng, hidden, d_model);
  return f;
}

Tensor ffn(const Tensor& x, const Ffn& f) {
  return linear(ad::relu(linear(x, f.fc1)), f.fc2);
}

void collect(Ffn& f, const std::string& prefix, Params& out) {
  collect(f.fc1, prefix + ".fc1", out);
  collect(f.fc2, prefix + ".fc2", out);
}

}  // namespace concap::nn
