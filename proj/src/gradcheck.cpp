#include "concap/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "concap/nn.hpp"
#include "concap/ops.hpp"
#include "concap/rng.hpp"

namespace concap::ad {

namespace {

double rel_err(double analytic, double numeric) {
  return std::fabs(analytic - numeric) /
         std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
}

std::vector<double> analytic_grad(const std::function<Tensor()>& f, Tensor& x) {
  x.ensure_grad();
  x.zero_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = f();
    tape.backward(loss);
  }
  return x.st->grad;
}

}  // namespace

double finite_difference_check_coords(const std::function<Tensor()>& f, Tensor& x,
                                      const std::vector<int64_t>& coords, double eps) {
  const std::vector<double> analytic = analytic_grad(f, x);
  double worst = 0.0;
  for (int64_t i : coords) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double fp = f().value();
    x[i] = orig - eps;
    const double fm = f().value();
    x[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    worst = std::max(worst, rel_err(analytic[static_cast<size_t>(i)], numeric));
  }
  return worst;
}

double finite_difference_check(const std::function<Tensor()>& f, Tensor& x, double eps) {
  std::vector<int64_t> coords(static_cast<size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i) coords[static_cast<size_t>(i)] = i;
  return finite_difference_check_coords(f, x, coords, eps);
}

namespace {

Tensor random_tensor(Rng& rng, const Shape& s, double scale = 1.0) {
  Tensor t = Tensor::zeros(s);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

// Fixed random projection turns a tensor-valued op into a scalar loss; one
// backward pass then checks the whole Jacobian against that direction.
Tensor project(const Tensor& out, const Tensor& proj) {
  return sum_all(mul(out, proj));
}

double suite_matmul() {
  Rng rng(101);
  Tensor a = random_tensor(rng, {4, 5});
  Tensor b = random_tensor(rng, {5, 6});
  Tensor proj = random_tensor(rng, {4, 6});
  auto f = [&] { return project(matmul(a, b), proj); };
  double worst = std::max(finite_difference_check(f, a), finite_difference_check(f, b));

  // batched with broadcast on the left operand
  Tensor a3 = random_tensor(rng, {3, 2, 4});
  Tensor b2 = random_tensor(rng, {4, 5});
  Tensor proj3 = random_tensor(rng, {3, 2, 5});
  auto f3 = [&] { return project(matmul(a3, b2), proj3); };
  worst = std::max(worst, finite_difference_check(f3, a3));
  worst = std::max(worst, finite_difference_check(f3, b2));
  return worst;
}

double suite_softmax() {
  Rng rng(102);
  Tensor x = random_tensor(rng, {3, 7}, 2.0);
  Tensor proj = random_tensor(rng, {3, 7});
  auto f = [&] { return project(softmax(x, -1), proj); };
  return finite_difference_check(f, x);
}

double suite_layer_norm() {
  Rng rng(103);
  Tensor x = random_tensor(rng, {4, 6}, 2.0);
  Tensor gain = random_tensor(rng, {6});
  Tensor bias = random_tensor(rng, {6});
  Tensor proj = random_tensor(rng, {4, 6});
  auto f = [&] { return project(layer_norm(x, gain, bias), proj); };
  double worst = finite_difference_check(f, x);
  worst = std::max(worst, finite_difference_check(f, gain));
  worst = std::max(worst, finite_difference_check(f, bias));
  return worst;
}

double suite_mha() {
  Rng rng(104);
  nn::Attention p = nn::make_attention(rng, 8, 2);
  Tensor q = random_tensor(rng, {5, 8});
  Tensor k = random_tensor(rng, {7, 8});
  Tensor v = random_tensor(rng, {7, 8});
  Tensor proj = random_tensor(rng, {5, 8});
  auto f = [&] { return project(nn::attention(q, k, v, p, false), proj); };
  double worst = finite_difference_check(f, q);
  worst = std::max(worst, finite_difference_check(f, k));
  worst = std::max(worst, finite_difference_check(f, v));
  worst = std::max(worst, finite_difference_check(f, p.q.w));
  worst = std::max(worst, finite_difference_check(f, p.o.w));
  worst = std::max(worst, finite_difference_check(f, p.v.b));

  // causal self-attention
  Tensor x = random_tensor(rng, {5, 8});
  Tensor projc = random_tensor(rng, {5, 8});
  auto fc = [&] { return project(nn::attention(x, x, x, p, true), projc); };
  worst = std::max(worst, finite_difference_check(fc, x));
  worst = std::max(worst, finite_difference_check(fc, p.k.w));
  return worst;
}

double suite_cross_entropy() {
  Rng rng(105);
  Tensor logits = random_tensor(rng, {6, 9}, 2.0);
  std::vector<int> targets = {4, 0, 7, 0, 2, 8};  // 0 is the pad id here
  auto f = [&] { return cross_entropy(logits, targets, 0); };
  return finite_difference_check(f, logits);
}

double suite_asymmetric_loss() {
  Rng rng(106);
  const int k = 12;
  Tensor probs = Tensor::zeros({k});
  Tensor labels = Tensor::zeros({k});
  for (int i = 0; i < k; ++i) {
    // keep clear of the clip kink at p = clip_margin and of the clamp edges
    probs[i] = rng.uniform(0.15, 0.9);
    labels[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
  }
  auto f = [&] { return asymmetric_loss(probs, labels, 0.0, 4.0, 0.05); };
  double worst = finite_difference_check(f, probs);
  auto f2 = [&] { return asymmetric_loss(probs, labels, 1.0, 2.0, 0.05); };
  worst = std::max(worst, finite_difference_check(f2, probs));
  return worst;
}

double suite_gather_embed() {
  Rng rng(107);
  Tensor table = random_tensor(rng, {10, 6});
  std::vector<int> idx = {3, 3, 0, 7, 9};
  Tensor proj = random_tensor(rng, {5, 6});
  auto f = [&] { return project(gather_rows(table, idx), proj); };
  return finite_difference_check(f, table);
}

}  // namespace

}  // namespace concap::ad

// Suites that need the graph and model layers live in wgcn.cpp / model.cpp;
// they register themselves here.
namespace concap::ad {

double wgcn_gradcheck_suite();        // defined in wgcn.cpp
double end_to_end_gradcheck_suite();  // defined in model.cpp

const std::vector<GradSuite>& gradcheck_suites() {
  static const std::vector<GradSuite> kSuites = {
      {"matmul", 1e-5, suite_matmul},
      {"softmax", 1e-5, suite_softmax},
      {"layer_norm", 1e-5, suite_layer_norm},
      {"mha", 1e-5, suite_mha},
      {"cross_entropy", 1e-5, suite_cross_entropy},
      {"asymmetric_loss", 1e-5, suite_asymmetric_loss},
      {"embedding", 1e-5, suite_gather_embed},
      {"wgcn_layer", 1e-5, wgcn_gradcheck_suite},
      {"end_to_end", 1e-4, end_to_end_gradcheck_suite},
  };
  return kSuites;
}

}  // namespace concap::ad
