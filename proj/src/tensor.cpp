#include "concap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace concap::ad {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream ss;
  ss << "[";
  for (size_t i = 0; i < s.size(); ++i) ss << (i ? "," : "") << s[i];
  ss << "]";
  return ss.str();
}

Tensor Tensor::zeros(const Shape& s) { return full(s, 0.0); }

Tensor Tensor::full(const Shape& s, double v) {
  for (int d : s)
    if (d <= 0) throw std::invalid_argument("non-positive dimension in " + shape_str(s));
  Tensor t;
  t.shape = s;
  t.st = std::make_shared<Storage>();
  t.st->data.assign(static_cast<size_t>(shape_numel(s)), v);
  return t;
}

Tensor Tensor::from(const Shape& s, std::vector<double> values) {
  if (shape_numel(s) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("value count does not match shape " + shape_str(s));
  Tensor t;
  t.shape = s;
  t.st = std::make_shared<Storage>();
  t.st->data = std::move(values);
  return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

int Tensor::dim(int i) const {
  int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw std::out_of_range("dim index");
  return shape[static_cast<size_t>(i)];
}

double Tensor::value() const {
  if (size() != 1) throw std::invalid_argument("value() on non-scalar tensor " + shape_str(shape));
  return st->data[0];
}

void Tensor::ensure_grad() {
  if (!st) throw std::invalid_argument("ensure_grad on undefined tensor");
  if (st->grad.empty()) st->grad.assign(st->data.size(), 0.0);
}

void Tensor::zero_grad() {
  if (st && !st->grad.empty()) std::fill(st->grad.begin(), st->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape = shape;
  t.st = std::make_shared<Storage>();
  t.st->data = st->data;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : st->data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tape::record(Tensor& out, std::vector<Tensor> parents,
                  std::function<void(TapeNode&)> backward) {
  out.ensure_grad();
  for (auto& p : parents) p.ensure_grad();
  out.node = static_cast<int>(nodes_.size());
  nodes_.push_back(TapeNode{out, std::move(parents), std::move(backward)});
}

void Tape::backward(Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward() needs a scalar loss");
  if (loss.node < 0) throw std::invalid_argument("loss is not on the tape");
  loss.ensure_grad();
  loss.st->grad[0] += 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) {
    TapeNode& n = nodes_[i];
    if (n.backward) n.backward(n);
  }
  clear();
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

}  // namespace concap::ad
