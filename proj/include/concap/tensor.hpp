#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace concap::ad {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor of 64-bit floats. Values and gradient share one
// storage block, so every copy of a Tensor sees the same gradient buffer;
// the tape records operand copies and accumulates through them.
struct Tensor {
  struct Storage {
    std::vector<double> data;
    std::vector<double> grad;  // empty until gradients are requested
  };

  Shape shape;
  std::shared_ptr<Storage> st;
  int node = -1;  // id on the active tape, -1 when not recorded

  Tensor() = default;

  static Tensor zeros(const Shape& s);
  static Tensor full(const Shape& s, double v);
  static Tensor from(const Shape& s, std::vector<double> values);
  static Tensor scalar(double v);

  int64_t size() const { return st ? static_cast<int64_t>(st->data.size()) : 0; }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const;  // negative indices count from the back
  bool defined() const { return static_cast<bool>(st); }

  double* ptr() { return st->data.data(); }
  const double* ptr() const { return st->data.data(); }
  double& operator[](int64_t i) { return st->data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return st->data[static_cast<size_t>(i)]; }

  double value() const;  // scalar extraction, throws if size != 1

  bool has_grad() const { return st && !st->grad.empty(); }
  void ensure_grad();
  void zero_grad();
  double* grad_ptr() { return st->grad.data(); }
  const double* grad_ptr() const { return st->grad.data(); }

  Tensor clone() const;  // deep copy, detached from the tape
  bool all_finite() const;
};

struct TapeNode {
  Tensor out;
  std::vector<Tensor> parents;
  // Reads out's grad, accumulates into the parents' grads.
  std::function<void(TapeNode&)> backward;
};

class Tape {
 public:
  void record(Tensor& out, std::vector<Tensor> parents,
              std::function<void(TapeNode&)> backward);

  // Seeds d(loss)/d(loss) = 1 and sweeps the nodes in reverse; gradients
  // accumulate (sum) into every recorded tensor. Clears the tape afterwards.
  void backward(Tensor& loss);

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<TapeNode> nodes_;
};

// Thread-local active tape. Ops record themselves only while a scope is open.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace concap::ad
