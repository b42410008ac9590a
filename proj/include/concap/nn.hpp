#pragma once

#include <string>
#include <utility>
#include <vector>

#include "concap/ops.hpp"
#include "concap/rng.hpp"
#include "concap/tensor.hpp"

namespace concap::nn {

using ad::Tensor;

// Named parameter registry; sorted by name for checkpointing and the
// optimizer so that iteration order never depends on construction details.
struct Params {
  std::vector<std::pair<std::string, Tensor*>> items;
  void add(const std::string& name, Tensor* t) { items.emplace_back(name, t); }
  void sort_by_name();
  void zero_grad();
  Tensor* find(const std::string& name);
};

// Weights uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)); biases zero.
Tensor init_weight(Rng& rng, int rows, int cols, int fan_in);
Tensor init_embedding(Rng& rng, int rows, int d);  // fan_in = d

struct Linear {
  Tensor w;  // [in, out], applied as x @ w + b
  Tensor b;  // [out]
};
Linear make_linear(Rng& rng, int in, int out);
Tensor linear(const Tensor& x, const Linear& l);
void collect(Linear& l, const std::string& prefix, Params& out);

struct LayerNorm {
  Tensor gain, bias;
};
LayerNorm make_layer_norm(int d);
Tensor layer_norm(const Tensor& x, const LayerNorm& ln);
void collect(LayerNorm& l, const std::string& prefix, Params& out);

struct Attention {
  Linear q, k, v, o;
  int heads = 1;
};
Attention make_attention(Rng& rng, int d_model, int heads);
void collect(Attention& a, const std::string& prefix, Params& out);

// Scaled dot-product attention per head, heads concatenated, output
// projection. With causal=true an additive -1e9 mask hides positions j > i
// (query and key lengths must match).
Tensor attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                 const Attention& p, bool causal = false);

struct Ffn {
  Linear fc1, fc2;
};
Ffn make_ffn(Rng& rng, int d_model, int hidden);
Tensor ffn(const Tensor& x, const Ffn& f);
void collect(Ffn& f, const std::string& prefix, Params& out);

}  // namespace concap::nn
