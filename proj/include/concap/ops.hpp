#pragma once

#include <cstdint>
#include <vector>

#include "concap/tensor.hpp"

namespace concap::ad {

// When enabled, every op throws if it produces a non-finite value.
void set_finite_checks(bool on);
bool finite_checks();

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor add_bias(const Tensor& a, const Tensor& bias);  // bias over last dim

// Batched contraction over the last two dims; leading dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose2(const Tensor& a);  // swap the last two dims
Tensor reshape(const Tensor& a, const Shape& s);

// Row gather from a rank-2 tensor; backward scatter-adds. Also serves as
// embedding lookup.
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);

Tensor slice_last(const Tensor& a, int start, int len);       // rank-2
Tensor concat_last(const std::vector<Tensor>& parts);         // rank-2

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Stabilized by max subtraction. axis may be -1/last or, for rank-2, 0.
Tensor softmax(const Tensor& a, int axis = -1);

// Row-normalized over the 0/1 support only; zero outside it. Every row of
// the support must have at least one nonzero entry.
Tensor masked_softmax(const Tensor& scores, const std::vector<uint8_t>& support);

// Zero mean / unit variance over the last axis, then gain/bias affine.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Column-wise max of a rank-2 tensor; subgradient flows to the first argmax.
Tensor max_axis0(const Tensor& a, std::vector<int>* argmax = nullptr);

// Mean negative log-softmax probability of the targets over non-pad rows.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     int pad_id);

// Multi-label asymmetric loss, mean over elements. Positives weighted by
// (1-p)^gamma_pos, negatives by (p-clip_margin)_+^gamma_neg on the shifted
// probability. Probabilities are clamped to [1e-7, 1-1e-7].
Tensor asymmetric_loss(const Tensor& probs, const Tensor& labels,
                       double gamma_pos, double gamma_neg, double clip_margin);

}  // namespace concap::ad
