#pragma once

#include <functional>
#include <string>
#include <vector>

#include "concap/tensor.hpp"

namespace concap::ad {

// Central-difference gradient check. f recomputes the scalar loss from the
// current contents of x (and anything else it captures); the analytic
// gradient comes from one taped backward pass. Returns
// max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-8).
double finite_difference_check(const std::function<Tensor()>& f, Tensor& x,
                               double eps = 1e-5);

// Same, restricted to a subset of coordinates of x.
double finite_difference_check_coords(const std::function<Tensor()>& f, Tensor& x,
                                      const std::vector<int64_t>& coords,
                                      double eps = 1e-5);

// A named gradient-check suite; run() returns the max relative error over
// the suite's cases and tol is the pass threshold.
struct GradSuite {
  std::string name;
  double tol;
  std::function<double()> run;
};

const std::vector<GradSuite>& gradcheck_suites();

}  // namespace concap::ad
