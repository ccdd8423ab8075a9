#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pedcross/tensor.hpp"

namespace pedcross {

// Scalar-valued function of one tensor; the tape may be null for the
// finite-difference evaluations.
using ScalarFn = std::function<Tensor(const Tensor&, Tape*)>;

// Central-difference check of the tape gradient of f at x. Returns the
// worst per-coordinate relative error |analytic - numeric| /
// max(|analytic|, |numeric|, 1e-8). Checks every coordinate.
double grad_check(const ScalarFn& f, const Tensor& x, double eps);

// Same, but probing only `max_coords` deterministically chosen
// coordinates of x (0 means all); `analytic` is the precomputed tape
// gradient for x. Used for whole-model checks where exhaustive probing
// is disproportionate.
double grad_check_coords(const ScalarFn& f, const Tensor& x, double eps,
                         const std::vector<double>& analytic, int max_coords, std::uint64_t salt);

}  // namespace pedcross
