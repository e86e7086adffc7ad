#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dasd/tensor.hpp"

namespace dasd {

// Builds a scalar output from the given leaves. Called repeatedly with
// perturbed leaf values, so it must be a pure function of them.
using GraphFn = std::function<Tensor(std::span<const Tensor>)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
};

// Central-difference oracle: runs the graph once with autodiff to collect
// analytic leaf gradients, then re-evaluates tape-free at x +/- eps per
// coordinate. Error metric is |analytic - numeric| / max(1, |analytic|).
// Non-differentiable points (relu kinks, clamp edges) are the caller's
// responsibility to avoid; exact ties in l1_distance agree by convention.
GradCheckResult finite_difference_check(const GraphFn& fn, std::span<const Tensor> leaves,
                                        double eps = 1e-5);

// Same oracle restricted to a deterministic sample of coordinates; used
// for graphs too large to probe exhaustively. stride picks every n-th
// coordinate of each leaf (stride 1 = full check).
GradCheckResult finite_difference_check_sampled(const GraphFn& fn, std::span<const Tensor> leaves,
                                                double eps, std::size_t stride);

}  // namespace dasd
