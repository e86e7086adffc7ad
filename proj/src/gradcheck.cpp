#include "dasd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dasd/errors.hpp"

namespace dasd {

namespace {

double eval_scalar(const GraphFn& fn, std::span<const Tensor> leaves) {
    Tensor out = fn(leaves);
    if (out.size() != 1) throw NotScalar("finite_difference_check: graph must output a scalar");
    return out.value();
}

GradCheckResult run_check(const GraphFn& fn, std::span<const Tensor> leaves, double eps,
                          std::size_t stride) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) {
        throw InvalidValue("finite_difference_check: eps must lie in [1e-7, 1e-3]");
    }
    // Analytic pass: fresh tape, gradient-enabled leaf copies.
    std::vector<Tensor> grad_leaves;
    grad_leaves.reserve(leaves.size());
    for (const auto& t : leaves) {
        grad_leaves.push_back(Tensor::from_data(t.shape(), t.data(), /*requires_grad=*/true));
    }
    GradTape tape;
    std::vector<std::vector<double>> analytic(leaves.size());
    {
        TapeScope scope(tape);
        Tensor loss = fn(grad_leaves);
        if (loss.size() != 1) throw NotScalar("finite_difference_check: graph must output a scalar");
        backward(loss, tape);
    }
    for (std::size_t i = 0; i < grad_leaves.size(); ++i) {
        if (grad_leaves[i].grad().has_value()) {
            analytic[i] = *grad_leaves[i].grad();
        } else {
            analytic[i].assign(grad_leaves[i].size(), 0.0);  // unreachable leaf
        }
    }

    // Numeric pass: tape-free perturbed evaluations.
    std::vector<Tensor> probe;
    probe.reserve(leaves.size());
    for (const auto& t : leaves) probe.push_back(t.detach());

    GradCheckResult result;
    for (std::size_t li = 0; li < probe.size(); ++li) {
        std::vector<double> base = probe[li].data();
        for (std::size_t ci = 0; ci < base.size(); ci += stride) {
            double saved = base[ci];
            base[ci] = saved + eps;
            probe[li] = Tensor::from_data(probe[li].shape(), base);
            double up = eval_scalar(fn, probe);
            base[ci] = saved - eps;
            probe[li] = Tensor::from_data(probe[li].shape(), base);
            double down = eval_scalar(fn, probe);
            base[ci] = saved;
            probe[li] = Tensor::from_data(probe[li].shape(), base);

            double numeric = (up - down) / (2.0 * eps);
            double a = analytic[li][ci];
            double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            result.max_rel_error = std::max(result.max_rel_error, rel);
            result.coordinates += 1;
        }
    }
    return result;
}

}  // namespace

GradCheckResult finite_difference_check(const GraphFn& fn, std::span<const Tensor> leaves,
                                        double eps) {
    return run_check(fn, leaves, eps, 1);
}

GradCheckResult finite_difference_check_sampled(const GraphFn& fn, std::span<const Tensor> leaves,
                                                double eps, std::size_t stride) {
    return run_check(fn, leaves, eps, std::max<std::size_t>(1, stride));
}

}  // namespace dasd
