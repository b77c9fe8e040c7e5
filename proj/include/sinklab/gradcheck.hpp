#pragma once

#include <vector>

#include "sinklab/tape.hpp"

namespace sinklab {

// Validates the float32 backward pass of a recorded graph against centered
// finite differences. `build` is a generic callable (TapeT<S>&, int x_id) ->
// loss id, replayed on a double-precision tape for the difference probe so
// the oracle is not limited by float32 forward noise.
//
// Returns max over probed coordinates of
//   |analytic - central| / (|analytic| + |central| + 1e-8).
template <typename BuildFn>
double grad_check_coords(BuildFn&& build, const Tensor& x0, double h,
                         const std::vector<int>& coords) {
    if (!(h >= 1e-5 && h <= 1e-2)) throw ArgumentError("grad_check step h must lie in [1e-5, 1e-2]");

    Tape tape;
    tape.set_check_finite(true);
    const int x_id = tape.leaf(x0, true);
    const int loss = build(tape, x_id);
    if (tape.val(loss).numel() != 1) throw ArgumentError("grad_check expects a scalar-valued graph");
    tape.backward(loss);
    const std::vector<float> analytic = tape.grad(x_id);

    const TensorT<double> x0d = x0.cast<double>();
    auto eval = [&](const TensorT<double>& x) {
        TapeT<double> t;
        t.set_check_finite(true);
        const int id = t.leaf(x, false);
        return t.val(build(t, id)).data[0];
    };

    double worst = 0.0;
    for (int c : coords) {
        if (c < 0 || c >= static_cast<int>(x0.numel())) throw ArgumentError("grad_check coordinate out of range");
        TensorT<double> xp = x0d, xm = x0d;
        xp.data[static_cast<std::size_t>(c)] += h;
        xm.data[static_cast<std::size_t>(c)] -= h;
        const double central = (eval(xp) - eval(xm)) / (2.0 * h);
        const double a = static_cast<double>(analytic[static_cast<std::size_t>(c)]);
        const double rel = std::abs(a - central) / (std::abs(a) + std::abs(central) + 1e-8);
        worst = std::max(worst, rel);
    }
    return worst;
}

template <typename BuildFn>
double grad_check(BuildFn&& build, const Tensor& x0, double h) {
    std::vector<int> coords(static_cast<std::size_t>(x0.numel()));
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = static_cast<int>(i);
    return grad_check_coords(build, x0, h, coords);
}

}  // namespace sinklab
