#pragma once

#include "umg/ops.hpp"

namespace umg {

// Central-difference gradient check in f64. `f` maps a tensor to a scalar
// tensor and must be evaluatable both with and without an active tape.
// Returns max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).
template <typename F>
double check_gradients(F&& f, Tensor<double> point, double eps = 1e-5) {
    if (eps < 1e-7 || eps > 1e-4)
        throw ContractError("check_gradients: eps must be in [1e-7, 1e-4]");
    point.set_requires_grad(true);
    point.zero_grad();
    {
        Tape<double> tape;
        Tensor<double> loss = f(point);
        if (numel(loss.shape()) != 1)
            throw ContractError("check_gradients: f must return a scalar");
        tape.backward(loss);
    }
    std::vector<double> analytic = point.grad();
    point.set_requires_grad(false);

    double max_err = 0.0;
    auto& x = point.mutable_data();
    for (size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + eps;
        double fp = f(point).item();
        x[i] = orig - eps;
        double fm = f(point).item();
        x[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("check_gradients: non-finite function value near the point");
        const double central = (fp - fm) / (2.0 * eps);
        const double err = std::abs(analytic[i] - central) /
                           (std::abs(analytic[i]) + std::abs(central) + 1e-12);
        max_err = std::max(max_err, err);
    }
    return max_err;
}

} // namespace umg
