#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "robustreid/dual.hpp"
#include "robustreid/errors.hpp"

namespace robustreid {

// One-step gradient descent producing the temporary parameters; the input
// vector is untouched.
inline std::vector<double> temp_params(std::span<const double> theta_g,
                                       std::span<const double> grad, double alpha) {
    if (theta_g.size() != grad.size())
        throw ShapeMismatch("temp_params: theta and gradient sizes differ");
    std::vector<double> out(theta_g.size());
    for (size_t i = 0; i < theta_g.size(); ++i) {
        if (!std::isfinite(grad[i])) throw NonFiniteGradient("temp_params: non-finite gradient");
        out[i] = theta_g[i] - alpha * grad[i];
    }
    return out;
}

struct MetaEval {
    double loss = 0.0;        // L_meta-train(theta) + L_meta-test(theta_temp)
    double loss_train = 0.0;
    double loss_test = 0.0;
    std::vector<double> grad;  // d loss / d theta, through the inner gradient
};

// Self-meta objective: L_tr(theta) + L_te(theta - alpha * grad L_tr(theta)).
//
// The gradient is
//   grad L_tr(theta) + (I - alpha * H_tr(theta)) * grad L_te(theta_temp),
// with the Hessian-vector product H_tr * g_te obtained exactly by re-running
// the analytic train gradient on Dual parameters seeded with g_te
// (forward-over-reverse). first_order drops the Hessian term, treating the
// inner gradient as a constant.
//
// Loss functors expose `T eval(const std::vector<T>& theta, std::vector<T>& grad) const`
// for T in {double, Dual}.
template <class TrainFn, class TestFn>
MetaEval self_meta_eval(const TrainFn& train_fn, const TestFn& test_fn,
                        std::span<const double> theta, double alpha, bool first_order) {
    size_t n = theta.size();
    std::vector<double> th(theta.begin(), theta.end());

    std::vector<double> g_tr(n, 0.0);
    MetaEval r;
    r.loss_train = train_fn.eval(th, g_tr);

    std::vector<double> theta_temp = temp_params(theta, g_tr, alpha);
    std::vector<double> g_te(n, 0.0);
    r.loss_test = test_fn.eval(theta_temp, g_te);

    r.loss = r.loss_train + r.loss_test;
    r.grad.resize(n);
    for (size_t i = 0; i < n; ++i) r.grad[i] = g_tr[i] + g_te[i];

    if (!first_order && alpha != 0.0) {
        std::vector<Dual> theta_dual(n), g_dual(n, Dual(0.0));
        for (size_t i = 0; i < n; ++i) theta_dual[i] = Dual(th[i], g_te[i]);
        train_fn.eval(theta_dual, g_dual);
        for (size_t i = 0; i < n; ++i) r.grad[i] -= alpha * g_dual[i].d;  // -alpha * H_tr * g_te
    }
    for (double g : r.grad)
        if (!std::isfinite(g)) throw NonFiniteGradient("self_meta_eval: non-finite gradient");
    return r;
}

}  // namespace robustreid
