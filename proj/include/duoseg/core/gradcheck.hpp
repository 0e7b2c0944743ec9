#pragma once

#include <functional>
#include <string>
#include <vector>

#include "duoseg/core/ops.hpp"

namespace duoseg {

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0.0;
    bool ok(double tol = 1e-4) const { return max_rel_err < tol; }
};

namespace detail {

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max(std::abs(analytic) + std::abs(numeric), 1e-3);
    return std::abs(analytic - numeric) / denom;
}

}  // namespace detail

// Compares reverse-mode gradients of a scalar loss against central
// differences (relative step 1e-5) for every element of every input.
// Runs in 64-bit; loss_fn must recompute the loss from the current input
// values each call.
template <class LossFn>
GradCheckReport grad_check(const std::string& name, LossFn loss_fn,
                           std::vector<Tensor<double>> inputs) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tensor<double> loss = loss_fn();
    backward(loss);

    std::vector<ArrayX<double>> analytic;
    for (auto& t : inputs)
        analytic.push_back(t.has_grad() ? t.grad() : ArrayX<double>::Zero(t.numel()));

    GradCheckReport report{name, 0.0};
    NoGradGuard ng;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        auto& t = inputs[ti];
        for (Index i = 0; i < t.numel(); ++i) {
            const double v = t.values()[i];
            const double h = 1e-5 * std::max(1.0, std::abs(v));
            t.values()[i] = v + h;
            const double lp = loss_fn().item();
            t.values()[i] = v - h;
            const double lm = loss_fn().item();
            t.values()[i] = v;
            const double numeric = (lp - lm) / (2.0 * h);
            report.max_rel_err = std::max(report.max_rel_err, detail::rel_err(analytic[ti][i], numeric));
        }
    }
    return report;
}

namespace detail {

inline Tensor<double> random_tensor(const Shape& s, Pcg32& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor<double>::uniform(s, rng, lo, hi);
}

// Values bounded away from zero, for ops with a kink at the origin.
inline Tensor<double> random_signed_away_from_zero(const Shape& s, Pcg32& rng) {
    Tensor<double> t = Tensor<double>::uninit(s);
    for (Index i = 0; i < t.numel(); ++i) {
        const double mag = 0.2 + 0.8 * rng.uniform();
        t.values()[i] = rng.bernoulli(0.5f) ? mag : -mag;
    }
    return t;
}

// Projects a tensor output to a scalar so every element contributes.
inline Tensor<double> project(const Tensor<double>& out, const Tensor<double>& p) {
    return sum_all(hadamard(out, p));
}

}  // namespace detail

// Central-difference checks for every differentiable op in the library, on
// small random shapes. Shared by the gradcheck CLI command and the tests.
inline std::vector<GradCheckReport> gradcheck_battery(std::uint64_t seed = 17) {
    using T = Tensor<double>;
    std::vector<GradCheckReport> reports;
    Pcg32 rng = derive_rng(seed, 0);

    {
        T a = detail::random_tensor(Shape{2, 3, 4, 4}, rng);
        T b = detail::random_tensor(Shape{2, 3, 4, 4}, rng);
        T p = detail::random_tensor(Shape{2, 3, 4, 4}, rng);
        reports.push_back(grad_check(
            "add", [&] { return detail::project(add(a, b), p); }, {a, b}));
    }
    {
        T a = detail::random_tensor(Shape{3, 4}, rng);
        T p = detail::random_tensor(Shape{3, 4}, rng);
        reports.push_back(grad_check(
            "scale", [&] { return detail::project(scale(a, 1.7), p); }, {a}));
    }
    {
        T a = detail::random_signed_away_from_zero(Shape{2, 3, 4, 4}, rng);
        T p = detail::random_tensor(Shape{2, 3, 4, 4}, rng);
        reports.push_back(grad_check(
            "relu", [&] { return detail::project(relu(a), p); }, {a}));
    }
    {
        T a = detail::random_tensor(Shape{2, 4, 3, 3}, rng, -2.0, 2.0);
        T p = detail::random_tensor(Shape{2, 4, 3, 3}, rng);
        reports.push_back(grad_check(
            "sigmoid", [&] { return detail::project(sigmoid(a), p); }, {a}));
    }
    {
        T a = detail::random_tensor(Shape{2, 3, 4, 4}, rng);
        T b = detail::random_tensor(Shape{2, 1, 4, 4}, rng);
        T p = detail::random_tensor(Shape{2, 3, 4, 4}, rng);
        reports.push_back(grad_check(
            "hadamard", [&] { return detail::project(hadamard(a, b), p); }, {a, b}));
    }
    {
        T a = detail::random_tensor(Shape{3, 4}, rng);
        T b = detail::random_tensor(Shape{4, 5}, rng);
        T p = detail::random_tensor(Shape{3, 5}, rng);
        reports.push_back(grad_check(
            "matmul", [&] { return detail::project(matmul(a, b), p); }, {a, b}));
    }
    {
        T a = detail::random_tensor(Shape{3, 5}, rng);
        T p = detail::random_tensor(Shape{5, 3}, rng);
        reports.push_back(grad_check(
            "transpose", [&] { return detail::project(transpose(a), p); }, {a}));
    }
    {
        T a = detail::random_tensor(Shape{2, 3, 4}, rng);
        T p = detail::random_tensor(Shape{4, 6}, rng);
        reports.push_back(grad_check(
            "reshape", [&] { return detail::project(reshape(a, Shape{4, 6}), p); }, {a}));
    }
    {
        T a = detail::random_tensor(Shape{2, 2, 3, 3}, rng);
        T b = detail::random_tensor(Shape{2, 3, 3, 3}, rng);
        T c = detail::random_tensor(Shape{2, 1, 3, 3}, rng);
        T p = detail::random_tensor(Shape{2, 6, 3, 3}, rng);
        reports.push_back(grad_check(
            "concat", [&] { return detail::project(concat<double>({a, b, c}, 1), p); }, {a, b, c}));
    }
    {
        T a = detail::random_tensor(Shape{2, 3, 6, 4}, rng);
        T p = detail::random_tensor(Shape{2, 3, 3, 4}, rng);
        reports.push_back(grad_check(
            "slice", [&] { return detail::project(slice(a, 2, 2, 3), p); }, {a}));
    }
    {
        T a = detail::random_tensor(Shape{2, 5, 3, 3}, rng, -3.0, 3.0);
        T p = detail::random_tensor(Shape{2, 5, 3, 3}, rng);
        reports.push_back(grad_check(
            "softmax", [&] { return detail::project(softmax(a, 1), p); }, {a}));
    }
    {
        T a = detail::random_tensor(Shape{2, 6, 3, 3}, rng);
        T p = detail::random_tensor(Shape{2, 6, 3, 3}, rng);
        reports.push_back(grad_check(
            "l2_normalize", [&] { return detail::project(l2_normalize(a, 1), p); }, {a}));
    }
    {
        // Spread values so the argmax is stable under the FD perturbation.
        T a = Tensor<double>::uninit(Shape{2, 4, 3, 3});
        for (Index i = 0; i < a.numel(); ++i)
            a.values()[i] = rng.uniform() + 0.01 * static_cast<double>((i * 7) % 23);
        T p = detail::random_tensor(Shape{2, 1, 3, 3}, rng);
        reports.push_back(grad_check(
            "reduce_max", [&] { return detail::project(reduce_max(a, 1), p); }, {a}));
    }
    {
        T a = detail::random_tensor(Shape{2, 3, 4, 4}, rng);
        T p = detail::random_tensor(Shape{2, 3, 1, 1}, rng);
        reports.push_back(grad_check(
            "mean_spatial", [&] { return detail::project(mean_spatial(a), p); }, {a}));
    }
    {
        T a = detail::random_tensor(Shape{3, 4}, rng);
        reports.push_back(grad_check(
            "sum_all", [&] { return sum_all(a); }, {a}));
    }
    {
        T x = detail::random_tensor(Shape{2, 3, 6, 6}, rng);
        T w = detail::random_tensor(Shape{4, 3, 3, 3}, rng, -0.5, 0.5);
        T b = detail::random_tensor(Shape{4}, rng, -0.5, 0.5);
        T p = detail::random_tensor(Shape{2, 4, 3, 3}, rng);
        reports.push_back(grad_check(
            "conv2d", [&] { return detail::project(conv2d(x, w, b, 2, 1, 1), p); }, {x, w, b}));
    }
    {
        T x = detail::random_tensor(Shape{1, 2, 6, 6}, rng);
        T w = detail::random_tensor(Shape{3, 2, 3, 3}, rng, -0.5, 0.5);
        T b = detail::random_tensor(Shape{3}, rng, -0.5, 0.5);
        T p = detail::random_tensor(Shape{1, 3, 6, 6}, rng);
        reports.push_back(grad_check(
            "conv2d_dilated", [&] { return detail::project(conv2d(x, w, b, 1, 2, 2), p); },
            {x, w, b}));
    }
    {
        T x = detail::random_tensor(Shape{2, 6, 4, 4}, rng);
        T ga = detail::random_tensor(Shape{6}, rng, 0.5, 1.5);
        T be = detail::random_tensor(Shape{6}, rng, -0.5, 0.5);
        T p = detail::random_tensor(Shape{2, 6, 4, 4}, rng);
        reports.push_back(grad_check(
            "group_norm", [&] { return detail::project(group_norm(x, 3, ga, be), p); },
            {x, ga, be}));
    }
    {
        T x = detail::random_tensor(Shape{1, 2, 3, 3}, rng);
        T p = detail::random_tensor(Shape{1, 2, 5, 7}, rng);
        reports.push_back(grad_check(
            "bilinear_up", [&] { return detail::project(bilinear_resize(x, 5, 7), p); }, {x}));
    }
    {
        T x = detail::random_tensor(Shape{2, 2, 6, 6}, rng);
        T p = detail::random_tensor(Shape{2, 2, 3, 2}, rng);
        reports.push_back(grad_check(
            "bilinear_down", [&] { return detail::project(bilinear_resize(x, 3, 2), p); }, {x}));
    }
    {
        T z = detail::random_tensor(Shape{2, 4, 3, 3}, rng, -2.0, 2.0);
        LabelMap t = LabelMap::zeros(Shape{2, 3, 3});
        for (auto& v : t.v) v = static_cast<std::int32_t>(rng.uniform_int(4));
        reports.push_back(grad_check(
            "cross_entropy", [&] { return cross_entropy(z, t); }, {z}));
    }
    return reports;
}

}  // namespace duoseg
