#pragma once

// Target functions with analytic partial derivatives, selected by name.

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "sobolev_forge/errors.hpp"
#include "sobolev_forge/relu_calculus.hpp"

namespace sobolev_forge {

using Evaluator = std::function<double(std::span<const double>)>;

struct TargetFunction {
    std::string name;
    std::size_t dim = 1;
    int alpha = 1;
    /// Declared bound R on the W^{alpha,inf} norm after normalization.
    double norm_bound = 1.0;
    /// Divisor applied to the raw function.
    double normalization = 1.0;
    Evaluator value;
    std::function<double(std::span<const double>, const MultiIndex&)> derivative;

    double operator()(std::span<const double> x) const { return value(x); }
};

/// One-dimensional factor with derivatives of every order.
struct AxisFactor {
    std::function<double(double, int)> eval;
};

namespace detail {

inline AxisFactor constant_one()
{
    return {[](double, int k) { return k == 0 ? 1.0 : 0.0; }};
}

inline AxisFactor sine_factor(double freq)
{
    return {[freq](double x, int k) {
        const double w = 2.0 * std::numbers::pi * freq;
        return std::pow(w, k) * std::sin(w * x + k * std::numbers::pi / 2.0);
    }};
}

inline AxisFactor linear_factor()
{
    return {[](double x, int k) { return k == 0 ? x : (k == 1 ? 1.0 : 0.0); }};
}

/// Probabilists' Hermite polynomial He_n.
inline double hermite(int n, double u)
{
    double h0 = 1.0;
    if (n == 0)
        return h0;
    double h1 = u;
    for (int k = 1; k < n; ++k) {
        const double h2 = u * h1 - k * h0;
        h0 = h1;
        h1 = h2;
    }
    return h1;
}

inline AxisFactor gauss_factor(double center, double width)
{
    return {[center, width](double x, int k) {
        const double u = (x - center) / width;
        const double sign = (k % 2) ? -1.0 : 1.0;
        return sign * hermite(k, u) * std::exp(-0.5 * u * u) / std::pow(width, k);
    }};
}

/// Max over |a| <= alpha of the sup of prod_k factor_k^{(a_k)} on a 1-d grid per axis.
inline double separable_sobolev_sup(const std::vector<AxisFactor>& factors, int alpha)
{
    const int grid = 4001;
    std::vector<std::vector<double>> sup(factors.size(), std::vector<double>(alpha + 1, 0.0));
    for (std::size_t k = 0; k < factors.size(); ++k)
        for (int order = 0; order <= alpha; ++order)
            for (int i = 0; i < grid; ++i) {
                const double x = static_cast<double>(i) / (grid - 1);
                sup[k][order] = std::max(sup[k][order], std::abs(factors[k].eval(x, order)));
            }
    double best = 0.0;
    for (const auto& a : multi_indices(factors.size(), alpha)) {
        double p = 1.0;
        for (std::size_t k = 0; k < factors.size(); ++k)
            p *= sup[k][a[k]];
        best = std::max(best, p);
    }
    return best;
}

inline TargetFunction separable_target(std::string name, std::vector<AxisFactor> factors, int alpha, bool normalize)
{
    TargetFunction t;
    t.name = std::move(name);
    t.dim = factors.size();
    t.alpha = alpha;
    t.normalization = normalize ? separable_sobolev_sup(factors, alpha) : 1.0;
    if (t.normalization == 0.0)
        t.normalization = 1.0;
    auto shared = std::make_shared<std::vector<AxisFactor>>(std::move(factors));
    const double c = t.normalization;
    t.value = [shared, c](std::span<const double> x) {
        double p = 1.0;
        for (std::size_t k = 0; k < shared->size(); ++k)
            p *= (*shared)[k].eval(x[k], 0);
        return p / c;
    };
    t.derivative = [shared, c](std::span<const double> x, const MultiIndex& a) {
        double p = 1.0;
        for (std::size_t k = 0; k < shared->size(); ++k)
            p *= (*shared)[k].eval(x[k], a[k]);
        return p / c;
    };
    return t;
}

} // namespace detail

/// Constant target c (useful for partition-of-unity and reproduction checks).
inline TargetFunction constant_target(std::size_t dim, int alpha, double c)
{
    std::vector<AxisFactor> f(dim, detail::constant_one());
    auto t = detail::separable_target("constant", std::move(f), alpha, false);
    auto v = t.value;
    auto d = t.derivative;
    t.value = [v, c](std::span<const double> x) { return c * v(x); };
    t.derivative = [d, c](std::span<const double> x, const MultiIndex& a) { return c * d(x, a); };
    t.norm_bound = std::abs(c);
    return t;
}

/// x^e for a fixed multi-index e (unnormalized).
inline TargetFunction monomial_target(const MultiIndex& e, int alpha)
{
    std::vector<AxisFactor> f;
    for (int ek : e)
        f.push_back({[ek](double x, int k) {
            if (k > ek)
                return 0.0;
            double coef = 1.0;
            for (int i = 0; i < k; ++i)
                coef *= ek - i;
            return coef * std::pow(x, ek - k);
        }});
    return detail::separable_target("monomial", std::move(f), alpha, false);
}

inline const std::vector<std::string>& euclidean_target_names()
{
    static const std::vector<std::string> names{"sin2", "sinprod", "poly-xy", "gauss-bump"};
    return names;
}

/// Named Euclidean targets on (0,1)^D, divided by their W^{alpha,inf} norm.
///
///   sin2       sin(2 pi x_1)
///   sinprod    prod_k sin(2 pi x_k)
///   poly-xy    x_1 x_2            (D >= 2)
///   gauss-bump prod_k exp(-(x_k - 1/2)^2 / (2 * 0.25^2))
inline TargetFunction make_target(const std::string& name, std::size_t dim, int alpha)
{
    if (dim == 0)
        throw PreconditionError("make_target: dimension must be positive");
    if (alpha < 1)
        throw PreconditionError("make_target: alpha must be at least 1");
    std::vector<AxisFactor> f;
    if (name == "sin2") {
        f.push_back(detail::sine_factor(1.0));
        for (std::size_t k = 1; k < dim; ++k)
            f.push_back(detail::constant_one());
    } else if (name == "sinprod") {
        for (std::size_t k = 0; k < dim; ++k)
            f.push_back(detail::sine_factor(1.0));
    } else if (name == "poly-xy") {
        if (dim < 2)
            throw PreconditionError("poly-xy needs D >= 2");
        f.push_back(detail::linear_factor());
        f.push_back(detail::linear_factor());
        for (std::size_t k = 2; k < dim; ++k)
            f.push_back(detail::constant_one());
    } else if (name == "gauss-bump") {
        for (std::size_t k = 0; k < dim; ++k)
            f.push_back(detail::gauss_factor(0.5, 0.25));
    } else {
        throw PreconditionError("unknown target \"" + name + "\"");
    }
    auto t = detail::separable_target(name, std::move(f), alpha, true);
    t.norm_bound = 1.0;
    return t;
}

} // namespace sobolev_forge
