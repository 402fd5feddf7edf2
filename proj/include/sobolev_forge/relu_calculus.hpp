#pragma once

// Scalar building blocks: the trapezoid bump psi, the square approximator,
// the multiplication network and bump-times-monomial products.
//
// Every builder has a closed-form functional counterpart (`*_value`) that is
// evaluated without any network machinery; the two are compared in tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "sobolev_forge/scalar_net.hpp"

namespace sobolev_forge {

using MultiIndex = std::vector<int>;

inline int total_degree(const MultiIndex& v) { return std::accumulate(v.begin(), v.end(), 0); }

/// psi(t) = 1 on |t|<1, 2-|t| on 1<=|t|<=2, 0 beyond.
inline double psi(double t)
{
    const double a = std::abs(t);
    if (a < 1.0)
        return 1.0;
    if (a <= 2.0)
        return 2.0 - a;
    return 0.0;
}

/// Argument of the scaled bump, 3N x - 3m, rounded the same way as the network.
inline double trapezoid_argument(int m, int n, double x)
{
    const double scale = 3.0 * n;
    return scale * x + (-3.0 * m);
}

inline double trapezoid_value(int m, int n, double x) { return psi(trapezoid_argument(m, n, x)); }

/// The four-ReLU two-layer form psi(x) = R(x+2) - R(x+1) - R(x-1) + R(x-2).
inline MlpModel psi_reference_mlp()
{
    MlpModel m;
    m.weights.push_back(Matrix::from_rows({{1.0}, {1.0}, {1.0}, {1.0}}));
    m.biases.push_back({2.0, 1.0, -1.0, -2.0});
    m.weights.push_back(Matrix::from_rows({{1.0, -1.0, -1.0, 1.0}}));
    m.biases.push_back({0.0});
    return m;
}

/// psi(3N(x_axis - m/N)) as 1 - R(1 - R(2 - R(t) - R(-t))).
///
/// The clamp form is exactly 1 on the plateau and exactly 0 off the support,
/// which the zero-annihilation cascade downstream relies on.
inline ScalarNet build_trapezoid(int m, int n, std::size_t dim = 1, std::size_t axis = 0)
{
    if (n < 1 || m < 0 || m > n)
        throw PreconditionError("build_trapezoid: need 0 <= m <= N and N >= 1, got m=" + std::to_string(m) +
                                " N=" + std::to_string(n));
    if (axis >= dim)
        throw ShapeError("build_trapezoid: axis out of range");
    const double scale = 3.0 * n;
    const double shift = -3.0 * m;
    ScalarNet net;
    Matrix w1(2, dim);
    w1(0, axis) = scale;
    w1(1, axis) = -scale;
    net.mlp.weights.push_back(std::move(w1));
    net.mlp.biases.push_back({shift, -shift});
    net.mlp.weights.push_back(Matrix::from_rows({{-1.0, -1.0}}));
    net.mlp.biases.push_back({2.0});
    net.mlp.weights.push_back(Matrix::from_rows({{-1.0}}));
    net.mlp.biases.push_back({1.0});
    net.mlp.weights.push_back(Matrix::from_rows({{-1.0}}));
    net.mlp.biases.push_back({1.0});
    net.label = "psi";
    net.box_bound = 1.0;
    return net;
}

/// Tent map on [0,1]: 2t then 2-2t.
inline double tent(double t) { return t <= 0.5 ? 2.0 * t : 2.0 - 2.0 * t; }

/// Piecewise-linear interpolant of t^2 on the dyadic grid of level `levels`.
/// Beyond t = 1 the tent iterates are clipped at zero.
inline double square_interpolant(double t, int levels)
{
    double s = t;
    double g = t;
    double scale = 1.0;
    for (int k = 1; k <= levels; ++k) {
        g = tent(std::max(g, 0.0));
        scale *= 0.25;
        s -= g * scale;
    }
    return s;
}

/// Parameters shared by every sum-of-squares network: the dyadic level and gain schedule.
struct SquareSchedule {
    int levels = 1;
    double box = 1.0;
};

/// Smallest level with value error B^2 4^-m/4 <= theta and slope error B 2^-m <= theta.
inline SquareSchedule square_schedule(double theta, double b)
{
    if (!(theta > 0.0 && theta < 0.5))
        throw PreconditionError("build_square: theta must lie in (0, 1/2), got " + std::to_string(theta));
    if (!(b > 0.0))
        throw PreconditionError("build_square: B must be positive");
    SquareSchedule s{1, b};
    while (b * b * std::ldexp(1.0, -2 * s.levels - 2) > theta || b * std::ldexp(1.0, -s.levels) > theta)
        ++s.levels;
    return s;
}

/// Value error bound m -> 2^-2m-2, derivative error 2^-m for the unit-box interpolant.
inline double square_value_bound(const SquareSchedule& s) { return s.box * s.box * std::ldexp(1.0, -2 * s.levels - 2); }
inline double square_slope_bound(const SquareSchedule& s) { return s.box * std::ldexp(1.0, -s.levels); }

/// sq_B(x) = B^2 f_m(|x|/B).
inline double square_value(const SquareSchedule& s, double x)
{
    return s.box * s.box * square_interpolant(std::abs(x) / s.box, s.levels);
}

namespace detail {

/// One square branch: weight * levels-interpolant(|a.x + beta|).
struct SquareBranch {
    Vector a;
    double beta = 0.0;
    double weight = 1.0;
};

/// Builds sum_i weight_i * f_m(|a_i.x + beta_i|) with a running accumulator.
///
/// The accumulator carries gain lambda_s = min(S, 2 lambda_{s-1}) with S the
/// largest |weight|, so no layer multiplies by more than 4 and the readout
/// weight ends near 1.
inline ScalarNet sum_of_squares_net(const std::vector<SquareBranch>& branches, int levels, std::size_t n_in)
{
    const std::size_t nb = branches.size();
    double gain_target = 0.0;
    for (const auto& br : branches)
        gain_target = std::max(gain_target, std::abs(br.weight));
    if (gain_target == 0.0)
        gain_target = 1.0;

    ScalarNet net;
    // |u| = R(u) + R(-u)
    Matrix w1(2 * nb, n_in);
    Vector b1(2 * nb);
    for (std::size_t i = 0; i < nb; ++i) {
        for (std::size_t j = 0; j < n_in; ++j) {
            w1(2 * i, j) = branches[i].a[j];
            w1(2 * i + 1, j) = -branches[i].a[j];
        }
        b1[2 * i] = branches[i].beta;
        b1[2 * i + 1] = -branches[i].beta;
    }
    net.mlp.weights.push_back(std::move(w1));
    net.mlp.biases.push_back(std::move(b1));

    // units per branch: [ra, rb, acc]
    double lambda = std::min(1.0, gain_target);
    Matrix w2(3 * nb, 2 * nb);
    Vector b2(3 * nb, 0.0);
    for (std::size_t i = 0; i < nb; ++i) {
        w2(3 * i, 2 * i) = 1.0;
        w2(3 * i, 2 * i + 1) = 1.0;
        w2(3 * i + 1, 2 * i) = 1.0;
        w2(3 * i + 1, 2 * i + 1) = 1.0;
        b2[3 * i + 1] = -0.5;
        w2(3 * i + 2, 2 * i) = lambda;
        w2(3 * i + 2, 2 * i + 1) = lambda;
    }
    net.mlp.weights.push_back(std::move(w2));
    net.mlp.biases.push_back(std::move(b2));

    double quarter = 1.0;
    for (int s = 1; s <= levels; ++s) {
        quarter *= 0.25;
        const double next = std::min(gain_target, 2.0 * lambda);
        const double carry = next / lambda;
        const bool last = s == levels;
        const std::size_t per = last ? 1 : 3;
        Matrix w(per * nb, 3 * nb);
        Vector b(per * nb, 0.0);
        for (std::size_t i = 0; i < nb; ++i) {
            const std::size_t in = 3 * i;
            const std::size_t out = per * i;
            const std::size_t acc = out + per - 1;
            w(acc, in) = -2.0 * next * quarter;
            w(acc, in + 1) = 4.0 * next * quarter;
            w(acc, in + 2) = carry;
            if (!last) {
                w(out, in) = 2.0;
                w(out, in + 1) = -4.0;
                w(out + 1, in) = 2.0;
                w(out + 1, in + 1) = -4.0;
                b[out + 1] = -0.5;
            }
        }
        net.mlp.weights.push_back(std::move(w));
        net.mlp.biases.push_back(std::move(b));
        lambda = next;
    }

    Matrix wr(1, nb);
    for (std::size_t i = 0; i < nb; ++i)
        wr(0, i) = branches[i].weight / lambda;
    net.mlp.weights.push_back(std::move(wr));
    net.mlp.biases.push_back({0.0});
    return net;
}

} // namespace detail

/// sup |net - x^2| <= theta and sup |net' - 2x| <= theta on [-B, B]; net(0) = 0.
inline ScalarNet build_square(double theta, double b)
{
    const auto s = square_schedule(theta, b);
    ScalarNet net = detail::sum_of_squares_net({{{1.0 / b}, 0.0, b * b}}, s.levels, 1);
    net.accuracy = theta;
    net.box_bound = b;
    net.label = "sq";
    return net;
}

/// Multiplication network parameters: box B and dyadic level m.
struct ProductSpec {
    double box = 1.0;
    int levels = 1;
    double accuracy = 0.0;
};

/// Smallest m with value error B^2 2^-2m <= eta and derivative error 2B 2^-m <= eta.
inline ProductSpec product_spec(double eta, double b)
{
    if (!(eta > 0.0 && eta < 0.5))
        throw PreconditionError("build_product2: eta must lie in (0, 1/2), got " + std::to_string(eta));
    if (!(b > 0.0))
        throw PreconditionError("build_product2: B must be positive");
    ProductSpec p{b, 1, eta};
    while (b * b * std::ldexp(1.0, -2 * p.levels) > eta || 2.0 * b * std::ldexp(1.0, -p.levels) > eta)
        ++p.levels;
    return p;
}

/// 2B^2 (f(|x+y|/2B) - f(|x|/2B) - f(|y|/2B)), computed in closed form.
inline double product_value(const ProductSpec& p, double x, double y)
{
    const double two_b = 2.0 * p.box;
    const double s = 2.0 * p.box * p.box;
    return s * (square_interpolant(std::abs(x + y) / two_b, p.levels) -
                square_interpolant(std::abs(x) / two_b, p.levels) -
                square_interpolant(std::abs(y) / two_b, p.levels));
}

inline ScalarNet build_product2(const ProductSpec& p)
{
    const double w = 1.0 / (2.0 * p.box);
    const double s = 2.0 * p.box * p.box;
    ScalarNet net = detail::sum_of_squares_net({{{w, w}, 0.0, s}, {{w, 0.0}, 0.0, -s}, {{0.0, w}, 0.0, -s}},
                                               p.levels, 2);
    net.accuracy = p.accuracy;
    net.box_bound = p.box;
    net.label = "prod";
    return net;
}

inline ScalarNet build_product2(double eta, double b) { return build_product2(product_spec(eta, b)); }

/// g~_{m,v}: product of x^v (monomial factors first) and the D bump factors.
struct MonomialBumpSpec {
    MultiIndex m;
    MultiIndex v;
    int n = 1;
    int alpha = 1;
    double eps = 0.1;

    std::size_t dim() const { return m.size(); }
    /// Box bound alpha + D + 1 of the nested products.
    double box() const { return static_cast<double>(alpha) + static_cast<double>(dim()) + 1.0; }
};

inline void check_spec(const MonomialBumpSpec& s)
{
    if (s.m.empty() || s.m.size() != s.v.size())
        throw ShapeError("monomial bump: m and v must have the same positive length");
    if (!(s.eps > 0.0 && s.eps < 1.0))
        throw PreconditionError("monomial bump: eps must lie in (0,1), got " + std::to_string(s.eps));
    if (s.n < 1)
        throw PreconditionError("monomial bump: N must be positive");
    for (std::size_t k = 0; k < s.m.size(); ++k) {
        if (s.m[k] < 0 || s.m[k] > s.n)
            throw PreconditionError("monomial bump: m out of {0..N}");
        if (s.v[k] < 0)
            throw PreconditionError("monomial bump: negative exponent");
    }
    if (total_degree(s.v) >= s.alpha)
        throw PreconditionError("monomial bump: |v| = " + std::to_string(total_degree(s.v)) +
                                " must be below alpha = " + std::to_string(s.alpha));
}

/// The multiplication network used inside g~ (accuracy capped below 1/2).
inline ProductSpec bump_product_spec(const MonomialBumpSpec& s)
{
    return product_spec(std::min(s.eps, 0.49), s.box());
}

/// Factor list: (axis, is_bump) in nesting order.
inline std::vector<std::pair<std::size_t, bool>> bump_factors(const MonomialBumpSpec& s)
{
    std::vector<std::pair<std::size_t, bool>> f;
    for (std::size_t k = 0; k < s.dim(); ++k)
        for (int e = 0; e < s.v[k]; ++e)
            f.emplace_back(k, false);
    for (std::size_t k = 0; k < s.dim(); ++k)
        f.emplace_back(k, true);
    return f;
}

/// Functional evaluation of the first `count` factors of g~ (all when count = 0).
inline double monomial_bump_partial(const MonomialBumpSpec& s, const ProductSpec& p, std::span<const double> x,
                                    std::size_t count = 0)
{
    const auto factors = bump_factors(s);
    if (count == 0 || count > factors.size())
        count = factors.size();
    auto factor_value = [&](std::size_t i) {
        const auto [axis, bump] = factors[i];
        return bump ? trapezoid_value(s.m[axis], s.n, x[axis]) : x[axis];
    };
    double val = factor_value(0);
    for (std::size_t i = 1; i < count; ++i)
        val = product_value(p, val, factor_value(i));
    return val;
}

inline double monomial_bump_value(const MonomialBumpSpec& s, std::span<const double> x)
{
    return monomial_bump_partial(s, bump_product_spec(s), x);
}

/// phi_m(x) x^v evaluated exactly.
inline double bump_monomial_exact(const MonomialBumpSpec& s, std::span<const double> x)
{
    double val = 1.0;
    for (std::size_t k = 0; k < s.dim(); ++k)
        val *= trapezoid_value(s.m[k], s.n, x[k]) * std::pow(x[k], s.v[k]);
    return val;
}

/// Network for the first `count` factors of g~ (all when count = 0).
inline ScalarNet build_monomial_bump_partial(const MonomialBumpSpec& s, std::size_t count = 0)
{
    check_spec(s);
    const auto p = bump_product_spec(s);
    const auto factors = bump_factors(s);
    if (count == 0 || count > factors.size())
        count = factors.size();
    auto factor_net = [&](std::size_t i) {
        const auto [axis, bump] = factors[i];
        return bump ? build_trapezoid(s.m[axis], s.n, s.dim(), axis) : select_net(s.dim(), axis);
    };
    const ScalarNet prod = build_product2(p);
    ScalarNet g = factor_net(0);
    for (std::size_t i = 1; i < count; ++i)
        g = chain(prod, stack({g, factor_net(i)}));
    g.accuracy = s.eps;
    g.box_bound = s.box();
    g.label = "gtilde";
    return g;
}

inline ScalarNet build_monomial_bump(const MonomialBumpSpec& s) { return build_monomial_bump_partial(s, 0); }

/// All multi-indices v in N^D with |v| <= max_degree, in graded lexicographic order.
inline std::vector<MultiIndex> multi_indices(std::size_t dim, int max_degree)
{
    std::vector<MultiIndex> out;
    MultiIndex cur(dim, 0);
    for (int deg = 0; deg <= max_degree; ++deg) {
        std::function<void(std::size_t, int)> rec = [&](std::size_t k, int left) {
            if (k + 1 == dim) {
                cur[k] = left;
                out.push_back(cur);
                return;
            }
            for (int e = left; e >= 0; --e) {
                cur[k] = e;
                rec(k + 1, left - e);
            }
        };
        if (dim == 0)
            break;
        rec(0, deg);
    }
    return out;
}

} // namespace sobolev_forge
