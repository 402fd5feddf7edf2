#pragma once

// Compact manifolds without boundary in R^D: a small parametric kit, atlas
// and partition of unity, chart maps, chart-determination networks and the
// manifold compile pipeline with its chart-based error metric.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "sobolev_forge/errors.hpp"
#include "sobolev_forge/net_algebra.hpp"
#include "sobolev_forge/parallel.hpp"
#include "sobolev_forge/relu_calculus.hpp"
#include "sobolev_forge/scalar_net.hpp"
#include "sobolev_forge/serialization.hpp"
#include "sobolev_forge/sobolev_metrics.hpp"
#include "sobolev_forge/targets.hpp"
#include "sobolev_forge/taylor.hpp"

namespace sobolev_forge {

using PointMap = std::function<Vector(std::span<const double>)>;

struct ManifoldSpec {
    std::string name;
    std::size_t d = 1;
    std::size_t D = 2;
    double reach = 1.0;
    double box = 1.0;
    double surface_area = 0.0;
    /// u -> x(u)
    PointMap embed;
    /// x on M -> u
    PointMap param_of;
    /// Nearest point on M.
    PointMap project;
    /// x on M -> D x d matrix whose columns span the tangent space (not necessarily orthonormal).
    std::function<Matrix(std::span<const double>)> tangent;
    /// Parameters u distributed by surface measure.
    std::function<Vector(std::mt19937_64&)> sample_param;
    /// Deterministic parameters whose images are at most `spacing` apart in the ambient norm.
    std::function<std::vector<Vector>(double spacing)> dense_params;

    Vector sample(std::mt19937_64& rng) const { return embed(sample_param(rng)); }
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

inline double dist2(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

/// Modified Gram-Schmidt on the columns; throws on rank deficiency.
inline Matrix orthonormalize(const Matrix& a)
{
    Matrix q = a;
    for (std::size_t j = 0; j < q.cols(); ++j) {
        for (std::size_t i = 0; i < j; ++i) {
            double p = 0.0;
            for (std::size_t r = 0; r < q.rows(); ++r)
                p += q(r, i) * q(r, j);
            for (std::size_t r = 0; r < q.rows(); ++r)
                q(r, j) -= p * q(r, i);
        }
        double n = 0.0;
        for (std::size_t r = 0; r < q.rows(); ++r)
            n += q(r, j) * q(r, j);
        n = std::sqrt(n);
        if (!(n > 1e-12))
            throw GeometryError("orthonormalize: tangent vectors are degenerate");
        for (std::size_t r = 0; r < q.rows(); ++r)
            q(r, j) /= n;
    }
    return q;
}

/// Fixed orthonormal pair in R^D used to embed the circle.
inline std::pair<Vector, Vector> circle_plane(std::size_t dim)
{
    Matrix a(dim, 2);
    for (std::size_t i = 0; i < dim; ++i) {
        a(i, 0) = dim == 2 ? (i == 0 ? 1.0 : 0.0) : 1.0 + static_cast<double>(i);
        a(i, 1) = dim == 2 ? (i == 1 ? 1.0 : 0.0) : (i % 2 == 0 ? 1.0 : -2.0);
    }
    const Matrix q = orthonormalize(a);
    Vector q1(dim), q2(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        q1[i] = q(i, 0);
        q2[i] = q(i, 1);
    }
    return {q1, q2};
}

} // namespace detail

/// Unit circle in the plane spanned by a fixed orthonormal pair of R^D (identity plane for D = 2).
inline ManifoldSpec circle_manifold(std::size_t dim = 2)
{
    if (dim < 2)
        throw PreconditionError("circle: ambient dimension must be at least 2");
    auto [q1, q2] = detail::circle_plane(dim);
    ManifoldSpec m;
    m.name = "circle";
    m.d = 1;
    m.D = dim;
    m.reach = 1.0;
    m.box = 1.0;
    m.surface_area = 2.0 * std::numbers::pi;
    m.embed = [q1, q2](std::span<const double> u) {
        Vector x(q1.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] = q1[i] * std::cos(u[0]) + q2[i] * std::sin(u[0]);
        return x;
    };
    m.param_of = [q1, q2](std::span<const double> x) {
        return Vector{std::atan2(detail::dot(q2, x), detail::dot(q1, x))};
    };
    m.project = [q1, q2](std::span<const double> x) {
        const double a = detail::dot(q1, x);
        const double b = detail::dot(q2, x);
        const double n = std::hypot(a, b);
        if (n == 0.0)
            throw GeometryError("circle: projection of a point on the axis is not unique");
        Vector y(q1.size());
        for (std::size_t i = 0; i < y.size(); ++i)
            y[i] = (q1[i] * a + q2[i] * b) / n;
        return y;
    };
    m.tangent = [q1, q2](std::span<const double> x) {
        const double a = detail::dot(q1, x);
        const double b = detail::dot(q2, x);
        Matrix t(q1.size(), 1);
        for (std::size_t i = 0; i < q1.size(); ++i)
            t(i, 0) = -b * q1[i] + a * q2[i];
        return t;
    };
    m.sample_param = [](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
        return Vector{u(rng)};
    };
    m.dense_params = [](double spacing) {
        const auto n = static_cast<std::size_t>(std::ceil(2.0 * std::numbers::pi / spacing));
        std::vector<Vector> out;
        for (std::size_t i = 0; i < n; ++i)
            out.push_back({-std::numbers::pi + 2.0 * std::numbers::pi * static_cast<double>(i) / n});
        return out;
    };
    return m;
}

/// Unit sphere S^2 in R^3, parameters (polar, azimuth).
inline ManifoldSpec sphere_manifold()
{
    ManifoldSpec m;
    m.name = "sphere";
    m.d = 2;
    m.D = 3;
    m.reach = 1.0;
    m.box = 1.0;
    m.surface_area = 4.0 * std::numbers::pi;
    m.embed = [](std::span<const double> u) {
        return Vector{std::sin(u[0]) * std::cos(u[1]), std::sin(u[0]) * std::sin(u[1]), std::cos(u[0])};
    };
    m.param_of = [](std::span<const double> x) {
        return Vector{std::acos(std::clamp(x[2], -1.0, 1.0)), std::atan2(x[1], x[0])};
    };
    m.project = [](std::span<const double> x) {
        const double n = std::sqrt(detail::dot(x, x));
        if (n == 0.0)
            throw GeometryError("sphere: projection of the origin is not unique");
        return Vector{x[0] / n, x[1] / n, x[2] / n};
    };
    // The polar Jacobian degenerates at the poles; project the two coordinate
    // axes least aligned with x onto the tangent plane instead.
    m.tangent = [](std::span<const double> x) {
        std::array<std::size_t, 3> order{0, 1, 2};
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::abs(x[a]) < std::abs(x[b]); });
        Matrix t(3, 2);
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t i = 0; i < 3; ++i)
                t(i, c) = (i == order[c] ? 1.0 : 0.0) - x[order[c]] * x[i];
        return t;
    };
    m.sample_param = [](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> z(-1.0, 1.0);
        std::uniform_real_distribution<double> phi(-std::numbers::pi, std::numbers::pi);
        const double c = z(rng);
        return Vector{std::acos(c), phi(rng)};
    };
    m.dense_params = [](double spacing) {
        // Fibonacci lattice
        const auto n = static_cast<std::size_t>(std::ceil(4.0 * std::numbers::pi / (spacing * spacing)));
        const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
        std::vector<Vector> out;
        for (std::size_t i = 0; i < n; ++i) {
            const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
            out.push_back({std::acos(z), std::remainder(golden * static_cast<double>(i), 2.0 * std::numbers::pi)});
        }
        return out;
    };
    return m;
}

/// Flat torus S^1 x S^1 in R^4 (unit radii), parameters (a, b).
inline ManifoldSpec torus_manifold()
{
    ManifoldSpec m;
    m.name = "torus";
    m.d = 2;
    m.D = 4;
    m.reach = 1.0;
    m.box = 1.0;
    m.surface_area = 4.0 * std::numbers::pi * std::numbers::pi;
    m.embed = [](std::span<const double> u) {
        return Vector{std::cos(u[0]), std::sin(u[0]), std::cos(u[1]), std::sin(u[1])};
    };
    m.param_of = [](std::span<const double> x) { return Vector{std::atan2(x[1], x[0]), std::atan2(x[3], x[2])}; };
    m.project = [](std::span<const double> x) {
        const double a = std::hypot(x[0], x[1]);
        const double b = std::hypot(x[2], x[3]);
        if (a == 0.0 || b == 0.0)
            throw GeometryError("torus: projection is not unique");
        return Vector{x[0] / a, x[1] / a, x[2] / b, x[3] / b};
    };
    m.tangent = [](std::span<const double> x) {
        Matrix t(4, 2);
        t(0, 0) = -x[1];
        t(1, 0) = x[0];
        t(2, 1) = -x[3];
        t(3, 1) = x[2];
        return t;
    };
    m.sample_param = [](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
        const double a = u(rng);
        return Vector{a, u(rng)};
    };
    m.dense_params = [](double spacing) {
        const auto n = static_cast<std::size_t>(std::ceil(2.0 * std::numbers::pi / spacing));
        std::vector<Vector> out;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out.push_back({-std::numbers::pi + 2.0 * std::numbers::pi * static_cast<double>(i) / n,
                               -std::numbers::pi + 2.0 * std::numbers::pi * static_cast<double>(j) / n});
        return out;
    };
    return m;
}

inline ManifoldSpec make_manifold(const std::string& name, std::size_t ambient = 3)
{
    if (name == "circle")
        return circle_manifold(ambient);
    if (name == "sphere")
        return sphere_manifold();
    if (name == "torus")
        return torus_manifold();
    throw PreconditionError("unknown manifold \"" + name + "\"");
}

/// Orthonormal tangent frame at a point of M.
inline Matrix tangent_frame(const ManifoldSpec& m, std::span<const double> x)
{
    return detail::orthonormalize(m.tangent(x));
}

/// Reach lower bound inf |y - x|^2 / (2 dist(y - x, T_x M)) over seeded pairs.
///
/// Pairs mix global partners with neighbours along each parameter axis at
/// several scales, which is where the infimum sits for the kit manifolds.
inline double estimate_reach(const ManifoldSpec& m, std::size_t base_points = 400, std::uint64_t seed = 11)
{
    std::mt19937_64 rng(seed);
    double best = kInfinity;
    auto consider = [&](const Vector& x, const Matrix& v, const Vector& y) {
        Vector diff(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            diff[i] = y[i] - x[i];
        const double len2 = detail::dot(diff, diff);
        if (len2 < 1e-16)
            return;
        Vector normal = diff;
        for (std::size_t c = 0; c < v.cols(); ++c) {
            double p = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i)
                p += v(i, c) * diff[i];
            for (std::size_t i = 0; i < x.size(); ++i)
                normal[i] -= p * v(i, c);
        }
        const double nn = std::sqrt(detail::dot(normal, normal));
        if (nn > 1e-14 * std::sqrt(len2))
            best = std::min(best, len2 / (2.0 * nn));
    };
    for (std::size_t b = 0; b < base_points; ++b) {
        const Vector u = m.sample_param(rng);
        const Vector x = m.embed(u);
        const Matrix v = tangent_frame(m, x);
        for (int rep = 0; rep < 8; ++rep)
            consider(x, v, m.sample(rng));
        for (std::size_t k = 0; k < m.d; ++k)
            for (double t : {1e-3, 1e-2, 0.1, 0.5}) {
                Vector w = u;
                w[k] += t;
                consider(x, v, m.embed(w));
            }
    }
    return best;
}

/// phi(x) = a V^T (x - c) + b on U = B_r(c) cap M.
struct Chart {
    Vector center;
    Matrix frame;
    double scale = 1.0;
    Vector shift;
    double radius = 0.0;
};

inline Vector chart_apply(const Chart& c, std::span<const double> x)
{
    Vector z(c.frame.cols());
    for (std::size_t j = 0; j < z.size(); ++j) {
        double p = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            p += c.frame(i, j) * (x[i] - c.center[i]);
        z[j] = c.scale * p + c.shift[j];
    }
    return z;
}

/// Chart coordinates of x; x must lie in the chart ball.
inline Vector chart_project(const Chart& c, std::span<const double> x)
{
    if (x.size() != c.center.size())
        throw ShapeError("chart_project: point length " + std::to_string(x.size()) + " vs D=" +
                         std::to_string(c.center.size()));
    if (detail::dist2(x, c.center) > c.radius * c.radius * (1.0 + 1e-12))
        throw PreconditionError("chart_project: point lies outside the chart ball");
    return chart_apply(c, x);
}

/// Point of M in the chart ball with chart coordinates z, by projected fixed-point iteration.
inline Vector chart_invert(const Chart& c, const ManifoldSpec& m, std::span<const double> z)
{
    const std::size_t d = c.frame.cols();
    const std::size_t dim = c.center.size();
    Vector s(d);
    double s2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        s[j] = (z[j] - c.shift[j]) / c.scale;
        s2 += s[j] * s[j];
    }
    if (s2 > c.radius * c.radius * (1.0 + 1e-12))
        throw GeometryError("chart_invert: coordinates lie outside the chart image");
    Vector y(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        y[i] = c.center[i];
        for (std::size_t j = 0; j < d; ++j)
            y[i] += c.frame(i, j) * s[j];
    }
    Vector x = m.project(y);
    for (int it = 0;; ++it) {
        // y = x + V (s - V^T (x - c)), then back onto M
        y = x;
        double res = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double p = 0.0;
            for (std::size_t i = 0; i < dim; ++i)
                p += c.frame(i, j) * (x[i] - c.center[i]);
            const double e = s[j] - p;
            res = std::max(res, std::abs(e));
            for (std::size_t i = 0; i < dim; ++i)
                y[i] += c.frame(i, j) * e;
        }
        if (res <= 1e-15)
            break;
        if (it == 200)
            throw GeometryError("chart_invert: no convergence");
        x = m.project(y);
    }
    if (detail::dist2(x, c.center) > c.radius * c.radius * (1.0 + 1e-9))
        throw GeometryError("chart_invert: preimage leaves the chart ball");
    return x;
}

/// Circle only: inverse by angle recovery, theta = theta_c + asin((z - b)/a).
inline Vector circle_chart_invert(const Chart& c, const ManifoldSpec& circle, std::span<const double> z)
{
    if (circle.name != "circle")
        throw PreconditionError("circle_chart_invert: manifold is not the circle");
    const double s = (z[0] - c.shift[0]) / c.scale;
    if (std::abs(s) > c.radius)
        throw GeometryError("chart_invert: coordinates lie outside the chart image");
    const double theta_c = circle.param_of(c.center)[0];
    const double theta = theta_c + std::asin(s);
    return circle.embed(std::span<const double>(&theta, 1));
}

struct Atlas {
    std::vector<Chart> charts;
    double radius = 0.0;
    double inner_radius = 0.0;
    std::size_t intrinsic_dim = 1;
    std::size_t ambient_dim = 2;
    /// Average number of inner balls holding a sample of M.
    double mean_multiplicity = 0.0;
    /// ceil(SA(M) / inner_radius^d * mean_multiplicity).
    double count_bound = 0.0;

    std::size_t size() const { return charts.size(); }
};

namespace detail {

/// Uniform hash grid over ambient space for radius queries.
class CellIndex {
public:
    explicit CellIndex(double cell) : cell_(cell) {}

    void insert(std::span<const double> x, std::size_t id) { cells_[key(cell_of(x))].push_back(id); }

    template <typename Fn>
    void near(std::span<const double> x, Fn&& fn) const
    {
        const auto base = cell_of(x);
        std::vector<long long> cur(base.size());
        std::vector<int> off(base.size(), -1);
        for (;;) {
            for (std::size_t i = 0; i < base.size(); ++i)
                cur[i] = base[i] + off[i];
            if (auto it = cells_.find(key(cur)); it != cells_.end())
                for (std::size_t id : it->second)
                    fn(id);
            std::size_t k = 0;
            while (k < off.size() && ++off[k] == 2)
                off[k++] = -1;
            if (k == off.size())
                break;
        }
    }

private:
    std::vector<long long> cell_of(std::span<const double> x) const
    {
        std::vector<long long> c(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            c[i] = static_cast<long long>(std::floor(x[i] / cell_));
        return c;
    }
    static std::string key(const std::vector<long long>& c)
    {
        std::string s;
        for (long long v : c)
            s += std::to_string(v) + ',';
        return s;
    }

    double cell_;
    std::unordered_map<std::string, std::vector<std::size_t>> cells_;
};

} // namespace detail

/// Greedy cover of M by balls of radius r/2 and charts of radius r with a = 1/(2r), b = 1/2.
///
/// Centres are taken from a dense deterministic sample in order, a sample
/// becoming a centre when no centre is within 0.85 r/2 of it; coverage is
/// then checked on `check_samples` seeded random points.
inline Atlas build_atlas(const ManifoldSpec& m, double r, std::size_t check_samples = 10000, std::uint64_t seed = 5)
{
    if (!(r > 0.0 && r < m.reach / 4.0))
        throw PreconditionError("build_atlas: radius must satisfy 0 < r < reach/4 = " + std::to_string(m.reach / 4.0) +
                                ", got " + std::to_string(r));
    Atlas atlas;
    atlas.radius = r;
    atlas.inner_radius = r / 2.0;
    atlas.intrinsic_dim = m.d;
    atlas.ambient_dim = m.D;
    const double rt = atlas.inner_radius;
    const double keep = 0.85 * rt;

    detail::CellIndex index(rt);
    std::vector<Vector> centers;
    for (const auto& u : m.dense_params(0.1 * rt)) {
        const Vector x = m.embed(u);
        bool covered = false;
        index.near(x, [&](std::size_t id) {
            if (!covered && detail::dist2(x, centers[id]) < keep * keep)
                covered = true;
        });
        if (covered)
            continue;
        index.insert(x, centers.size());
        centers.push_back(x);
    }
    for (const auto& c : centers) {
        Chart ch;
        ch.center = c;
        ch.frame = tangent_frame(m, c);
        ch.scale = 1.0 / (2.0 * r);
        ch.shift.assign(m.d, 0.5);
        ch.radius = r;
        atlas.charts.push_back(std::move(ch));
    }

    std::mt19937_64 rng(seed);
    std::size_t hits = 0;
    for (std::size_t s = 0; s < check_samples; ++s) {
        const Vector x = m.sample(rng);
        std::size_t count = 0;
        index.near(x, [&](std::size_t id) {
            if (detail::dist2(x, centers[id]) < rt * rt)
                ++count;
        });
        if (count == 0)
            throw GeometryError("build_atlas: covering failed at a sampled point");
        hits += count;
    }
    atlas.mean_multiplicity = check_samples ? static_cast<double>(hits) / static_cast<double>(check_samples) : 0.0;
    atlas.count_bound = std::ceil(m.surface_area / std::pow(rt, static_cast<double>(m.d)) * atlas.mean_multiplicity);
    return atlas;
}

inline json to_json(const Atlas& a)
{
    json charts = json::array();
    for (const auto& c : a.charts)
        charts.push_back({{"center", c.center}, {"frame", detail::matrix_to_json(c.frame)}, {"scale", c.scale},
                          {"shift", c.shift}});
    return json{{"version", kFormatVersion}, {"d", a.intrinsic_dim}, {"D", a.ambient_dim}, {"radius", a.radius},
                {"inner_radius", a.inner_radius}, {"mean_multiplicity", a.mean_multiplicity},
                {"count_bound", a.count_bound}, {"charts", charts}};
}

/// h_i(x) = (1 - |x - c_i|^2 / rt^2)_+^3.
inline double rho_kernel(const Atlas& a, std::size_t i, std::span<const double> x)
{
    const double t = 1.0 - detail::dist2(x, a.charts[i].center) / (a.inner_radius * a.inner_radius);
    return t > 0.0 ? t * t * t : 0.0;
}

/// Partition of unity rho_i = h_i / sum_j h_j.
inline Vector rho_weights(const Atlas& a, std::span<const double> x)
{
    Vector w(a.size());
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        w[i] = rho_kernel(a, i, x);
        total += w[i];
    }
    if (!(total > 0.0))
        throw GeometryError("rho_weights: no inner ball contains the point (covering bug)");
    for (auto& v : w)
        v /= total;
    return w;
}

inline double rho_weight(const Atlas& a, std::size_t i, std::span<const double> x)
{
    const double hi = rho_kernel(a, i, x);
    if (hi == 0.0)
        return 0.0;
    double total = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j)
        total += rho_kernel(a, j, x);
    return hi / total;
}

/// Lower-Lipschitz constant of phi^-1: min |x - y| / |phi(x) - phi(y)| over sampled pairs in each chart.
inline double lower_lipschitz(const Atlas& a, const ManifoldSpec& m, std::size_t pairs_per_chart = 64,
                              std::uint64_t seed = 3)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double best = kInfinity;
    for (const auto& c : a.charts) {
        auto draw = [&] {
            for (;;) {
                Vector z(m.d);
                double s2 = 0.0;
                for (auto& v : z) {
                    v = u(rng);
                    s2 += (v - 0.5) * (v - 0.5);
                }
                if (s2 < 0.25 * 0.98)
                    return z;
            }
        };
        for (std::size_t p = 0; p < pairs_per_chart; ++p) {
            const Vector z1 = draw();
            const Vector z2 = draw();
            const double dz = std::sqrt(detail::dist2(z1, z2));
            if (dz < 1e-9)
                continue;
            const Vector x1 = chart_invert(c, m, z1);
            const Vector x2 = chart_invert(c, m, z2);
            best = std::min(best, std::sqrt(detail::dist2(x1, x2)) / dz);
        }
    }
    return best;
}

/// Squared-distance net: sum_j sq_{2B}(x_j - c_j) with per-coordinate accuracy theta min(1, 4B^2).
struct SqDistSpec {
    Vector center;
    double theta = 0.1;
    double box = 1.0;

    SquareSchedule schedule() const
    {
        return square_schedule(theta * std::min(1.0, 4.0 * box * box), 2.0 * box);
    }
    /// 4 B^2 D theta.
    double bound() const { return 4.0 * box * box * static_cast<double>(center.size()) * theta; }
};

inline double sqdist_value(const SqDistSpec& s, const SquareSchedule& sched, std::span<const double> x)
{
    double sum = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j)
        sum += square_value(sched, x[j] - s.center[j]);
    return sum;
}

inline double sqdist_value(const SqDistSpec& s, std::span<const double> x)
{
    return sqdist_value(s, s.schedule(), x);
}

inline ScalarNet build_sqdist_net(const Vector& center, double theta, double b)
{
    if (!(theta > 0.0 && theta < 0.5))
        throw PreconditionError("build_sqdist_net: theta must lie in (0, 1/2), got " + std::to_string(theta));
    if (!(b > 0.0))
        throw PreconditionError("build_sqdist_net: B must be positive");
    const SqDistSpec spec{center, theta, b};
    const auto sched = spec.schedule();
    const double w = 1.0 / (2.0 * b);
    std::vector<detail::SquareBranch> branches;
    for (std::size_t j = 0; j < center.size(); ++j) {
        Vector a(center.size(), 0.0);
        a[j] = w;
        branches.push_back({a, -(w * center[j]), 4.0 * b * b});
    }
    ScalarNet net = detail::sum_of_squares_net(branches, sched.levels, center.size());
    net.accuracy = spec.bound();
    net.box_bound = b;
    net.label = "sqdist";
    return net;
}

struct IndicatorParams {
    double radius = 0.1;
    double transition = 0.001;
    double theta = 1e-5;
    double box = 1.0;
    std::size_t dim = 2;

    /// w = ceil(log2(r^2 / Delta)).
    int levels() const
    {
        return static_cast<int>(std::ceil(std::log2(radius * radius / transition) - 1e-12));
    }
    /// R' = r^2 - 4 B^2 D theta.
    double effective_radius2() const
    {
        return radius * radius - 4.0 * box * box * static_cast<double>(dim) * theta;
    }
    /// Upper end (1 - 2^-w) R' of the plateau where the indicator is 1.
    double plateau_end() const { return (1.0 - std::ldexp(1.0, -levels())) * effective_radius2(); }
};

inline void check_indicator(const IndicatorParams& p)
{
    if (!(p.radius > 0.0 && p.transition > 0.0 && p.theta > 0.0 && p.box > 0.0) || p.dim == 0)
        throw PreconditionError("indicator: parameters must be positive");
    if (!(p.transition < p.radius * p.radius))
        throw PreconditionError("indicator: Delta must be below r^2");
    if (p.transition < 8.0 * p.box * p.box * static_cast<double>(p.dim) * p.theta * (1.0 - 1e-12))
        throw PreconditionError("indicator: Delta >= 8 B^2 D theta is violated");
}

/// 1 for a <= (1 - 2^-w) R', 0 for a >= R', linear between.
inline double indicator_value(const IndicatorParams& p, double a)
{
    const double t = std::ldexp((-1.0 / p.effective_radius2()) * a + 1.0, p.levels());
    return std::clamp(t, 0.0, 1.0);
}

/// Clamp of t = 2^w (1 - a/R'): the doubling runs on a (+,-) pair so weights stay at 2.
inline ScalarNet build_indicator(const IndicatorParams& p)
{
    check_indicator(p);
    const int w = p.levels();
    const double inv = -1.0 / p.effective_radius2();
    ScalarNet net;
    auto& mlp = net.mlp;
    mlp.weights.push_back(Matrix::from_rows({{inv}, {-inv}}));
    mlp.biases.push_back({1.0, -1.0});
    for (int s = 0; s < w; ++s) {
        mlp.weights.push_back(Matrix::from_rows({{2.0, -2.0}, {-2.0, 2.0}}));
        mlp.biases.push_back({0.0, 0.0});
    }
    // u = R(t), v = R(1 - u), out = 1 - v
    mlp.weights.push_back(Matrix::from_rows({{1.0, -1.0}}));
    mlp.biases.push_back({0.0});
    mlp.weights.push_back(Matrix::from_rows({{-1.0}}));
    mlp.biases.push_back({1.0});
    mlp.weights.push_back(Matrix::from_rows({{-1.0}}));
    mlp.biases.push_back({1.0});
    net.accuracy = 0.0;
    net.box_bound = p.radius * p.radius;
    net.label = "indicator";
    return net;
}

/// A function on M given through ambient coordinates.
struct ManifoldTarget {
    std::string name;
    std::string manifold;
    int alpha = 2;
    Evaluator value;

    double operator()(std::span<const double> x) const { return value(x); }
};

inline const std::vector<std::string>& manifold_target_names()
{
    static const std::vector<std::string> names{"circle-sin", "sphere-harmonic"};
    return names;
}

/// Named targets on the kit manifolds, unit W^{alpha,inf}(M) scale:
///
///   circle-sin       sin(theta) on the circle, i.e. q2 . x
///   sphere-harmonic  x_1 x_2 on S^2 (a degree-2 spherical harmonic)
inline ManifoldTarget make_manifold_target(const std::string& name, const ManifoldSpec& m, int alpha)
{
    if (alpha < 1)
        throw PreconditionError("make_manifold_target: alpha must be at least 1");
    ManifoldTarget t;
    t.name = name;
    t.manifold = m.name;
    t.alpha = alpha;
    if (name == "circle-sin") {
        if (m.name != "circle")
            throw PreconditionError("circle-sin needs the circle manifold");
        const Vector q2 = detail::circle_plane(m.D).second;
        t.value = [q2](std::span<const double> x) { return detail::dot(q2, x); };
    } else if (name == "sphere-harmonic") {
        if (m.name != "sphere")
            throw PreconditionError("sphere-harmonic needs the sphere manifold");
        t.value = [](std::span<const double> x) { return x[0] * x[1]; };
    } else {
        throw PreconditionError("unknown manifold target \"" + name + "\"");
    }
    return t;
}

namespace detail {

/// Central-difference stencil (offsets in units of h, weights, divisor power) for order 1..4.
inline std::vector<std::pair<int, double>> fd_stencil(int order)
{
    switch (order) {
    case 1:
        return {{-1, -0.5}, {1, 0.5}};
    case 2:
        return {{-1, 1.0}, {0, -2.0}, {1, 1.0}};
    case 3:
        return {{-2, -0.5}, {-1, 1.0}, {1, -1.0}, {2, 0.5}};
    case 4:
        return {{-2, 1.0}, {-1, -4.0}, {0, 6.0}, {1, -4.0}, {2, 1.0}};
    default:
        throw PreconditionError("fd_derivative: order " + std::to_string(order) + " is not supported");
    }
}

/// D^a F(z) by tensor-product central differences with step h.
inline double fd_derivative(const Evaluator& f, std::span<const double> z, const MultiIndex& a, double h)
{
    std::size_t axis = 0;
    while (axis < a.size() && a[axis] == 0)
        ++axis;
    if (axis == a.size())
        return f(z);
    MultiIndex rest = a;
    rest[axis] = 0;
    const int order = a[axis];
    std::vector<double> p(z.begin(), z.end());
    double s = 0.0;
    for (const auto& [off, w] : fd_stencil(order)) {
        p[axis] = z[axis] + off * h;
        s += w * fd_derivative(f, p, rest, h);
    }
    return s / std::pow(h, order);
}

} // namespace detail

/// Evaluator of the manifold construction, shared by the functional path and the builders of the compiled path.
struct ManifoldModel {
    ManifoldSpec manifold;
    std::shared_ptr<const Atlas> atlas;
    int n = 2;
    int alpha = 2;
    double eta = 0.25;
    /// Accuracy of the outer multiplication g~ x~ indicator.
    double delta = 0.1;
    IndicatorParams indicator;
    ProductSpec bump_product;
    ProductSpec outer_product;
    SquareSchedule sq_schedule;
    std::vector<MultiIndex> exponents;
    /// Per chart, after boundary-band zeroing.
    std::vector<SurrogateCoefficients> coefficients;

    MonomialBumpSpec bump_spec(const MultiIndex& m, std::size_t j) const
    {
        return {m, exponents[j], n, alpha, eta};
    }

    /// Chart indicator 1~_Delta(d~^2_i(x)).
    double chart_indicator(std::size_t i, std::span<const double> x) const
    {
        const SqDistSpec sd{atlas->charts[i].center, indicator.theta, manifold.box};
        return indicator_value(indicator, sqdist_value(sd, sq_schedule, x));
    }

    /// f~_i(x) = sum c_{i,m,v} x~(g~_{m,v}(phi_i(x)), 1~_i(x)).
    double chart_term(std::size_t i, std::span<const double> x) const
    {
        const Chart& ch = atlas->charts[i];
        // beyond the ball the net indicator is exactly 0 since d~^2 >= d^2 - 4B^2 D theta
        if (detail::dist2(x, ch.center) > ch.radius * ch.radius + 1e-12)
            return 0.0;
        const double ind = chart_indicator(i, x);
        if (ind == 0.0)
            return 0.0;
        const Vector z = chart_apply(ch, x);
        const auto& c = coefficients[i];
        double sum = 0.0;
        for (const auto& m : candidate_bumps(n, z)) {
            const std::size_t base = c.linear(m) * exponents.size();
            for (std::size_t j = 0; j < exponents.size(); ++j) {
                const double cv = c.values[base + j];
                if (cv == 0.0)
                    continue;
                const double g = monomial_bump_partial(bump_spec(m, j), bump_product, z);
                sum += cv * product_value(outer_product, g, ind);
            }
        }
        return sum;
    }

    double operator()(std::span<const double> x) const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < atlas->size(); ++i)
            s += chart_term(i, x);
        return s;
    }

    /// Nonzero (grid index, exponent index) pairs of chart i.
    std::vector<std::pair<std::size_t, std::size_t>> terms(std::size_t i) const
    {
        std::vector<std::pair<std::size_t, std::size_t>> t;
        const auto& c = coefficients[i];
        for (std::size_t g = 0; g < c.grid_size(); ++g)
            for (std::size_t j = 0; j < exponents.size(); ++j)
                if (c.values[g * exponents.size() + j] != 0.0)
                    t.emplace_back(g, j);
        return t;
    }

    /// Chart-determination net 1~_Delta o d~^2_i on ambient inputs.
    ScalarNet indicator_net(std::size_t i) const
    {
        return compose(build_indicator(indicator), build_sqdist_net(atlas->charts[i].center, indicator.theta,
                                                                    manifold.box));
    }

    /// c x~(g~_{m,v} o phi_i, 1~_i) on ambient inputs.
    ScalarNet summand_net(std::size_t i, std::size_t grid_index, std::size_t j, const ScalarNet& ind) const
    {
        const Chart& ch = atlas->charts[i];
        const std::size_t d = manifold.d;
        const std::size_t dim = manifold.D;
        Matrix w(d, dim);
        Vector b(d);
        for (std::size_t r = 0; r < d; ++r) {
            double off = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                w(r, k) = ch.scale * ch.frame(k, r);
                off += ch.frame(k, r) * ch.center[k];
            }
            b[r] = ch.shift[r] - ch.scale * off;
        }
        const auto& c = coefficients[i];
        const ScalarNet g = compose(build_monomial_bump(bump_spec(c.unlinear(grid_index), j)),
                                    affine_net(std::move(w), std::move(b), "chart"));
        ScalarNet net = chain(build_product2(outer_product), stack({g, ind}));
        return scale_output(std::move(net), c.values[grid_index * exponents.size() + j]);
    }
};

struct ManifoldOptions {
    double radius = 0.2;
    /// Cap on Delta as a fraction of r^2.
    double transition_cap = 0.4;
    /// Lower floor for the multiplication accuracy delta.
    double delta_floor = 1e-10;
    bool compile = false;
    std::size_t k = 2;
    std::size_t check_points = 16;
    std::uint64_t seed = 7;
};

struct ManifoldApproximator : ConstructedApproximator {
    std::shared_ptr<const ManifoldModel> model;
};

namespace detail {

/// True when some point of the cube of radius 1/N around m/N maps outside the indicator plateau.
inline bool touches_band(const Chart& ch, const ManifoldSpec& m, const MultiIndex& mi, int n, double limit2)
{
    const std::size_t d = mi.size();
    Vector z(d);
    for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
        for (std::size_t k = 0; k < d; ++k)
            z[k] = (static_cast<double>(mi[k]) + (((corner >> k) & 1U) ? 1.0 : -1.0)) / n;
        try {
            const Vector x = chart_invert(ch, m, z);
            if (dist2(x, ch.center) > limit2)
                return true;
        } catch (const GeometryError&) {
            return true;
        }
    }
    return false;
}

} // namespace detail

/// Compiles a function on M: N = floor((Mt Jt)^{1/d}), eta = N^-alpha,
/// delta = max(N^-(alpha+d+1), floor), Delta = min(8 c2 r / N, cap r^2),
/// theta = Delta / (8 B^2 D).
inline ManifoldApproximator build_manifold_approx(const ManifoldTarget& f, const ManifoldSpec& m, long long mt,
                                                  long long jt, const ManifoldOptions& opt = {})
{
    if (f.manifold != m.name)
        throw PreconditionError("build_manifold_approx: target lives on " + f.manifold + ", not " + m.name);
    if (mt < 1 || jt < 1)
        throw PreconditionError("build_manifold_approx: Mt and Jt must be positive");
    const int n = grid_resolution(mt, jt, m.d);
    if (n < 2)
        throw PreconditionError("build_manifold_approx: N = floor((Mt Jt)^{1/d}) must be at least 2");

    auto model = std::make_shared<ManifoldModel>();
    model->manifold = m;
    model->atlas = std::make_shared<Atlas>(build_atlas(m, opt.radius));
    const Atlas& atlas = *model->atlas;
    const double r = opt.radius;
    const double c2 = lower_lipschitz(atlas, m);
    const double paper_transition = 8.0 * c2 * r / n;
    const double transition = std::min(paper_transition, opt.transition_cap * r * r);
    const double theta = transition / (8.0 * m.box * m.box * static_cast<double>(m.D));
    const double raw_delta = std::pow(static_cast<double>(n), -(f.alpha + static_cast<int>(m.d) + 1));

    model->n = n;
    model->alpha = f.alpha;
    model->eta = std::pow(static_cast<double>(n), -f.alpha);
    model->delta = std::max(raw_delta, opt.delta_floor);
    model->indicator = {r, transition, theta, m.box, m.D};
    check_indicator(model->indicator);
    model->exponents = multi_indices(m.d, f.alpha - 1);
    const MonomialBumpSpec proto{MultiIndex(m.d, 0), MultiIndex(m.d, 0), n, f.alpha, model->eta};
    model->bump_product = bump_product_spec(proto);
    model->outer_product = product_spec(std::min(model->delta, 0.49), proto.box());
    model->sq_schedule = SqDistSpec{Vector(m.D, 0.0), theta, m.box}.schedule();

    // Bumps whose cube reaches where d^2 exceeds min(r^2 - Delta, plateau end) are zeroed.
    const double limit2 = std::min(r * r - transition, model->indicator.plateau_end());
    const double step = 1e-4 * r;
    std::size_t zeroed = 0;
    double zeroed_max = 0.0;
    double kept_max = 0.0;
    model->coefficients.resize(atlas.size());
    for (std::size_t i = 0; i < atlas.size(); ++i) {
        const Chart& ch = atlas.charts[i];
        TargetFunction pull;
        pull.name = f.name + "@chart";
        pull.dim = m.d;
        pull.alpha = f.alpha;
        pull.value = [&, i](std::span<const double> z) {
            Vector x;
            try {
                x = chart_invert(ch, m, z);
            } catch (const GeometryError&) {
                return 0.0;
            }
            const double w = rho_weight(atlas, i, x);
            return w == 0.0 ? 0.0 : f(x) * w;
        };
        pull.derivative = [&pull, step](std::span<const double> z, const MultiIndex& a) {
            const int order = total_degree(a);
            const double h = order <= 2 ? step : (order == 3 ? 20.0 * step : 100.0 * step);
            return detail::fd_derivative(pull.value, z, a, h);
        };
        auto coeffs = taylor_coeffs(pull, n);
        const std::size_t nv = coeffs.exponents.size();
        for (std::size_t g = 0; g < coeffs.grid_size(); ++g) {
            const MultiIndex mi = coeffs.unlinear(g);
            bool any = false;
            for (std::size_t j = 0; j < nv; ++j)
                any = any || coeffs.values[g * nv + j] != 0.0;
            if (!any)
                continue;
            if (detail::touches_band(ch, m, mi, n, limit2)) {
                for (std::size_t j = 0; j < nv; ++j) {
                    zeroed_max = std::max(zeroed_max, std::abs(coeffs.values[g * nv + j]));
                    coeffs.values[g * nv + j] = 0.0;
                    ++zeroed;
                }
            } else {
                for (std::size_t j = 0; j < nv; ++j)
                    kept_max = std::max(kept_max, std::abs(coeffs.values[g * nv + j]));
            }
        }
        model->coefficients[i] = std::move(coeffs);
    }
    if (zeroed_max > 1e-6 * std::max(1.0, kept_max))
        throw PreconditionError("build_manifold_approx: spacing condition violated, a bump reaching the transition "
                                "band carries coefficient " +
                                std::to_string(zeroed_max) + " (N too small for Delta)");

    ManifoldApproximator out;
    out.model = model;
    out.functional = [model](std::span<const double> x) { return (*model)(x); };

    BuildRecord& rec = out.record;
    rec.target = f.name;
    rec.kind = "manifold";
    rec.dim = m.D;
    rec.n = n;
    rec.alpha = f.alpha;
    rec.mt = mt;
    rec.jt = jt;
    rec.eta = model->eta;
    rec.eps = model->bump_product.accuracy;
    rec.charts = atlas.size();
    rec.delta = model->delta;
    rec.delta_floor_applied = raw_delta < opt.delta_floor ? opt.delta_floor : 0.0;
    rec.transition = transition;
    rec.theta = theta;
    rec.levels = model->indicator.levels();
    rec.c2 = c2;
    rec.zeroed_coefficients = zeroed;
    for (const auto& c : model->coefficients)
        rec.max_coefficient = std::max(rec.max_coefficient, c.max_abs());

    std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>> terms;
    for (std::size_t i = 0; i < atlas.size(); ++i)
        for (const auto& t : model->terms(i))
            terms.push_back({i, t});
    rec.summands = terms.size();
    if (!opt.compile)
        return out;
    if (terms.empty()) {
        out.network = detail::zero_network(m.D);
        out.audit = audit_class(*out.network);
        return out;
    }
    std::vector<ScalarNet> indicators(atlas.size());
    parallel_for(atlas.size(), [&](std::size_t i) { indicators[i] = model->indicator_net(i); });
    out.network = detail::compile_terms(
        terms.size(),
        [&](std::size_t t) {
            const auto& [i, gj] = terms[t];
            return model->summand_net(i, gj.first, gj.second, indicators[i]);
        },
        std::min(opt.k, m.D), jt, rec);
    out.audit = audit_class(*out.network);

    std::mt19937_64 rng(opt.seed);
    std::vector<std::vector<double>> probes;
    for (std::size_t s = 0; s < opt.check_points; ++s)
        probes.push_back(m.sample(rng));
    for (std::size_t i = 0; i < std::min<std::size_t>(atlas.size(), 4); ++i)
        probes.push_back(atlas.charts[i].center);
    rec.compile_check_error = detail::compile_check(*out.network, out.functional, m.D, 0, opt.seed, probes);
    rec.compile_check_points = probes.size();
    return out;
}

struct ManifoldNorm {
    double value = 0.0;
    /// Grid points where chart inversion failed (counted as zero).
    std::size_t skipped = 0;
};

/// sum_i ||(e rho_i) o phi_i^-1||_{W^{k,inf}} over a midpoint grid of each chart domain.
inline ManifoldNorm manifold_norm(const Evaluator& e, const Atlas& a, const ManifoldSpec& m, int k,
                                  std::size_t resolution = 0, double h = kNetworkStep)
{
    if (k != 0 && k != 1)
        throw PreconditionError("manifold_norm: k must be 0 or 1");
    if (resolution == 0)
        resolution = m.d == 1 ? 2000 : 120;
    const EvalGrid grid(m.d, resolution);
    ManifoldNorm out;
    std::atomic<std::size_t> skipped{0};
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Chart& ch = a.charts[i];
        Evaluator pulled = [&, i](std::span<const double> z) {
            double s2 = 0.0;
            for (std::size_t j = 0; j < z.size(); ++j) {
                const double s = (z[j] - ch.shift[j]) / ch.scale;
                s2 += s * s;
            }
            if (s2 > ch.radius * ch.radius)
                return 0.0;
            Vector x;
            try {
                x = chart_invert(ch, m, z);
            } catch (const GeometryError&) {
                ++skipped;
                return 0.0;
            }
            const double w = rho_weight(a, i, x);
            return w == 0.0 ? 0.0 : e(x) * w;
        };
        out.value += grid_norm(pulled, k, kInfinity, grid, h);
    }
    out.skipped = skipped;
    return out;
}

} // namespace sobolev_forge
