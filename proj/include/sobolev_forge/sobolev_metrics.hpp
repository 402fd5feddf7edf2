#pragma once

// Grid estimators for W^{k,p} norms (k in {0,1}), the W^{s,inf} Hoelder
// quotient and Lipschitz constants. All are lower bounds of the true values.

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "sobolev_forge/errors.hpp"
#include "sobolev_forge/parallel.hpp"
#include "sobolev_forge/targets.hpp"

namespace sobolev_forge {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();
/// Offset added to every grid coordinate so no point sits on a breakpoint k/(3N).
inline constexpr double kGridOffset = std::numbers::sqrt2 * 1e-7;
inline constexpr double kNetworkStep = 1e-6;
inline constexpr double kSmoothStep = 1e-4;

/// Tensor midpoint grid (i + 1/2)/n + offset in each axis.
class EvalGrid {
public:
    EvalGrid(std::size_t dim, std::size_t resolution, double offset = kGridOffset)
        : dim_(dim), resolution_(resolution), offset_(offset)
    {
        if (dim == 0 || resolution == 0)
            throw PreconditionError("EvalGrid: dimension and resolution must be positive");
        std::size_t total = 1;
        for (std::size_t k = 0; k < dim; ++k)
            total *= resolution;
        points_.reserve(total);
        std::vector<std::size_t> idx(dim, 0);
        for (std::size_t p = 0; p < total; ++p) {
            std::vector<double> x(dim);
            for (std::size_t k = 0; k < dim; ++k)
                x[k] = (static_cast<double>(idx[k]) + 0.5) / static_cast<double>(resolution) + offset;
            points_.push_back(std::move(x));
            for (std::size_t k = 0; k < dim; ++k) {
                if (++idx[k] < resolution)
                    break;
                idx[k] = 0;
            }
        }
    }

    std::size_t dim() const { return dim_; }
    std::size_t resolution() const { return resolution_; }
    double offset() const { return offset_; }
    const std::vector<std::vector<double>>& points() const { return points_; }
    /// Volume of one cell, for midpoint Riemann sums.
    double cell_volume() const { return std::pow(1.0 / static_cast<double>(resolution_), static_cast<double>(dim_)); }

private:
    std::size_t dim_;
    std::size_t resolution_;
    double offset_;
    std::vector<std::vector<double>> points_;
};

/// Central difference (g(x + h e_j) - g(x - h e_j)) / 2h; probes must stay in [lo, hi].
inline double fd_partial(const Evaluator& g, std::span<const double> x, std::size_t j, double h, double lo = 0.0,
                         double hi = 1.0)
{
    if (j >= x.size())
        throw ShapeError("fd_partial: axis " + std::to_string(j) + " of a " + std::to_string(x.size()) + "-vector");
    if (x[j] - h < lo || x[j] + h > hi)
        throw PreconditionError("fd_partial: probe x_j +/- h = " + std::to_string(x[j]) + " +/- " +
                                std::to_string(h) + " leaves the domain");
    std::vector<double> p(x.begin(), x.end());
    p[j] = x[j] + h;
    const double up = g(p);
    p[j] = x[j] - h;
    const double down = g(p);
    return (up - down) / (2.0 * h);
}

/// Accumulates |values|: max for p = inf, otherwise the midpoint Riemann sum of |v|^p.
class NormAccumulator {
public:
    explicit NormAccumulator(double p) : p_(p) {}
    void add(double v)
    {
        const double a = std::abs(v);
        if (std::isinf(p_))
            acc_ = std::max(acc_, a);
        else
            acc_ += std::pow(a, p_);
    }
    void merge(const NormAccumulator& o)
    {
        if (std::isinf(p_))
            acc_ = std::max(acc_, o.acc_);
        else
            acc_ += o.acc_;
    }
    double raw() const { return acc_; }

private:
    double p_;
    double acc_ = 0.0;
};

struct GridNormParts {
    double value = 0.0;
    std::vector<double> partials;
    double total = 0.0;
};

/// Value and first-partial norms of g; partials come from `partial(x, j)`.
template <typename Partial>
GridNormParts grid_norm_parts(const Evaluator& g, Partial&& partial, int k, double p, const EvalGrid& grid)
{
    if (k != 0 && k != 1)
        throw PreconditionError("grid_norm: k must be 0 or 1, got " + std::to_string(k));
    if (!(p >= 1.0))
        throw PreconditionError("grid_norm: p must be >= 1 or infinity");
    const auto& pts = grid.points();
    const std::size_t d = grid.dim();
    const std::size_t comps = k == 1 ? d + 1 : 1;
    std::vector<std::vector<double>> vals(pts.size(), std::vector<double>(comps));
    parallel_for(pts.size(), [&](std::size_t i) {
        vals[i][0] = g(pts[i]);
        if (k == 1)
            for (std::size_t j = 0; j < d; ++j)
                vals[i][j + 1] = partial(pts[i], j);
    });
    std::vector<NormAccumulator> acc(comps, NormAccumulator(p));
    for (const auto& v : vals)
        for (std::size_t c = 0; c < comps; ++c)
            acc[c].add(v[c]);
    GridNormParts out;
    auto finish = [&](const NormAccumulator& a) {
        return std::isinf(p) ? a.raw() : std::pow(a.raw() * grid.cell_volume(), 1.0 / p);
    };
    out.value = finish(acc[0]);
    for (std::size_t c = 1; c < comps; ++c)
        out.partials.push_back(finish(acc[c]));
    if (std::isinf(p)) {
        out.total = out.value;
        for (double q : out.partials)
            out.total = std::max(out.total, q);
    } else {
        double s = std::pow(out.value, p);
        for (double q : out.partials)
            s += std::pow(q, p);
        out.total = std::pow(s, 1.0 / p);
    }
    return out;
}

/// ||g||_{W^{k,p}} on the grid; first partials by central differences with step h.
inline double grid_norm(const Evaluator& g, int k, double p, const EvalGrid& grid, double h = kNetworkStep)
{
    auto partial = [&](std::span<const double> x, std::size_t j) { return fd_partial(g, x, j, h); };
    return grid_norm_parts(g, partial, k, p, grid).total;
}

/// ||approx - f||_{W^{k,p}}: network partials by differences with step h, target partials analytic.
inline GridNormParts sobolev_error(const Evaluator& approx, const TargetFunction& f, int k, double p,
                                   const EvalGrid& grid, double h = kNetworkStep)
{
    Evaluator diff = [&](std::span<const double> x) { return approx(x) - f(x); };
    auto partial = [&](std::span<const double> x, std::size_t j) {
        MultiIndex a(x.size(), 0);
        a[j] = 1;
        return fd_partial(approx, x, j, h) - f.derivative(x, a);
    };
    return grid_norm_parts(diff, partial, k, p, grid);
}

using PointPair = std::pair<std::vector<double>, std::vector<double>>;

/// Seeded pairs in [0,1]^D: half uniform, half at log-uniform separations 1e-4..0.5.
inline std::vector<PointPair> sample_pairs(std::size_t dim, std::size_t count, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<PointPair> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<double> x(dim), y(dim);
        for (auto& v : x)
            v = u(rng);
        if (i % 2 == 0) {
            for (auto& v : y)
                v = u(rng);
        } else {
            const double r = std::pow(10.0, -4.0 + u(rng) * std::log10(0.5e4));
            std::vector<double> dir(dim);
            double nrm = 0.0;
            for (auto& v : dir) {
                v = gauss(rng);
                nrm += v * v;
            }
            nrm = std::sqrt(nrm);
            for (std::size_t k = 0; k < dim; ++k)
                y[k] = std::clamp(x[k] + r * dir[k] / nrm, 0.0, 1.0);
        }
        out.emplace_back(std::move(x), std::move(y));
    }
    return out;
}

inline double euclidean_distance(std::span<const double> x, std::span<const double> y)
{
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k)
        s += (x[k] - y[k]) * (x[k] - y[k]);
    return std::sqrt(s);
}

inline constexpr std::size_t kMinHolderPairs = 10000;

/// Per-pair values g(x), g(y) evaluated once, shared by the pairwise estimators.
struct PairValues {
    std::vector<double> gx;
    std::vector<double> gy;
    std::vector<double> dist;
};

inline PairValues evaluate_pairs(const Evaluator& g, const std::vector<PointPair>& pairs)
{
    PairValues v;
    v.gx.resize(pairs.size());
    v.gy.resize(pairs.size());
    v.dist.resize(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
        v.gx[i] = g(pairs[i].first);
        v.gy[i] = g(pairs[i].second);
        v.dist[i] = euclidean_distance(pairs[i].first, pairs[i].second);
    });
    return v;
}

inline double holder_quotient(const PairValues& v, double s)
{
    double best = 0.0;
    for (std::size_t i = 0; i < v.gx.size(); ++i)
        if (v.dist[i] > 0.0)
            best = std::max(best, std::abs(v.gx[i] - v.gy[i]) / std::pow(v.dist[i], s));
    return best;
}

/// max over pairs of |g(x)-g(y)| / |x-y|^s.
inline double holder_quotient(const Evaluator& g, double s, const std::vector<PointPair>& pairs)
{
    if (!(s > 0.0 && s < 1.0))
        throw PreconditionError("holder_quotient: s must lie in (0,1)");
    if (pairs.size() < kMinHolderPairs)
        throw PreconditionError("holder_quotient: need at least " + std::to_string(kMinHolderPairs) + " pairs, got " +
                                std::to_string(pairs.size()));
    return holder_quotient(evaluate_pairs(g, pairs), s);
}

/// Pairwise Lipschitz quotients (s = 1) without the pair-count floor.
inline double pairwise_lipschitz(const PairValues& v) { return holder_quotient(v, 1.0); }

/// Largest l2 norm of the difference gradient over the probes (probes keep h inside [0,1]).
inline double gradient_sup(const Evaluator& g, const std::vector<std::vector<double>>& probes, double h)
{
    std::vector<double> norms(probes.size(), 0.0);
    parallel_for(probes.size(), [&](std::size_t i) {
        const auto& x = probes[i];
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            if (x[j] - h < 0.0 || x[j] + h > 1.0)
                return;
            const double dj = fd_partial(g, x, j, h);
            s += dj * dj;
        }
        norms[i] = std::sqrt(s);
    });
    double best = 0.0;
    for (double n : norms)
        best = std::max(best, n);
    return best;
}

/// max(pairwise quotients, difference-gradient norms at the probes).
inline double lipschitz_estimate(const Evaluator& g, const std::vector<PointPair>& pairs,
                                 const std::vector<std::vector<double>>& probes, double h = kNetworkStep)
{
    return std::max(pairwise_lipschitz(evaluate_pairs(g, pairs)), gradient_sup(g, probes, h));
}

/// Checks |g(x)-g(y)|/|x-y|^s <= (2 sup|g|)^{1-s} L^s for every pair; returns the worst ratio lhs/rhs.
inline double interpolation_ratio(const PairValues& v, double s, double sup_abs)
{
    for (std::size_t i = 0; i < v.gx.size(); ++i)
        sup_abs = std::max({sup_abs, std::abs(v.gx[i]), std::abs(v.gy[i])});
    const double lip = pairwise_lipschitz(v);
    const double rhs = std::pow(2.0 * sup_abs, 1.0 - s) * std::pow(lip, s);
    double worst = 0.0;
    for (std::size_t i = 0; i < v.gx.size(); ++i) {
        if (v.dist[i] <= 0.0)
            continue;
        const double lhs = std::abs(v.gx[i] - v.gy[i]) / std::pow(v.dist[i], s);
        if (lhs == 0.0)
            continue;
        worst = std::max(worst, rhs > 0.0 ? lhs / rhs : kInfinity);
    }
    return worst;
}

} // namespace sobolev_forge
