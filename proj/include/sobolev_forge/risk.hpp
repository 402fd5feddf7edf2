#pragma once

// Monte Carlo studies of the empirical residual (Bernstein event) and of the
// adversarial-risk gap R(f~, delta) - R(f~, 0) for a constructed approximator.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "sobolev_forge/errors.hpp"
#include "sobolev_forge/parallel.hpp"
#include "sobolev_forge/sobolev_metrics.hpp"
#include "sobolev_forge/taylor.hpp"

namespace sobolev_forge {

enum class Loss { absolute, squared };

struct AdversarialBudget {
    std::size_t directions = 64;
    std::size_t sweeps = 20;
    /// Random directions are tried at radii delta 2^-k, k < ladder.
    int ladder = 6;
    std::uint64_t seed = 17;
};

struct RiskConfig {
    std::size_t samples = 2000;
    double sigma = 0.2;
    double eps = 0.1;
    double loss_lipschitz = 1.0;
    std::size_t repetitions = 200;
    std::uint64_t seed = 1;
    /// Added to the Lipschitz bound in the Bernstein event.
    double lipschitz_slack = 0.05;
    std::size_t mc_samples = 100000;
    std::vector<double> deltas{0.01, 0.02, 0.05};
    std::size_t adversarial_samples = 500;
    AdversarialBudget budget;
};

inline void check_risk_config(const RiskConfig& c)
{
    if (c.samples == 0 || c.repetitions == 0)
        throw PreconditionError("risk: sample and repetition counts must be positive");
    if (!(c.sigma >= 0.0))
        throw PreconditionError("risk: sigma must be nonnegative");
    if (!(c.eps > 0.0 && c.eps < 1.0))
        throw PreconditionError("risk: eps must lie in (0,1)");
    if (c.sigma > 0.0 && !(c.eps < std::min(c.sigma, 1.0)))
        throw PreconditionError("risk: the Bernstein study needs 0 < eps < min(sigma, 1)");
    if (!(c.loss_lipschitz >= 0.0))
        throw PreconditionError("risk: loss Lipschitz constant must be nonnegative");
    for (double d : c.deltas)
        if (!(d >= 0.0))
            throw PreconditionError("risk: adversarial radii must be nonnegative");
}

/// 1 - exp(-3 n eps^2 / (104 sigma^4)).
inline double bernstein_floor(std::size_t n, double eps, double sigma)
{
    if (sigma == 0.0)
        return 1.0;
    return 1.0 - std::exp(-3.0 * static_cast<double>(n) * eps * eps / (104.0 * std::pow(sigma, 4)));
}

/// 1 + sqrt(D) eps^{(alpha-1)/alpha}.
inline double lipschitz_bound(std::size_t dim, int alpha, double eps)
{
    return 1.0 + std::sqrt(static_cast<double>(dim)) * std::pow(eps, static_cast<double>(alpha - 1) / alpha);
}

/// Mt with Mt Jt = ceil(eps^{-D/alpha}) and Jt = 1.
inline long long risk_network_size(double eps, std::size_t dim, int alpha)
{
    const double target = std::ceil(std::pow(eps, -static_cast<double>(dim) / alpha) - 1e-9);
    return std::max<long long>(static_cast<long long>(target), 1LL << dim);
}

namespace detail {

/// Independent engine for stream `index` of a study seeded with `seed`.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
    return std::mt19937_64(seq);
}

inline std::vector<double> uniform_point(std::mt19937_64& rng, std::size_t dim)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> x(dim);
    for (auto& v : x)
        v = u(rng);
    return x;
}

} // namespace detail

struct ResidualReport {
    double success_fraction = 0.0;
    double theoretical_floor = 0.0;
    double residual_threshold = 0.0;
    double mean_residual = 0.0;
    double max_residual = 0.0;
    double lipschitz = 0.0;
    double lipschitz_limit = 0.0;
    /// Monte Carlo E[(f~(x) - y)^2] and its standard error.
    double expected_sq_error = 0.0;
    double expected_sq_stderr = 0.0;
    double expected_bound = 0.0;
    double sup_error = 0.0;
    std::vector<double> residuals;
};

/// Draws R data sets y_i = f(x_i) + xi_i, xi ~ U[-sigma, sigma], and counts repetitions whose
/// residual (1/n) sum (f~(x_i) - y_i)^2 is at most 2 eps^2 + sigma^2 with Lip(f~) within bound.
inline ResidualReport empirical_residual_study(const RiskConfig& cfg, const TargetFunction& f,
                                               const ConstructedApproximator& approx)
{
    check_risk_config(cfg);
    const std::size_t dim = f.dim;
    ResidualReport rep;
    rep.theoretical_floor = bernstein_floor(cfg.samples, cfg.eps, cfg.sigma);
    rep.residual_threshold = 2.0 * cfg.eps * cfg.eps + cfg.sigma * cfg.sigma;
    rep.expected_bound = cfg.eps * cfg.eps + cfg.sigma * cfg.sigma;

    {
        std::vector<std::vector<double>> probes;
        auto rng = detail::stream_rng(cfg.seed, 0, 1);
        for (std::size_t i = 0; i < 2000; ++i)
            probes.push_back(detail::uniform_point(rng, dim));
        rep.lipschitz = lipschitz_estimate(approx.functional, sample_pairs(dim, 20000, cfg.seed), probes);
        rep.lipschitz_limit = lipschitz_bound(dim, f.alpha, cfg.eps) + cfg.lipschitz_slack;
        const EvalGrid grid(dim, dim == 1 ? 4000 : (dim == 2 ? 200 : 30));
        rep.sup_error = sobolev_error(approx.functional, f, 0, kInfinity, grid).total;
    }

    rep.residuals.assign(cfg.repetitions, 0.0);
    parallel_for(cfg.repetitions, [&](std::size_t r) {
        auto rng = detail::stream_rng(cfg.seed, r, 2);
        std::uniform_real_distribution<double> xi(-cfg.sigma, cfg.sigma);
        double s = 0.0;
        for (std::size_t i = 0; i < cfg.samples; ++i) {
            const auto x = detail::uniform_point(rng, dim);
            const double y = f(x) + (cfg.sigma > 0.0 ? xi(rng) : 0.0);
            const double e = approx(x) - y;
            s += e * e;
        }
        rep.residuals[r] = s / static_cast<double>(cfg.samples);
    });
    std::size_t ok = 0;
    const bool lip_ok = rep.lipschitz <= rep.lipschitz_limit;
    for (double v : rep.residuals) {
        rep.mean_residual += v;
        rep.max_residual = std::max(rep.max_residual, v);
        if (v <= rep.residual_threshold && lip_ok)
            ++ok;
    }
    rep.mean_residual /= static_cast<double>(cfg.repetitions);
    rep.success_fraction = static_cast<double>(ok) / static_cast<double>(cfg.repetitions);

    const std::size_t chunks = 64;
    std::vector<double> sum(chunks, 0.0), sum2(chunks, 0.0);
    parallel_for(chunks, [&](std::size_t c) {
        auto rng = detail::stream_rng(cfg.seed, c, 3);
        std::uniform_real_distribution<double> xi(-cfg.sigma, cfg.sigma);
        const std::size_t lo = cfg.mc_samples * c / chunks;
        const std::size_t hi = cfg.mc_samples * (c + 1) / chunks;
        for (std::size_t i = lo; i < hi; ++i) {
            const auto x = detail::uniform_point(rng, dim);
            const double y = f(x) + (cfg.sigma > 0.0 ? xi(rng) : 0.0);
            const double d = approx(x) - y;
            const double e = d * d;
            sum[c] += e;
            sum2[c] += e * e;
        }
    });
    double s = 0.0, s2 = 0.0;
    for (std::size_t c = 0; c < chunks; ++c) {
        s += sum[c];
        s2 += sum2[c];
    }
    const double n = static_cast<double>(std::max<std::size_t>(cfg.mc_samples, 1));
    rep.expected_sq_error = s / n;
    rep.expected_sq_stderr = std::sqrt(std::max(0.0, s2 / n - rep.expected_sq_error * rep.expected_sq_error) / n);
    return rep;
}

struct LabeledSample {
    std::vector<double> x;
    double y = 0.0;
};

inline double loss_value(Loss loss, double prediction, double label)
{
    const double e = prediction - label;
    return loss == Loss::absolute ? std::abs(e) : e * e;
}

/// Lipschitz constant of the squared loss over predictions within `slack` of the data range.
inline double squared_loss_lipschitz(const Evaluator& g, const std::vector<LabeledSample>& data, double slack)
{
    double range = 0.0;
    for (const auto& s : data)
        range = std::max(range, std::abs(g(s.x)) + std::abs(s.y));
    return 2.0 * (range + slack);
}

namespace detail {

/// Best loss found in the delta-ball around x: random directions over the radius ladder, then coordinate ascent.
inline double inner_max(const Evaluator& g, const LabeledSample& s, double delta, Loss loss,
                        const AdversarialBudget& b, std::size_t sample_index)
{
    double best = loss_value(loss, g(s.x), s.y);
    if (delta == 0.0)
        return best;
    const std::size_t dim = s.x.size();
    auto rng = stream_rng(b.seed, sample_index, std::bit_cast<std::uint64_t>(delta));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> best_x = s.x;
    std::vector<double> p(dim);
    for (int k = 0; k < b.ladder; ++k) {
        const double rad = std::ldexp(delta, -k);
        for (std::size_t t = 0; t < b.directions; ++t) {
            double nrm = 0.0;
            for (auto& v : p) {
                v = gauss(rng);
                nrm += v * v;
            }
            nrm = std::sqrt(nrm);
            for (std::size_t j = 0; j < dim; ++j)
                p[j] = s.x[j] + rad * p[j] / nrm;
            const double l = loss_value(loss, g(p), s.y);
            if (l > best) {
                best = l;
                best_x = p;
            }
        }
    }
    double step = delta / 2.0;
    for (std::size_t sweep = 0; sweep < b.sweeps; ++sweep) {
        bool improved = false;
        for (std::size_t j = 0; j < dim; ++j)
            for (double sign : {1.0, -1.0}) {
                p = best_x;
                p[j] += sign * step;
                double r2 = 0.0;
                for (std::size_t k = 0; k < dim; ++k)
                    r2 += (p[k] - s.x[k]) * (p[k] - s.x[k]);
                if (r2 > delta * delta) {
                    const double scale = delta / std::sqrt(r2);
                    for (std::size_t k = 0; k < dim; ++k)
                        p[k] = s.x[k] + (p[k] - s.x[k]) * scale;
                }
                const double l = loss_value(loss, g(p), s.y);
                if (l > best) {
                    best = l;
                    best_x = p;
                    improved = true;
                }
            }
        if (!improved)
            step /= 2.0;
    }
    return best;
}

} // namespace detail

/// R(g, delta) for each radius: mean over samples of the best loss found in the delta-ball.
/// Search points of every smaller radius in the list are reused, so the curve is nondecreasing.
inline std::vector<double> adversarial_risk_curve(const Evaluator& g, const std::vector<LabeledSample>& data,
                                                  const std::vector<double>& deltas, Loss loss = Loss::absolute,
                                                  const AdversarialBudget& budget = {})
{
    for (double d : deltas)
        if (!(d >= 0.0))
            throw PreconditionError("adversarial_risk: delta must be nonnegative");
    std::vector<std::size_t> order(deltas.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return deltas[a] < deltas[b]; });
    std::vector<std::vector<double>> per(data.size(), std::vector<double>(deltas.size()));
    parallel_for(data.size(), [&](std::size_t i) {
        double running = 0.0;
        for (std::size_t k : order) {
            running = std::max(running, detail::inner_max(g, data[i], deltas[k], loss, budget, i));
            per[i][k] = running;
        }
    });
    std::vector<double> out(deltas.size(), 0.0);
    for (const auto& row : per)
        for (std::size_t k = 0; k < deltas.size(); ++k)
            out[k] += row[k];
    for (auto& v : out)
        v /= static_cast<double>(std::max<std::size_t>(data.size(), 1));
    return out;
}

inline double adversarial_risk(const Evaluator& g, const std::vector<LabeledSample>& data, double delta,
                               Loss loss = Loss::absolute, const AdversarialBudget& budget = {})
{
    return adversarial_risk_curve(g, data, {delta}, loss, budget).front();
}

/// Seeded data x ~ U(0,1)^D, y = f(x) + U[-sigma, sigma].
inline std::vector<LabeledSample> draw_samples(const TargetFunction& f, std::size_t n, double sigma,
                                               std::uint64_t seed)
{
    std::vector<LabeledSample> out(n);
    auto rng = detail::stream_rng(seed, 0, 4);
    std::uniform_real_distribution<double> xi(-sigma, sigma);
    for (auto& s : out) {
        s.x = detail::uniform_point(rng, f.dim);
        s.y = f(s.x) + (sigma > 0.0 ? xi(rng) : 0.0);
    }
    return out;
}

struct GapRow {
    double delta = 0.0;
    double risk = 0.0;
    double gap = 0.0;
    double bound = 0.0;
    bool ok = true;
};

struct GapReport {
    double base_risk = 0.0;
    double lipschitz = 0.0;
    double slope_bound = 0.0;
    std::vector<GapRow> rows;
    bool passed = true;
};

/// R(f~, delta) - R(f~, 0) <= L_Lip (1 + sqrt(D) eps^{(alpha-1)/alpha}) delta on the configured radii.
inline GapReport adversarial_gap_check(const RiskConfig& cfg, const TargetFunction& f,
                                       const ConstructedApproximator& approx, Loss loss = Loss::absolute)
{
    check_risk_config(cfg);
    const auto data = draw_samples(f, cfg.adversarial_samples, cfg.sigma, cfg.seed);
    std::vector<double> deltas{0.0};
    deltas.insert(deltas.end(), cfg.deltas.begin(), cfg.deltas.end());
    const auto risk = adversarial_risk_curve(approx.functional, data, deltas, loss, cfg.budget);
    GapReport rep;
    rep.base_risk = risk[0];
    rep.slope_bound = cfg.loss_lipschitz * lipschitz_bound(f.dim, f.alpha, cfg.eps);
    {
        std::vector<std::vector<double>> probes;
        auto rng = detail::stream_rng(cfg.seed, 0, 5);
        for (std::size_t i = 0; i < 2000; ++i)
            probes.push_back(detail::uniform_point(rng, f.dim));
        rep.lipschitz = lipschitz_estimate(approx.functional, sample_pairs(f.dim, 20000, cfg.seed), probes);
    }
    for (std::size_t k = 1; k < deltas.size(); ++k) {
        GapRow row;
        row.delta = deltas[k];
        row.risk = risk[k];
        row.gap = risk[k] - risk[0];
        row.bound = rep.slope_bound * deltas[k] + 1e-12;
        row.ok = row.gap <= row.bound;
        rep.passed = rep.passed && row.ok;
        rep.rows.push_back(row);
    }
    return rep;
}

} // namespace sobolev_forge
