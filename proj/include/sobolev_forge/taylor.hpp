#pragma once

// Partition of unity on (0,1)^D, Taylor coefficients in the monomial basis,
// the polynomial surrogate and the Euclidean compile pipeline.

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sobolev_forge/net_algebra.hpp"
#include "sobolev_forge/parallel.hpp"
#include "sobolev_forge/relu_calculus.hpp"
#include "sobolev_forge/serialization.hpp"
#include "sobolev_forge/targets.hpp"

namespace sobolev_forge {

/// phi_m(x) = prod_k psi(3N(x_k - m_k/N)).
inline double bump_weight(const MultiIndex& m, int n, std::span<const double> x)
{
    if (m.size() != x.size())
        throw ShapeError("bump_weight: multi-index length " + std::to_string(m.size()) + " vs point length " +
                         std::to_string(x.size()));
    double w = 1.0;
    for (std::size_t k = 0; k < m.size() && w != 0.0; ++k)
        w *= trapezoid_value(m[k], n, x[k]);
    return w;
}

/// Grid indices m whose bump support can contain x: m_k in {floor(N x_k), floor(N x_k) + 1}.
inline std::vector<MultiIndex> candidate_bumps(int n, std::span<const double> x)
{
    const std::size_t d = x.size();
    std::vector<MultiIndex> out;
    std::vector<std::array<int, 2>> opts(d);
    std::vector<int> counts(d);
    for (std::size_t k = 0; k < d; ++k) {
        const int base = static_cast<int>(std::floor(n * x[k]));
        int c = 0;
        for (int o = 0; o < 2; ++o) {
            const int mk = base + o;
            if (mk >= 0 && mk <= n)
                opts[k][c++] = mk;
        }
        counts[k] = c;
        if (c == 0)
            return out;
    }
    MultiIndex m(d);
    std::vector<int> pos(d, 0);
    for (;;) {
        for (std::size_t k = 0; k < d; ++k)
            m[k] = opts[k][pos[k]];
        out.push_back(m);
        std::size_t k = 0;
        while (k < d && ++pos[k] == counts[k])
            pos[k++] = 0;
        if (k == d)
            break;
    }
    return out;
}

inline double monomial(std::span<const double> x, const MultiIndex& v)
{
    double p = 1.0;
    for (std::size_t k = 0; k < v.size(); ++k)
        for (int e = 0; e < v[k]; ++e)
            p *= x[k];
    return p;
}

inline std::string index_key(const MultiIndex& m)
{
    std::string s;
    for (std::size_t k = 0; k < m.size(); ++k) {
        if (k)
            s += ',';
        s += std::to_string(m[k]);
    }
    return s;
}

/// c_{m,v} for m in {0..N}^D and |v| <= alpha - 1.
struct SurrogateCoefficients {
    std::size_t dim = 0;
    int n = 1;
    int alpha = 1;
    std::vector<MultiIndex> exponents;
    std::vector<double> values;

    std::size_t grid_size() const
    {
        std::size_t s = 1;
        for (std::size_t k = 0; k < dim; ++k)
            s *= static_cast<std::size_t>(n + 1);
        return s;
    }
    std::size_t linear(const MultiIndex& m) const
    {
        std::size_t idx = 0;
        for (std::size_t k = dim; k-- > 0;)
            idx = idx * static_cast<std::size_t>(n + 1) + static_cast<std::size_t>(m[k]);
        return idx;
    }
    MultiIndex unlinear(std::size_t idx) const
    {
        MultiIndex m(dim);
        for (std::size_t k = 0; k < dim; ++k) {
            m[k] = static_cast<int>(idx % static_cast<std::size_t>(n + 1));
            idx /= static_cast<std::size_t>(n + 1);
        }
        return m;
    }
    double at(const MultiIndex& m, std::size_t v_index) const
    {
        return values[linear(m) * exponents.size() + v_index];
    }
    double max_abs() const { return sobolev_forge::max_abs(values); }
};

inline json to_json(const SurrogateCoefficients& c)
{
    json coeffs = json::object();
    for (std::size_t i = 0; i < c.grid_size(); ++i) {
        const auto m = c.unlinear(i);
        for (std::size_t j = 0; j < c.exponents.size(); ++j)
            coeffs[index_key(m) + "|" + index_key(c.exponents[j])] = c.values[i * c.exponents.size() + j];
    }
    return json{{"version", kFormatVersion}, {"D", c.dim}, {"N", c.n}, {"alpha", c.alpha}, {"coefficients", coeffs}};
}

struct TaylorOptions {
    /// Averaged Taylor polynomial by midpoint quadrature instead of the classical one.
    bool averaged = false;
    int quadrature_points = 8;
};

namespace detail {

inline double factorial(int k)
{
    double f = 1.0;
    for (int i = 2; i <= k; ++i)
        f *= i;
    return f;
}

inline double binomial(int a, int b)
{
    double r = 1.0;
    for (int i = 1; i <= b; ++i)
        r = r * (a - b + i) / i;
    return r;
}

/// Adds weight * T_y f expanded in monomials: sum_{a>=v} D^a f(y)/a! binom(a,v) (-y)^{a-v}.
inline void accumulate_taylor(const TargetFunction& f, std::span<const double> y, const std::vector<MultiIndex>& exps,
                              double weight, std::span<double> out)
{
    std::vector<double> deriv(exps.size());
    for (std::size_t i = 0; i < exps.size(); ++i)
        deriv[i] = f.derivative(y, exps[i]);
    for (std::size_t vi = 0; vi < exps.size(); ++vi) {
        const auto& v = exps[vi];
        double s = 0.0;
        for (std::size_t ai = 0; ai < exps.size(); ++ai) {
            const auto& a = exps[ai];
            bool ge = true;
            for (std::size_t k = 0; k < v.size(); ++k)
                ge = ge && a[k] >= v[k];
            if (!ge || deriv[ai] == 0.0)
                continue;
            double term = deriv[ai];
            for (std::size_t k = 0; k < v.size(); ++k)
                term *= binomial(a[k], v[k]) * std::pow(-y[k], a[k] - v[k]) / factorial(a[k]);
            s += term;
        }
        out[vi] += weight * s;
    }
}

} // namespace detail

/// Monomial coefficients of the degree alpha-1 Taylor polynomial of f at each grid point m/N.
inline SurrogateCoefficients taylor_coeffs(const TargetFunction& f, int n, const TaylorOptions& opt = {})
{
    if (n < 1)
        throw PreconditionError("taylor_coeffs: N must be positive");
    if (!f.derivative)
        throw PreconditionError("taylor_coeffs: target has no derivative evaluator");
    SurrogateCoefficients c;
    c.dim = f.dim;
    c.n = n;
    c.alpha = f.alpha;
    c.exponents = multi_indices(f.dim, f.alpha - 1);
    const std::size_t nv = c.exponents.size();
    c.values.assign(c.grid_size() * nv, 0.0);

    parallel_for(c.grid_size(), [&](std::size_t idx) {
        const MultiIndex m = c.unlinear(idx);
        std::vector<double> x0(f.dim);
        for (std::size_t k = 0; k < f.dim; ++k)
            x0[k] = static_cast<double>(m[k]) / n;
        std::span<double> out(c.values.data() + idx * nv, nv);
        if (!opt.averaged) {
            detail::accumulate_taylor(f, x0, c.exponents, 1.0, out);
            return;
        }
        const double r = 1.0 / (3.0 * n);
        const int q = opt.quadrature_points;
        std::vector<double> acc(nv, 0.0);
        std::vector<double> y(f.dim);
        std::vector<int> pos(f.dim, 0);
        double total = 0.0;
        for (;;) {
            double rr = 0.0;
            for (std::size_t k = 0; k < f.dim; ++k) {
                const double off = -r + (2.0 * pos[k] + 1.0) * r / q;
                y[k] = x0[k] + off;
                rr += off * off;
            }
            const double t = 1.0 - rr / (r * r);
            if (t > 0.0) {
                const double w = std::pow(t, f.alpha + 2);
                total += w;
                detail::accumulate_taylor(f, y, c.exponents, w, acc);
            }
            std::size_t k = 0;
            while (k < f.dim && ++pos[k] == q)
                pos[k++] = 0;
            if (k == f.dim)
                break;
        }
        if (total == 0.0)
            throw PreconditionError("taylor_coeffs: quadrature grid missed the averaging ball");
        for (std::size_t i = 0; i < nv; ++i)
            out[i] = acc[i] / total;
    });
    return c;
}

/// f^(x) = sum_m sum_v c_{m,v} phi_m(x) x^v over the bumps whose support holds x.
inline double surrogate_eval(const SurrogateCoefficients& c, std::span<const double> x)
{
    if (x.size() != c.dim)
        throw ShapeError("surrogate_eval: point length " + std::to_string(x.size()) + " vs D=" +
                         std::to_string(c.dim));
    double s = 0.0;
    for (const auto& m : candidate_bumps(c.n, x)) {
        const double w = bump_weight(m, c.n, x);
        if (w == 0.0)
            continue;
        const std::size_t base = c.linear(m) * c.exponents.size();
        double inner = 0.0;
        for (std::size_t j = 0; j < c.exponents.size(); ++j)
            if (c.values[base + j] != 0.0)
                inner += c.values[base + j] * monomial(x, c.exponents[j]);
        s += w * inner;
    }
    return s;
}

struct BuildRecord {
    std::string target;
    std::string kind = "euclidean";
    std::size_t dim = 0;
    int n = 0;
    int alpha = 0;
    double s = 0.0;
    int p = 0;
    long long mt = 0;
    long long jt = 0;
    double eta = 0.0;
    double eps = 0.0;
    std::size_t summands = 0;
    std::size_t groups = 0;
    std::size_t member_width = 0;
    double max_coefficient = 0.0;
    double compile_check_error = 0.0;
    std::size_t compile_check_points = 0;
    // manifold pipeline
    std::size_t charts = 0;
    double delta = 0.0;
    double delta_floor_applied = 0.0;
    double transition = 0.0;
    double theta = 0.0;
    int levels = 0;
    double c2 = 0.0;
    std::size_t zeroed_coefficients = 0;
};

inline json to_json(const BuildRecord& r)
{
    json j{{"target", r.target},   {"kind", r.kind},       {"D", r.dim},         {"N", r.n},
           {"alpha", r.alpha},     {"s", r.s},             {"p", r.p},           {"Mt", r.mt},
           {"Jt", r.jt},           {"eta", r.eta},         {"eps", r.eps},       {"summands", r.summands},
           {"groups", r.groups},   {"member_width", r.member_width},
           {"max_coefficient", r.max_coefficient},
           {"compile_check_error", r.compile_check_error},
           {"compile_check_points", r.compile_check_points}};
    if (r.kind == "manifold") {
        j["charts"] = r.charts;
        j["delta"] = r.delta;
        j["delta_floor_applied"] = r.delta_floor_applied;
        j["transition_width"] = r.transition;
        j["theta"] = r.theta;
        j["indicator_levels"] = r.levels;
        j["c2"] = r.c2;
        j["zeroed_coefficients"] = r.zeroed_coefficients;
    }
    return j;
}

inline json to_json(const NetClassParams& p)
{
    return json{{"M", p.M},           {"L", p.L},           {"J", p.J},
                {"K", p.K},           {"kappa1", p.kappa1}, {"kappa2", p.kappa2},
                {"first_row_only", p.first_row_only}};
}

/// Functional evaluator, compiled network and build metadata of one construction.
struct ConstructedApproximator {
    Evaluator functional;
    std::shared_ptr<const ConvResNetModel> network;
    BuildRecord record;
    NetClassParams audit;
    std::shared_ptr<const SurrogateCoefficients> coefficients;

    double operator()(std::span<const double> x) const { return functional(x); }
    double compiled(std::span<const double> x) const
    {
        if (!network)
            throw PreconditionError("approximator was built without a compiled network");
        return resnet_forward(*network, x);
    }
};

struct EuclideanOptions {
    TaylorOptions taylor;
    /// Filter width of the realized CNNs.
    std::size_t k = 2;
    bool compile = true;
    std::size_t check_points = 16;
    std::uint64_t seed = 7;
};

/// N = floor((Mt Jt)^{1/D}) with a guard against pow rounding just below an exact root.
inline int grid_resolution(long long mt, long long jt, std::size_t dim)
{
    const double root = std::pow(static_cast<double>(mt) * static_cast<double>(jt), 1.0 / static_cast<double>(dim));
    int n = static_cast<int>(std::floor(root + 1e-9));
    return std::max(n, 1);
}

namespace detail {

/// max |network - functional| at seeded uniform points; throws above 1e-8.
inline double compile_check(const ConvResNetModel& net, const Evaluator& functional, std::size_t dim,
                            std::size_t points, std::uint64_t seed, const std::vector<std::vector<double>>& extra = {})
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<double>> xs = extra;
    for (std::size_t i = 0; i < points; ++i) {
        std::vector<double> x(dim);
        for (auto& v : x)
            v = u(rng);
        xs.push_back(std::move(x));
    }
    std::vector<double> diff(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) { diff[i] = std::abs(resnet_forward(net, xs[i]) - functional(xs[i])); });
    double worst = 0.0;
    std::size_t where = 0;
    for (std::size_t i = 0; i < diff.size(); ++i)
        if (!(diff[i] <= worst)) {
            worst = diff[i];
            where = i;
        }
    if (!(worst <= 1e-8)) {
        std::ostringstream msg;
        msg << "compiled network disagrees with functional evaluator by " << worst << " at x=(";
        for (std::size_t k = 0; k < dim; ++k)
            msg << (k ? "," : "") << xs[where][k];
        msg << ")";
        throw CompileCheckError(msg.str());
    }
    return worst;
}

/// The zero function: no blocks and a zero readout.
inline std::shared_ptr<const ConvResNetModel> zero_network(std::size_t d)
{
    ConvResNetModel zero;
    zero.input_dim = d;
    zero.channels = kAssembleChannels;
    zero.fc_weight = Matrix(d, kAssembleChannels);
    zero.first_row_only = true;
    return std::make_shared<ConvResNetModel>(std::move(zero));
}

/// Realizes each summand net as a CNN, pads to common depth, groups Jt per block and assembles.
template <typename MakeNet>
std::shared_ptr<const ConvResNetModel> compile_terms(std::size_t count, MakeNet&& make_net, std::size_t k,
                                                     long long jt, BuildRecord& rec)
{
    std::vector<CnnFunction> cnns(count);
    parallel_for(count, [&](std::size_t t) { cnns[t] = mlp_to_cnn(make_net(t), k); });
    std::size_t depth = 0;
    std::size_t width = 0;
    for (const auto& c : cnns) {
        depth = std::max(depth, c.depth());
        width = std::max(width, c.max_channels());
    }
    for (auto& c : cnns)
        c = pad_depth(std::move(c), depth);
    auto groups = parallel_sum(cnns, static_cast<std::size_t>(jt) * width);
    cnns.clear();
    rec.member_width = width;
    rec.groups = groups.size();
    return std::make_shared<ConvResNetModel>(assemble_resnet(groups));
}

} // namespace detail

/// Compiles f into a ConvResNet: N = floor((Mt Jt)^{1/D}), eta = N^-alpha, Jt members per group.
inline ConstructedApproximator build_euclidean(const TargetFunction& f, double s, int p, long long mt, long long jt,
                                               const EuclideanOptions& opt = {})
{
    const std::size_t d = f.dim;
    if (mt < 1 || jt < 1)
        throw PreconditionError("build_euclidean: Mt and Jt must be positive");
    if (!(s >= 0.0 && s <= 1.0))
        throw PreconditionError("build_euclidean: s must lie in [0,1]");
    if (static_cast<double>(mt) * static_cast<double>(jt) < std::ldexp(1.0, static_cast<int>(d)))
        throw PreconditionError("build_euclidean: Mt*Jt must be at least 2^D");
    const int n = grid_resolution(mt, jt, d);
    const double eta = std::pow(static_cast<double>(n), -f.alpha);

    auto coeffs = std::make_shared<SurrogateCoefficients>(taylor_coeffs(f, n, opt.taylor));
    const auto exps = coeffs->exponents;
    const int alpha = f.alpha;
    MonomialBumpSpec proto{MultiIndex(d, 0), MultiIndex(d, 0), n, alpha, eta};
    const ProductSpec prod = bump_product_spec(proto);

    ConstructedApproximator out;
    out.coefficients = coeffs;
    out.functional = [coeffs, exps, n, alpha, eta, prod](std::span<const double> x) {
        double sum = 0.0;
        for (const auto& m : candidate_bumps(n, x)) {
            const std::size_t base = coeffs->linear(m) * exps.size();
            for (std::size_t j = 0; j < exps.size(); ++j) {
                const double c = coeffs->values[base + j];
                if (c == 0.0)
                    continue;
                const MonomialBumpSpec spec{m, exps[j], n, alpha, eta};
                sum += c * monomial_bump_partial(spec, prod, x);
            }
        }
        return sum;
    };

    BuildRecord& rec = out.record;
    rec.target = f.name;
    rec.dim = d;
    rec.n = n;
    rec.alpha = alpha;
    rec.s = s;
    rec.p = p;
    rec.mt = mt;
    rec.jt = jt;
    rec.eta = eta;
    rec.eps = prod.accuracy;
    rec.max_coefficient = coeffs->max_abs();

    std::vector<std::pair<std::size_t, std::size_t>> terms;
    for (std::size_t i = 0; i < coeffs->grid_size(); ++i)
        for (std::size_t j = 0; j < exps.size(); ++j)
            if (coeffs->values[i * exps.size() + j] != 0.0)
                terms.emplace_back(i, j);
    rec.summands = terms.size();
    if (!opt.compile || terms.empty()) {
        if (terms.empty() && opt.compile) {
            out.network = detail::zero_network(d);
            out.audit = audit_class(*out.network);
        }
        return out;
    }

    const std::size_t k = d == 1 ? 2 : std::min<std::size_t>(opt.k, d);
    out.network = detail::compile_terms(
        terms.size(),
        [&](std::size_t t) {
            const auto [i, j] = terms[t];
            const MonomialBumpSpec spec{coeffs->unlinear(i), exps[j], n, alpha, eta};
            return scale_output(build_monomial_bump(spec), coeffs->values[i * exps.size() + j]);
        },
        k, jt, rec);
    out.audit = audit_class(*out.network);

    std::vector<std::vector<double>> probes;
    {
        // grid centres exercise the plateau of every factor
        std::vector<double> x(d, 0.5);
        probes.push_back(x);
    }
    rec.compile_check_error = detail::compile_check(*out.network, out.functional, d, opt.check_points, opt.seed, probes);
    rec.compile_check_points = opt.check_points + probes.size();
    return out;
}

} // namespace sobolev_forge
