#pragma once

// Study configurations (JSON, schema-checked), runners for the rate, risk
// and audit studies, and their CSV / JSON / SVG artifacts.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sobolev_forge/errors.hpp"
#include "sobolev_forge/manifold.hpp"
#include "sobolev_forge/rate_fit.hpp"
#include "sobolev_forge/risk.hpp"
#include "sobolev_forge/serialization.hpp"
#include "sobolev_forge/sobolev_metrics.hpp"
#include "sobolev_forge/taylor.hpp"

namespace sobolev_forge {

/// Reads fields of one JSON object and rejects keys that were never asked for.
class ConfigReader {
public:
    ConfigReader(const json& j, std::string where) : j_(j), where_(std::move(where))
    {
        if (!j_.is_object())
            throw ConfigError(where_ + ": expected a JSON object");
    }

    bool has(const std::string& key)
    {
        seen_.insert(key);
        return j_.contains(key);
    }

    template <typename T>
    T required(const std::string& key)
    {
        if (!has(key))
            throw ConfigError(where_ + ": missing required field \"" + key + "\"");
        return get<T>(key);
    }

    template <typename T>
    T optional(const std::string& key, T fallback)
    {
        return has(key) ? get<T>(key) : fallback;
    }

    const json& raw(const std::string& key)
    {
        if (!has(key))
            throw ConfigError(where_ + ": missing required field \"" + key + "\"");
        return j_.at(key);
    }

    /// Exponent p: a number >= 1 or the string "inf".
    double exponent(const std::string& key, double fallback)
    {
        if (!has(key))
            return fallback;
        const json& v = j_.at(key);
        if (v.is_string() && (v == "inf" || v == "infinity"))
            return kInfinity;
        if (v.is_number() && v.get<double>() >= 1.0)
            return v.get<double>();
        throw ConfigError(where_ + ": field \"" + key + "\" must be a number >= 1 or \"inf\"");
    }

    void finish() const
    {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key))
                throw ConfigError(where_ + ": unknown field \"" + key + "\"");
    }

private:
    template <typename T>
    T get(const std::string& key)
    {
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where_ + ": field \"" + key + "\" has the wrong type");
        }
    }

    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

/// A declared acceptance check: value must land in [lo, hi].
struct CheckSpec {
    std::string name;
    double lo = -kInfinity;
    double hi = kInfinity;
};

struct CheckResult {
    std::string name;
    double value = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    bool passed = false;
};

inline std::vector<CheckSpec> read_checks(ConfigReader& r)
{
    std::vector<CheckSpec> out;
    if (!r.has("checks"))
        return out;
    const json& c = r.raw("checks");
    if (!c.is_object())
        throw ConfigError("checks: expected an object of name: [lo, hi]");
    for (const auto& [name, range] : c.items()) {
        if (!range.is_array() || range.size() != 2 || !range[0].is_number() || !range[1].is_number())
            throw ConfigError("checks." + name + ": expected [lo, hi]");
        out.push_back({name, range[0].get<double>(), range[1].get<double>()});
    }
    return out;
}

inline std::vector<CheckResult> evaluate_checks(const std::vector<CheckSpec>& specs,
                                                const std::map<std::string, double>& values)
{
    std::vector<CheckResult> out;
    for (const auto& s : specs) {
        auto it = values.find(s.name);
        if (it == values.end())
            throw ConfigError("checks: \"" + s.name + "\" is not produced by this study");
        out.push_back({s.name, it->second, s.lo, s.hi, it->second >= s.lo && it->second <= s.hi});
    }
    return out;
}

inline json to_json(const CheckResult& c)
{
    return json{{"name", c.name}, {"value", c.value}, {"lo", c.lo}, {"hi", c.hi}, {"passed", c.passed}};
}

/// Shortest decimal form that round-trips the double.
inline std::string fmt(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v)
            break;
    }
    return buf;
}

/// Plain CSV table.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    void add(std::vector<std::string> row)
    {
        if (row.size() != header_.size())
            throw ShapeError("CsvTable: row has " + std::to_string(row.size()) + " cells, header has " +
                             std::to_string(header_.size()));
        rows_.push_back(std::move(row));
    }
    std::size_t rows() const { return rows_.size(); }

    std::string str() const
    {
        std::string s;
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i)
                s += (i ? "," : "") + cells[i];
            s += '\n';
        };
        line(header_);
        for (const auto& r : rows_)
            line(r);
        return s;
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    std::optional<RateFit> fit;
};

/// Log-log plot with markers per series and dashed fitted lines.
inline std::string loglog_svg(const std::string& title, const std::vector<PlotSeries>& series)
{
    const double w = 560, h = 400, ml = 70, mr = 150, mt = 40, mb = 50;
    double x0 = kInfinity, x1 = -kInfinity, y0 = kInfinity, y1 = -kInfinity;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (s.x[i] > 0 && s.y[i] > 0) {
                x0 = std::min(x0, std::log10(s.x[i]));
                x1 = std::max(x1, std::log10(s.x[i]));
                y0 = std::min(y0, std::log10(s.y[i]));
                y1 = std::max(y1, std::log10(s.y[i]));
            }
    if (!(x1 > x0)) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if (!(y1 > y0)) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    x0 = std::floor(x0 * 10) / 10 - 0.05;
    x1 = std::ceil(x1 * 10) / 10 + 0.05;
    y0 = std::floor(y0) - 0.1;
    y1 = std::ceil(y1) + 0.1;
    auto px = [&](double lx) { return ml + (lx - x0) / (x1 - x0) * (w - ml - mr); };
    auto py = [&](double ly) { return h - mb - (ly - y0) / (y1 - y0) * (h - mt - mb); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << ml << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
    o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << w - ml - mr << "\" height=\"" << h - mt - mb
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int d = static_cast<int>(std::ceil(y0)); d <= static_cast<int>(std::floor(y1)); ++d)
        o << "<text x=\"" << ml - 8 << "\" y=\"" << py(d) + 4
          << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">1e" << d << "</text>\n";
    std::set<double> xt;
    for (const auto& s : series)
        xt.insert(s.x.begin(), s.x.end());
    for (double v : xt)
        o << "<text x=\"" << px(std::log10(v)) << "\" y=\"" << h - mb + 16
          << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << fmt(v) << "</text>\n";
    o << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 10
      << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">N</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* c = colors[k % 6];
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (s.x[i] > 0 && s.y[i] > 0)
                o << "<circle cx=\"" << px(std::log10(s.x[i])) << "\" cy=\"" << py(std::log10(s.y[i]))
                  << "\" r=\"4\" fill=\"" << c << "\"/>\n";
        if (s.fit && !s.x.empty()) {
            const double a = *std::min_element(s.x.begin(), s.x.end());
            const double b = *std::max_element(s.x.begin(), s.x.end());
            o << "<path d=\"M " << px(std::log10(a)) << " " << py(std::log10(s.fit->predict(a))) << " L "
              << px(std::log10(b)) << " " << py(std::log10(s.fit->predict(b))) << "\" stroke=\"" << c
              << "\" stroke-dasharray=\"5,3\" fill=\"none\"/>\n";
        }
        o << "<text x=\"" << w - mr + 10 << "\" y=\"" << mt + 16 + 18 * k << "\" font-family=\"sans-serif\" "
          << "font-size=\"12\" fill=\"" << c << "\">" << s.name;
        if (s.fit)
            o << " (slope " << std::round(s.fit->slope * 100) / 100 << ")";
        o << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

// ---------------------------------------------------------------- Euclidean rate

struct EuclideanRateConfig {
    std::string target = "sinprod";
    std::size_t dim = 2;
    int alpha = 2;
    double s = 0.0;
    double p = kInfinity;
    std::vector<int> ns{2, 4, 8, 16};
    long long jt = 4;
    std::size_t grid = 0;
    bool compile = true;
    bool averaged = false;
    std::uint64_t seed = 7;
    std::vector<CheckSpec> checks;
};

struct RateRow {
    int n = 0;
    long long mt = 0;
    long long jt = 0;
    double w0 = 0.0;
    double w1 = 0.0;
    double ws = 0.0;
    double surrogate_w0 = 0.0;
    double surrogate_w1 = 0.0;
    NetClassParams audit;
    BuildRecord record;
};

struct RateStudyResult {
    std::vector<RateRow> rows;
    RateFit fit_w0;
    RateFit fit_w1;
    RateFit fit_s;
};

/// Mt with floor((Mt Jt)^{1/D}) = N, preferring Mt Jt = N^D.
inline long long mt_for(int n, long long jt, std::size_t dim)
{
    long long total = 1;
    for (std::size_t k = 0; k < dim; ++k)
        total *= n;
    const long long mt = std::max<long long>(1, (total + jt - 1) / jt);
    if (grid_resolution(mt, jt, dim) != n)
        throw ConfigError("no Mt gives N = " + std::to_string(n) + " with Jt = " + std::to_string(jt));
    return mt;
}

inline std::size_t default_grid(std::size_t dim)
{
    return dim == 1 ? 4000 : (dim == 2 ? 200 : (dim == 3 ? 40 : 12));
}

/// W^{s,p} error for s in [0,1]: grid norms at the endpoints, max(sup, Hoelder quotient) between (p = inf).
inline double fractional_error(const Evaluator& approx, const TargetFunction& f, double s, double p,
                               const EvalGrid& grid, std::uint64_t seed)
{
    if (s == 0.0)
        return sobolev_error(approx, f, 0, p, grid).total;
    if (s == 1.0)
        return sobolev_error(approx, f, 1, p, grid).total;
    if (!std::isinf(p))
        throw ConfigError("fractional s needs p = inf");
    Evaluator e = [&](std::span<const double> x) { return approx(x) - f(x); };
    const double sup = sobolev_error(approx, f, 0, p, grid).total;
    return std::max(sup, holder_quotient(e, s, sample_pairs(f.dim, 2 * kMinHolderPairs, seed)));
}

inline RateStudyResult run_euclidean_rate(const EuclideanRateConfig& c)
{
    const TargetFunction f = make_target(c.target, c.dim, c.alpha);
    const EvalGrid grid(c.dim, c.grid ? c.grid : default_grid(c.dim));
    RateStudyResult res;
    std::vector<double> ns, e0, e1, es;
    for (int n : c.ns) {
        RateRow row;
        row.n = n;
        row.jt = c.jt;
        row.mt = mt_for(n, c.jt, c.dim);
        EuclideanOptions opt;
        opt.taylor.averaged = c.averaged;
        opt.compile = c.compile;
        opt.seed = c.seed;
        const auto approx = build_euclidean(f, c.s, static_cast<int>(std::isinf(c.p) ? 0 : c.p), row.mt, row.jt, opt);
        row.w0 = sobolev_error(approx.functional, f, 0, c.p, grid).total;
        row.w1 = sobolev_error(approx.functional, f, 1, c.p, grid).total;
        row.ws = (c.s == 0.0) ? row.w0 : (c.s == 1.0 ? row.w1 : fractional_error(approx.functional, f, c.s, c.p, grid, c.seed));
        const auto coeffs = approx.coefficients;
        Evaluator sur = [coeffs](std::span<const double> x) { return surrogate_eval(*coeffs, x); };
        row.surrogate_w0 = sobolev_error(sur, f, 0, c.p, grid).total;
        row.surrogate_w1 = sobolev_error(sur, f, 1, c.p, grid).total;
        row.audit = approx.audit;
        row.record = approx.record;
        ns.push_back(n);
        e0.push_back(row.w0);
        e1.push_back(row.w1);
        es.push_back(row.ws);
        res.rows.push_back(row);
    }
    if (ns.size() >= 2) {
        res.fit_w0 = fit_loglog(ns, e0);
        res.fit_w1 = fit_loglog(ns, e1);
        res.fit_s = fit_loglog(ns, es);
    }
    return res;
}

// ---------------------------------------------------------------- manifold rate

struct ManifoldRateConfig {
    std::string manifold = "circle";
    std::size_t ambient = 3;
    std::string target = "circle-sin";
    int alpha = 2;
    double radius = 0.2;
    std::vector<int> ns{4, 8, 16, 32};
    std::size_t resolution = 0;
    std::uint64_t seed = 7;
    std::vector<CheckSpec> checks;
};

struct ManifoldRow {
    int n = 0;
    int k = 0;
    double error = 0.0;
    std::size_t charts = 0;
    std::size_t skipped = 0;
    BuildRecord record;
};

struct ManifoldStudyResult {
    std::size_t d = 1;
    std::size_t D = 2;
    std::vector<ManifoldRow> rows;
    RateFit fit_w0;
    RateFit fit_w1;
};

inline ManifoldStudyResult run_manifold_rate(const ManifoldRateConfig& c)
{
    const ManifoldSpec m = make_manifold(c.manifold, c.ambient);
    const ManifoldTarget f = make_manifold_target(c.target, m, c.alpha);
    ManifoldStudyResult res;
    res.d = m.d;
    res.D = m.D;
    std::vector<double> ns, e0, e1;
    for (int n : c.ns) {
        long long total = 1;
        for (std::size_t k = 0; k < m.d; ++k)
            total *= n;
        ManifoldOptions opt;
        opt.radius = c.radius;
        opt.seed = c.seed;
        const auto approx = build_manifold_approx(f, m, total, 1, opt);
        Evaluator err = [&](std::span<const double> x) { return approx(x) - f(x); };
        for (int k : {0, 1}) {
            const auto norm = manifold_norm(err, *approx.model->atlas, m, k, c.resolution);
            res.rows.push_back({n, k, norm.value, approx.record.charts, norm.skipped, approx.record});
            (k == 0 ? e0 : e1).push_back(norm.value);
        }
        ns.push_back(n);
    }
    if (ns.size() >= 2) {
        res.fit_w0 = fit_loglog(ns, e0);
        res.fit_w1 = fit_loglog(ns, e1);
    }
    return res;
}

// ---------------------------------------------------------------- risk

struct RiskStudyConfig {
    std::string target = "sin2";
    std::size_t dim = 2;
    int alpha = 2;
    RiskConfig risk;
    Loss loss = Loss::absolute;
    std::vector<CheckSpec> checks;
};

/// Constructive approximator for the risk theorems: Mt Jt = ceil(eps^{-D/alpha}), no compile.
inline ConstructedApproximator risk_approximator(const TargetFunction& f, double eps, std::uint64_t seed)
{
    EuclideanOptions opt;
    opt.compile = false;
    opt.seed = seed;
    return build_euclidean(f, 0.0, 0, risk_network_size(eps, f.dim, f.alpha), 1, opt);
}

// ---------------------------------------------------------------- config parsing

struct StudyConfig {
    std::string kind;
    std::filesystem::path out = "out";
    std::uint64_t seed = 7;
    EuclideanRateConfig euclidean;
    ManifoldRateConfig manifold;
    RiskStudyConfig risk;
    /// audit: either a saved network or builds at each N of `euclidean`
    std::string network;
};

inline const std::vector<std::string>& study_kinds()
{
    static const std::vector<std::string> k{"euclidean-rate", "manifold-rate", "risk", "adversarial", "audit"};
    return k;
}

inline StudyConfig parse_study_config(const json& j)
{
    ConfigReader r(j, "config");
    StudyConfig c;
    c.kind = r.required<std::string>("kind");
    if (std::find(study_kinds().begin(), study_kinds().end(), c.kind) == study_kinds().end())
        throw ConfigError("config: unknown study kind \"" + c.kind + "\"");
    c.out = r.optional<std::string>("out", "out");
    c.seed = r.optional<std::uint64_t>("seed", 7);

    if (c.kind == "euclidean-rate" || (c.kind == "audit" && !j.contains("network"))) {
        auto& e = c.euclidean;
        e.target = r.required<std::string>("target");
        e.dim = r.required<std::size_t>("D");
        e.alpha = r.required<int>("alpha");
        e.s = r.optional<double>("s", 0.0);
        e.p = r.exponent("p", kInfinity);
        e.ns = r.required<std::vector<int>>("N");
        e.jt = r.optional<long long>("Jt", 1);
        e.grid = r.optional<std::size_t>("grid", 0);
        e.compile = r.optional<bool>("compile", true);
        e.averaged = r.optional<bool>("averaged_taylor", false);
        e.seed = c.seed;
        e.checks = read_checks(r);
        if (e.alpha < 1)
            throw ConfigError("config: alpha must be at least 1");
        if (!(e.s >= 0.0 && e.s <= 1.0))
            throw ConfigError("config: s must lie in [0,1]");
        if (e.ns.empty() || e.jt < 1)
            throw ConfigError("config: N must be a nonempty list and Jt positive");
        for (int n : e.ns)
            if (n < 1)
                throw ConfigError("config: every N must be positive");
        if (std::find(euclidean_target_names().begin(), euclidean_target_names().end(), e.target) ==
            euclidean_target_names().end())
            throw ConfigError("config: unknown target \"" + e.target + "\"");
    } else if (c.kind == "manifold-rate") {
        auto& m = c.manifold;
        m.manifold = r.required<std::string>("manifold");
        m.ambient = r.optional<std::size_t>("D", m.manifold == "circle" ? 3 : (m.manifold == "sphere" ? 3 : 4));
        m.target = r.required<std::string>("target");
        m.alpha = r.required<int>("alpha");
        m.radius = r.optional<double>("radius", 0.2);
        m.ns = r.required<std::vector<int>>("N");
        m.resolution = r.optional<std::size_t>("grid", 0);
        m.seed = c.seed;
        m.checks = read_checks(r);
        if (m.alpha < 1)
            throw ConfigError("config: alpha must be at least 1");
        if (m.ns.empty())
            throw ConfigError("config: N must be a nonempty list");
    } else if (c.kind == "risk" || c.kind == "adversarial") {
        auto& k = c.risk;
        k.target = r.required<std::string>("target");
        k.dim = r.required<std::size_t>("D");
        k.alpha = r.required<int>("alpha");
        k.risk.samples = r.optional<std::size_t>("samples", k.risk.samples);
        k.risk.sigma = r.optional<double>("sigma", k.risk.sigma);
        k.risk.eps = r.optional<double>("eps", k.risk.eps);
        k.risk.repetitions = r.optional<std::size_t>("repetitions", k.risk.repetitions);
        k.risk.loss_lipschitz = r.optional<double>("loss_lipschitz", k.risk.loss_lipschitz);
        k.risk.lipschitz_slack = r.optional<double>("lipschitz_slack", k.risk.lipschitz_slack);
        k.risk.mc_samples = r.optional<std::size_t>("mc_samples", k.risk.mc_samples);
        k.risk.deltas = r.optional<std::vector<double>>("deltas", k.risk.deltas);
        k.risk.adversarial_samples = r.optional<std::size_t>("adversarial_samples", k.risk.adversarial_samples);
        k.risk.budget.directions = r.optional<std::size_t>("directions", k.risk.budget.directions);
        k.risk.budget.sweeps = r.optional<std::size_t>("sweeps", k.risk.budget.sweeps);
        k.risk.seed = c.seed;
        k.risk.budget.seed = c.seed + 1;
        const auto loss = r.optional<std::string>("loss", "absolute");
        if (loss == "absolute")
            k.loss = Loss::absolute;
        else if (loss == "squared")
            k.loss = Loss::squared;
        else
            throw ConfigError("config: loss must be \"absolute\" or \"squared\"");
        k.checks = read_checks(r);
        try {
            check_risk_config(k.risk);
        } catch (const PreconditionError& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    } else {
        c.network = r.required<std::string>("network");
    }
    r.finish();
    return c;
}

inline StudyConfig load_study_config(const std::filesystem::path& path)
{
    json j;
    try {
        j = read_json_file(path);
    } catch (const SerializationError& e) {
        throw ConfigError(e.what());
    }
    return parse_study_config(j);
}

// ---------------------------------------------------------------- runners with artifacts

struct StudyOutcome {
    json summary;
    std::vector<CheckResult> checks;
    std::vector<std::filesystem::path> files;

    bool passed() const
    {
        for (const auto& c : checks)
            if (!c.passed)
                return false;
        return true;
    }
};

namespace detail {

inline void emit(StudyOutcome& o, const std::filesystem::path& path, const std::string& content)
{
    write_file_atomic(path, content);
    o.files.push_back(path);
}

inline json fit_json(const RateFit& f)
{
    return json{{"slope", f.slope}, {"constant", f.constant()}, {"r2", f.r2}};
}

inline void finish_checks(StudyOutcome& o, const std::vector<CheckSpec>& specs,
                          const std::map<std::string, double>& values)
{
    o.checks = evaluate_checks(specs, values);
    json arr = json::array();
    for (const auto& c : o.checks)
        arr.push_back(to_json(c));
    o.summary["checks"] = arr;
    o.summary["passed"] = o.passed();
}

} // namespace detail

inline StudyOutcome run_euclidean_study(const StudyConfig& c)
{
    const auto& e = c.euclidean;
    const auto res = run_euclidean_rate(e);
    StudyOutcome o;
    CsvTable t({"N", "Mt", "Jt", "w0_error", "w1_error", "ws_error", "surrogate_w0", "surrogate_w1", "M", "L", "J",
                "K", "kappa1", "kappa2", "summands"});
    for (const auto& r : res.rows)
        t.add({std::to_string(r.n), std::to_string(r.mt), std::to_string(r.jt), fmt(r.w0), fmt(r.w1), fmt(r.ws),
               fmt(r.surrogate_w0), fmt(r.surrogate_w1), std::to_string(r.audit.M), std::to_string(r.audit.L),
               std::to_string(r.audit.J), std::to_string(r.audit.K), fmt(r.audit.kappa1), fmt(r.audit.kappa2),
               std::to_string(r.record.summands)});
    detail::emit(o, c.out / "euclidean_rate.csv", t.str());
    o.summary = json{{"kind", c.kind}, {"target", e.target}, {"D", e.dim}, {"alpha", e.alpha}, {"s", e.s},
                     {"p", std::isinf(e.p) ? json("inf") : json(e.p)}, {"N", e.ns}, {"seed", c.seed}};
    std::map<std::string, double> values;
    if (res.rows.size() >= 2) {
        o.summary["fit"] = {{"w0", detail::fit_json(res.fit_w0)}, {"w1", detail::fit_json(res.fit_w1)},
                            {"s", detail::fit_json(res.fit_s)}};
        o.summary["slope"] = res.fit_s.slope;
        values = {{"slope", res.fit_s.slope}, {"slope_w0", res.fit_w0.slope}, {"slope_w1", res.fit_w1.slope}};
        std::vector<double> ns, e0, e1;
        for (const auto& r : res.rows) {
            ns.push_back(r.n);
            e0.push_back(r.w0);
            e1.push_back(r.w1);
        }
        detail::emit(o, c.out / "euclidean_rate.svg",
                     loglog_svg(e.target + ", D=" + std::to_string(e.dim) + ", alpha=" + std::to_string(e.alpha),
                                {{"W^{0,inf}", ns, e0, res.fit_w0}, {"W^{1,inf}", ns, e1, res.fit_w1}}));
    }
    detail::finish_checks(o, e.checks, values);
    detail::emit(o, c.out / "summary.json", dump_json(o.summary, 2));
    return o;
}

inline StudyOutcome run_manifold_study(const StudyConfig& c)
{
    const auto& m = c.manifold;
    const auto res = run_manifold_rate(m);
    StudyOutcome o;
    CsvTable t({"manifold", "D", "d", "N", "k", "error", "charts", "skipped"});
    for (const auto& r : res.rows)
        t.add({m.manifold, std::to_string(res.D), std::to_string(res.d), std::to_string(r.n), std::to_string(r.k),
               fmt(r.error), std::to_string(r.charts), std::to_string(r.skipped)});
    detail::emit(o, c.out / "manifold_rate.csv", t.str());
    o.summary = json{{"kind", c.kind}, {"manifold", m.manifold}, {"target", m.target}, {"D", res.D}, {"d", res.d},
                     {"alpha", m.alpha}, {"radius", m.radius}, {"N", m.ns}, {"seed", c.seed}};
    std::map<std::string, double> values;
    if (m.ns.size() >= 2) {
        o.summary["fit"] = {{"w0", detail::fit_json(res.fit_w0)}, {"w1", detail::fit_json(res.fit_w1)}};
        o.summary["intrinsic_exponent"] = -m.alpha;
        o.summary["ambient_exponent"] = -static_cast<double>(m.alpha) * res.d / res.D;
        values = {{"slope_w0", res.fit_w0.slope}, {"slope_w1", res.fit_w1.slope}};
        std::vector<double> ns, e0, e1;
        for (const auto& r : res.rows) {
            if (r.k == 0) {
                ns.push_back(r.n);
                e0.push_back(r.error);
            } else {
                e1.push_back(r.error);
            }
        }
        detail::emit(o, c.out / "manifold_rate.svg",
                     loglog_svg(m.target + " on " + m.manifold,
                                {{"W^{0,inf}(M)", ns, e0, res.fit_w0}, {"W^{1,inf}(M)", ns, e1, res.fit_w1}}));
    }
    detail::finish_checks(o, m.checks, values);
    detail::emit(o, c.out / "summary.json", dump_json(o.summary, 2));
    return o;
}

inline json to_json(const GapReport& g)
{
    json rows = json::array();
    for (const auto& r : g.rows)
        rows.push_back({{"delta", r.delta}, {"risk", r.risk}, {"gap", r.gap}, {"bound", r.bound}, {"ok", r.ok}});
    return rows;
}

inline StudyOutcome run_risk_study(const StudyConfig& c)
{
    const auto& k = c.risk;
    const TargetFunction f = make_target(k.target, k.dim, k.alpha);
    const auto approx = risk_approximator(f, k.risk.eps, c.seed);
    StudyOutcome o;
    o.summary = json{{"kind", c.kind}, {"target", k.target}, {"D", k.dim}, {"alpha", k.alpha},
                     {"eps", k.risk.eps}, {"sigma", k.risk.sigma}, {"n", k.risk.samples}, {"N", approx.record.n},
                     {"seed", c.seed}};
    std::map<std::string, double> values;
    if (c.kind == "risk") {
        const auto rep = empirical_residual_study(k.risk, f, approx);
        CsvTable t({"repetition", "residual", "threshold", "success"});
        for (std::size_t i = 0; i < rep.residuals.size(); ++i)
            t.add({std::to_string(i), fmt(rep.residuals[i]), fmt(rep.residual_threshold),
                   rep.residuals[i] <= rep.residual_threshold && rep.lipschitz <= rep.lipschitz_limit ? "1" : "0"});
        detail::emit(o, c.out / "risk_residuals.csv", t.str());
        o.summary["success_fraction"] = rep.success_fraction;
        o.summary["theoretical_floor"] = rep.theoretical_floor;
        o.summary["residual_threshold"] = rep.residual_threshold;
        o.summary["mean_residual"] = rep.mean_residual;
        o.summary["max_residual"] = rep.max_residual;
        o.summary["lipschitz"] = rep.lipschitz;
        o.summary["lipschitz_limit"] = rep.lipschitz_limit;
        o.summary["expected_sq_error"] = rep.expected_sq_error;
        o.summary["expected_sq_stderr"] = rep.expected_sq_stderr;
        o.summary["expected_bound"] = rep.expected_bound;
        o.summary["sup_error"] = rep.sup_error;
        values["success_margin"] = rep.success_fraction - rep.theoretical_floor;
        values["success_fraction"] = rep.success_fraction;
        values["expected_margin"] =
            rep.expected_bound - (rep.expected_sq_error - 3.0 * rep.expected_sq_stderr);
    }
    const auto gap = adversarial_gap_check(k.risk, f, approx, k.loss);
    CsvTable g({"delta", "risk", "gap", "bound"});
    for (const auto& r : gap.rows)
        g.add({fmt(r.delta), fmt(r.risk), fmt(r.gap), fmt(r.bound)});
    detail::emit(o, c.out / "adversarial_gap.csv", g.str());
    o.summary["base_risk"] = gap.base_risk;
    o.summary["lipschitz_estimate"] = gap.lipschitz;
    o.summary["gap_slope_bound"] = gap.slope_bound;
    o.summary["gap_table"] = to_json(gap);
    double worst = -kInfinity;
    for (const auto& r : gap.rows)
        worst = std::max(worst, r.gap - r.bound);
    values["gap_excess"] = gap.rows.empty() ? 0.0 : worst;
    detail::finish_checks(o, k.checks, values);
    detail::emit(o, c.out / "summary.json", dump_json(o.summary, 2));
    return o;
}

inline StudyOutcome run_audit_study(const StudyConfig& c)
{
    StudyOutcome o;
    if (!c.network.empty()) {
        const auto net = load_resnet(c.network);
        o.summary = to_json(audit_class(net));
        detail::emit(o, c.out / "audit.json", dump_json(o.summary, 2));
        return o;
    }
    const auto& e = c.euclidean;
    const TargetFunction f = make_target(e.target, e.dim, e.alpha);
    CsvTable t({"N", "Mt", "Jt", "M", "L", "J", "K", "kappa1", "kappa2", "J_over_Jt", "M_over_Mt"});
    json rows = json::array();
    std::vector<double> jr, mr;
    double k_max = 0, kappa_excess = -kInfinity;
    for (int n : e.ns) {
        const long long mt = mt_for(n, e.jt, e.dim);
        EuclideanOptions opt;
        opt.seed = c.seed;
        const auto a = build_euclidean(f, e.s, 0, mt, e.jt, opt);
        const auto& p = a.audit;
        jr.push_back(static_cast<double>(p.J) / static_cast<double>(e.jt));
        mr.push_back(static_cast<double>(p.M) / static_cast<double>(mt));
        k_max = std::max(k_max, static_cast<double>(p.K) - static_cast<double>(e.dim));
        kappa_excess = std::max(kappa_excess, p.kappa1 - 3.0 * n);
        t.add({std::to_string(n), std::to_string(mt), std::to_string(e.jt), std::to_string(p.M), std::to_string(p.L),
               std::to_string(p.J), std::to_string(p.K), fmt(p.kappa1), fmt(p.kappa2), fmt(jr.back()),
               fmt(mr.back())});
        json row = to_json(p);
        row["N"] = n;
        row["Mt"] = mt;
        row["Jt"] = e.jt;
        rows.push_back(row);
    }
    auto drift = [](const std::vector<double>& v) {
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        return *lo > 0 ? *hi / *lo : kInfinity;
    };
    detail::emit(o, c.out / "audit.csv", t.str());
    o.summary = json{{"kind", c.kind}, {"target", e.target}, {"D", e.dim}, {"alpha", e.alpha}, {"rows", rows},
                     {"J_ratio_drift", drift(jr)}, {"M_ratio_drift", drift(mr)}};
    detail::finish_checks(o, e.checks,
                          {{"K_minus_D", k_max},
                           {"kappa1_minus_3N", kappa_excess},
                           {"J_ratio_drift", drift(jr)},
                           {"M_ratio_drift", drift(mr)}});
    detail::emit(o, c.out / "summary.json", dump_json(o.summary, 2));
    return o;
}

inline StudyOutcome run_study(const StudyConfig& c)
{
    if (c.kind == "euclidean-rate")
        return run_euclidean_study(c);
    if (c.kind == "manifold-rate")
        return run_manifold_study(c);
    if (c.kind == "risk" || c.kind == "adversarial")
        return run_risk_study(c);
    return run_audit_study(c);
}

} // namespace sobolev_forge
