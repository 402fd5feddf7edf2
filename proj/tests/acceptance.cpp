// One PASS/FAIL line per acceptance criterion, with measured values and wall time.

#include <chrono>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "sobolev_forge/manifold.hpp"
#include "sobolev_forge/study.hpp"

namespace sf = sobolev_forge;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::vector<std::vector<double>> uniform(std::size_t d, std::size_t n, std::uint64_t seed, double lo = 0.0,
                                         double hi = 1.0)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<std::vector<double>> xs(n, std::vector<double>(d));
    for (auto& x : xs)
        for (auto& v : x)
            v = u(rng);
    return xs;
}

double psi_oracle(double t)
{
    t = std::abs(t);
    return t < 1 ? 1.0 : (t <= 2 ? 2.0 - t : 0.0);
}

// Shared between criteria 4 and 7.
sf::RateStudyResult g_rate;
sf::EuclideanRateConfig g_rate_cfg;

Outcome exact_constructions()
{
    double worst_psi = 0.0;
    for (int n : {1, 2, 4, 8})
        for (int m = 0; m <= n; ++m) {
            const auto net = sf::build_trapezoid(m, n);
            for (int i = 0; i <= 1000; ++i) {
                const double x = (i + 0.5) / 1001.0;
                worst_psi = std::max(worst_psi, std::abs(net(x) - psi_oracle(3.0 * n * (x - double(m) / n))));
            }
        }
    double worst_pou = 0.0;
    for (std::size_t d : {1u, 2u, 3u})
        for (int n : {2, 5}) {
            for (const auto& x : uniform(d, 10000, 10 + d)) {
                double s = 0.0;
                for (const auto& m : sf::candidate_bumps(n, x))
                    s += sf::bump_weight(m, n, x);
                worst_pou = std::max(worst_pou, std::abs(s - 1.0));
            }
        }
    return {worst_psi <= 1e-12 && worst_pou <= 1e-12,
            "psi err " + num(worst_psi) + ", partition err " + num(worst_pou)};
}

Outcome multiplication()
{
    const int alpha = 2;
    const std::size_t dim = 2;
    bool ok = true;
    std::string detail;
    for (double b : {1.0, double(alpha) + double(dim) + 1.0})
        for (double eta : {1e-2, 1e-3, 1e-4}) {
            const auto net = sf::build_product2(eta, b);
            double worst = 0.0;
            for (int i = 0; i <= 200; ++i)
                for (int j = 0; j <= 200; ++j) {
                    const std::vector<double> x{-b + 2.0 * b * i / 200.0, -b + 2.0 * b * j / 200.0};
                    worst = std::max(worst, std::abs(net(x) - x[0] * x[1]));
                }
            std::size_t nonzero = 0;
            for (const auto& p : uniform(1, 1000, 20, -b, b)) {
                const std::vector<double> a{p[0], 0.0}, c{0.0, p[0]};
                nonzero += (net(a) != 0.0) + (net(c) != 0.0);
            }
            ok = ok && worst <= eta && nonzero == 0;
            detail += "B=" + num(b) + " eta=" + num(eta) + ": " + num(worst / eta) + "eta; ";
        }
    return {ok, detail + "zero-annihilation exact"};
}

Outcome compilation()
{
    std::vector<std::pair<std::string, double>> diffs;
    auto check = [&](const std::string& name, std::size_t d, double lo, double hi,
                     const std::function<double(std::span<const double>)>& compiled,
                     const std::function<double(std::span<const double>)>& oracle) {
        double worst = 0.0;
        for (const auto& x : uniform(d, 1000, 30 + diffs.size(), lo, hi))
            worst = std::max(worst, std::abs(compiled(x) - oracle(x)));
        diffs.emplace_back(name, worst);
    };
    auto compiled = [](const sf::ScalarNet& n) {
        auto net = std::make_shared<sf::ConvResNetModel>(sf::assemble_resnet({sf::mlp_to_cnn(n, 2)}));
        return [net](std::span<const double> x) { return sf::resnet_forward(*net, x); };
    };

    const auto psi = sf::build_trapezoid(3, 8, 2, 1);
    check("psi", 2, 0.0, 1.0, compiled(psi), [](auto x) { return sf::trapezoid_value(3, 8, x[1]); });

    const auto sched = sf::square_schedule(1e-4, 1.0);
    check("sq", 1, -1.0, 1.0, compiled(sf::build_square(1e-4, 1.0)),
          [sched](auto x) { return sf::square_value(sched, x[0]); });

    const auto prod = sf::product_spec(1e-4, 4.0);
    check("prod", 2, -4.0, 4.0, compiled(sf::build_product2(prod)),
          [prod](auto x) { return sf::product_value(prod, x[0], x[1]); });

    const sf::MonomialBumpSpec g{{2, 1}, {1, 0}, 4, 2, 1e-3};
    check("gtilde", 2, 0.0, 1.0, compiled(sf::build_monomial_bump(g)),
          [g](auto x) { return sf::monomial_bump_value(g, x); });

    const auto mlp = sf::build_product2(1e-2, 1.0);
    const auto cnn = sf::mlp_to_cnn(mlp, 2);
    check("mlp_to_cnn", 2, -1.0, 1.0, [cnn](auto x) { return sf::cnn_forward(cnn, x); },
          [mlp](auto x) { return mlp(x); });

    const auto f1 = sf::mlp_to_cnn(sf::build_trapezoid(1, 2, 2, 0), 2);
    const auto sq = sf::build_square(1e-3, 1.0);
    const auto comp = sf::compose_cnn(f1, sf::mlp_to_cnn(sq, 2));
    check("compose_cnn", 2, 0.0, 1.0, [comp](auto x) { return sf::cnn_forward(comp, x); },
          [f1, sq](auto x) {
              const std::vector<double> y{sf::cnn_forward(f1, x)};
              return sq(y);
          });

    std::vector<sf::CnnFunction> members;
    for (int m = 0; m <= 4; ++m)
        members.push_back(sf::mlp_to_cnn(sf::build_trapezoid(m, 4, 2, m % 2), 2));
    const auto groups = sf::parallel_sum(members, 2 * members[0].max_channels());
    auto member_sum = [members](std::span<const double> x) {
        double s = 0.0;
        for (const auto& c : members)
            s += sf::cnn_forward(c, x);
        return s;
    };
    check("parallel_sum", 2, 0.0, 1.0,
          [groups](auto x) {
              double s = 0.0;
              for (const auto& c : groups)
                  s += sf::cnn_forward(c, x);
              return s;
          },
          member_sum);

    const auto res = sf::assemble_resnet(groups);
    check("assemble_resnet", 2, 0.0, 1.0, [res](auto x) { return sf::resnet_forward(res, x); }, member_sum);

    const auto approx = sf::build_euclidean(sf::make_target("sinprod", 2, 2), 0.0, 0, 8, 2);
    check("build_euclidean", 2, 0.0, 1.0, [&](auto x) { return approx.compiled(x); }, approx.functional);

    double worst = 0.0;
    std::string detail;
    for (const auto& [name, d] : diffs) {
        worst = std::max(worst, d);
        detail += name + " " + num(d) + "; ";
    }
    return {worst <= 1e-8, detail};
}

Outcome euclidean_rate()
{
    g_rate_cfg.target = "sinprod";
    g_rate_cfg.dim = 2;
    g_rate_cfg.alpha = 2;
    g_rate_cfg.ns = {2, 4, 8, 16};
    g_rate_cfg.jt = 1;
    g_rate_cfg.compile = true;
    g_rate = sf::run_euclidean_rate(g_rate_cfg);
    double check_err = 0.0;
    std::string errs;
    for (const auto& r : g_rate.rows) {
        check_err = std::max(check_err, r.record.compile_check_error);
        errs += "N=" + std::to_string(r.n) + " (" + num(r.w0) + ", " + num(r.w1) + ") ";
    }
    const double s0 = g_rate.fit_w0.slope, s1 = g_rate.fit_w1.slope;
    return {s0 >= -2.6 && s0 <= -1.4 && s1 >= -1.6 && s1 <= -0.4 && check_err <= 1e-8,
            "slope W0 " + num(s0) + ", W1 " + num(s1) + "; " + errs + "; compile check " + num(check_err)};
}

Outcome polynomial()
{
    const auto f = sf::make_target("poly-xy", 2, 3);
    const auto a = sf::build_euclidean(f, 0.0, 0, 16, 1);
    const sf::EvalGrid grid(2, 200);
    sf::Evaluator sur = [&](std::span<const double> x) { return sf::surrogate_eval(*a.coefficients, x); };
    const double sur_err = sf::sobolev_error(sur, f, 0, sf::kInfinity, grid).total;
    sf::Evaluator net_err = [&](std::span<const double> x) { return a(x) - sur(x); };
    const double total = sf::sobolev_error(a.functional, f, 0, sf::kInfinity, grid).total;
    const double pure = sf::grid_norm(net_err, 0, sf::kInfinity, grid);
    const double c = total / a.record.eta;
    return {sur_err <= 1e-10 && std::abs(total - pure) <= 1e-10 && c <= 10.0,
            "surrogate err " + num(sur_err) + ", total " + num(total) + " = network " + num(pure) + ", c = " + num(c)};
}

Outcome class_audit()
{
    const auto f = sf::make_target("sinprod", 2, 2);
    const long long jt = 2;
    std::vector<double> jr, mr;
    bool ok = true;
    std::string detail;
    for (int n : {4, 8}) {
        const long long mt = sf::mt_for(n, jt, 2);
        const auto a = sf::build_euclidean(f, 0.0, 0, mt, jt);
        const auto& p = a.audit;
        ok = ok && p.K <= 2 && p.kappa1 <= 3.0 * n + 1.0 && p.first_row_only;
        jr.push_back(double(p.J) / double(jt));
        mr.push_back(double(p.M) / double(mt));
        detail += "N=" + std::to_string(n) + ": M=" + std::to_string(p.M) + " L=" + std::to_string(p.L) +
                  " J=" + std::to_string(p.J) + " K=" + std::to_string(p.K) + " k1=" + num(p.kappa1) +
                  " k2=" + num(p.kappa2) + " J/Jt=" + num(jr.back()) + " M/Mt=" + num(mr.back()) + "; ";
    }
    const double jd = std::max(jr[0], jr[1]) / std::min(jr[0], jr[1]);
    const double md = std::max(mr[0], mr[1]) / std::min(mr[0], mr[1]);
    ok = ok && jd < 2.0 && md < 2.0;
    return {ok, detail + "drift J " + num(jd) + ", M " + num(md)};
}

Outcome lipschitz()
{
    if (g_rate.rows.empty())
        return {false, "criterion 4 did not produce a fit"};
    const auto f = sf::make_target(g_rate_cfg.target, g_rate_cfg.dim, g_rate_cfg.alpha);
    const double c = g_rate.fit_w1.constant();
    const auto pairs = sf::sample_pairs(2, 20000, 41);
    const auto probes = uniform(2, 2000, 42);
    const double lip_f = sf::lipschitz_estimate(f.value, pairs, probes, sf::kSmoothStep);
    bool ok = true;
    std::string detail = "Lip f " + num(lip_f) + ", c " + num(c) + "; ";
    for (int n : {4, 8, 16}) {
        const auto a = sf::build_euclidean(f, 0.0, 0, sf::mt_for(n, 1, 2), 1, {.compile = false});
        const double est = sf::lipschitz_estimate(a.functional, pairs, probes);
        const double bound = 2.0 * (lip_f + std::sqrt(2.0) * c * std::pow(n, -(g_rate_cfg.alpha - 1)));
        ok = ok && est <= bound;
        detail += "N=" + std::to_string(n) + " " + num(est) + " <= " + num(bound) + "; ";
    }
    return {ok, detail};
}

Outcome manifold_rate()
{
    sf::ManifoldRateConfig c;
    c.manifold = "circle";
    c.ambient = 3;
    c.target = "circle-sin";
    c.alpha = 2;
    c.ns = {4, 8, 16, 32};
    const auto r = sf::run_manifold_rate(c);
    const double s0 = r.fit_w0.slope, s1 = r.fit_w1.slope;
    const double intrinsic = -c.alpha, ambient = -double(c.alpha) / 3.0;
    const bool closer = std::abs(s0 - intrinsic) < std::abs(s0 - ambient) && s0 < -1.2;
    return {s0 >= -2.6 && s0 <= -1.4 && s1 >= -1.6 && s1 <= -0.4 && closer,
            "slope W0 " + num(s0) + ", W1 " + num(s1) + ", charts " + std::to_string(r.rows[0].charts)};
}

Outcome chart_machinery()
{
    const auto m = sf::circle_manifold(3);
    const double r = 0.2;
    const sf::IndicatorParams ip{r, 0.4 * r * r, 1e-5, m.box, m.D};
    const auto ind = sf::build_indicator(ip);
    const double lo = ip.plateau_end(), hi = ip.effective_radius2();
    std::size_t bad_branch = 0;
    for (int i = 0; i < 1000; ++i) {
        const double a = 1.2 * r * r * (i + 0.5) / 1000.0;
        const double v = ind(a);
        if (a <= lo)
            bad_branch += v != 1.0;
        else if (a >= hi)
            bad_branch += v != 0.0;
        else
            bad_branch += std::abs(v - (hi - a) / (hi - lo)) > 1e-10;
    }

    std::mt19937_64 rng(50);
    const auto center = m.sample(rng);
    const sf::SqDistSpec sd{center, 1e-5, m.box};
    const auto sqn = sf::build_sqdist_net(center, sd.theta, sd.box);
    double worst_sq = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const auto x = m.sample(rng);
        worst_sq = std::max(worst_sq, std::abs(sqn(x) - sf::detail::dist2(x, center)));
    }

    const auto f = sf::make_manifold_target("circle-sin", m, 2);
    const auto a = sf::build_manifold_approx(f, m, 8, 1);
    const auto& model = *a.model;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t band = 0, nonzero = 0;
    while (band < 1000) {
        const std::size_t i = std::min(model.atlas->size() - 1, std::size_t(u(rng) * double(model.atlas->size())));
        const auto& ch = model.atlas->charts[i];
        const auto x = m.embed(sf::Vector{m.param_of(ch.center)[0] + (u(rng) - 0.5) * 0.6});
        if (sf::detail::dist2(x, ch.center) < model.indicator.effective_radius2())
            continue;
        ++band;
        nonzero += model.chart_term(i, x) != 0.0;
    }
    return {bad_branch == 0 && worst_sq <= sd.bound() && nonzero == 0,
            "indicator mismatches " + std::to_string(bad_branch) + "/1000, sqdist err " + num(worst_sq) +
                " <= " + num(sd.bound()) + ", band nonzeros " + std::to_string(nonzero) + "/1000"};
}

Outcome risk_suite()
{
    sf::RiskConfig cfg;
    cfg.samples = 2000;
    cfg.sigma = 0.2;
    cfg.eps = 0.1;
    cfg.repetitions = 200;
    const auto f = sf::make_target("sin2", 2, 2);
    const auto a = sf::risk_approximator(f, cfg.eps, 1);
    const auto rep = sf::empirical_residual_study(cfg, f, a);
    const auto gap = sf::adversarial_gap_check(cfg, f, a);
    std::string rows;
    for (const auto& r : gap.rows)
        rows += "d=" + num(r.delta) + " gap " + num(r.gap) + " <= " + num(r.bound) + "; ";
    return {rep.success_fraction >= rep.theoretical_floor && gap.passed,
            "success " + num(rep.success_fraction) + " >= floor " + num(rep.theoretical_floor) + "; " + rows};
}

} // namespace

int main()
{
    struct Criterion {
        int id;
        double limit_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> all{
        {1, 10, exact_constructions}, {2, 30, multiplication},   {3, 60, compilation},
        {4, 300, euclidean_rate},     {5, 60, polynomial},       {6, 120, class_audit},
        {7, 60, lipschitz},           {8, 600, manifold_rate},   {9, 120, chart_machinery},
        {10, 300, risk_suite},
    };
    bool all_passed = true;
    for (const auto& c : all) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = s < c.limit_s;
        const bool ok = o.passed && in_time;
        all_passed = all_passed && ok;
        std::printf("%s criterion %d: %s [%.2f s, limit %.0f s%s]\n", ok ? "PASS" : "FAIL", c.id, o.detail.c_str(), s,
                    c.limit_s, in_time ? "" : ", over time");
        std::fflush(stdout);
    }
    return all_passed ? 0 : 1;
}
