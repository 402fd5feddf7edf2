#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "sobolev_forge/rate_fit.hpp"
#include "sobolev_forge/sobolev_metrics.hpp"
#include "sobolev_forge/taylor.hpp"

namespace sf = sobolev_forge;

namespace {

std::vector<std::vector<double>> random_points(std::size_t d, std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<double>> xs(n, std::vector<double>(d));
    for (auto& x : xs)
        for (auto& v : x)
            v = u(rng);
    return xs;
}

} // namespace

TEST(BumpWeight, CentreAndEdge)
{
    EXPECT_EQ(sf::bump_weight({1, 2}, 4, std::vector<double>{0.25, 0.5}), 1.0);
    EXPECT_EQ(sf::bump_weight({1, 2}, 4, std::vector<double>{0.5, 0.5}), 0.0);
}

TEST(Targets, DerivativesMatchFiniteDifferences)
{
    for (const auto& name : sf::euclidean_target_names()) {
        const auto f = sf::make_target(name, 2, 3);
        for (const auto& x : random_points(2, 20, 5)) {
            for (std::size_t j = 0; j < 2; ++j) {
                sf::MultiIndex a(2, 0);
                a[j] = 1;
                const double exact = f.derivative(x, a);
                const double fd = sf::fd_partial(f.value, x, j, 1e-5, -1.0, 2.0);
                EXPECT_NEAR(fd, exact, 1e-4 * std::max(1.0, std::abs(exact))) << name;
            }
        }
    }
}

TEST(TaylorCoeffs, PolynomialExactness)
{
    const auto f = sf::monomial_target({2, 0}, 3);
    for (int n : {1, 3, 4}) {
        const auto c = sf::taylor_coeffs(f, n);
        for (const auto& x : random_points(2, 200, 6))
            EXPECT_NEAR(sf::surrogate_eval(c, x), f(x), 1e-12);
    }
}

TEST(TaylorCoeffs, ConstantTarget)
{
    const auto f = sf::constant_target(2, 2, 1.0);
    const auto c = sf::taylor_coeffs(f, 3);
    const std::size_t e = c.exponents.size();
    for (std::size_t i = 0; i < c.values.size(); ++i)
        EXPECT_EQ(c.values[i], i % e == 0 ? 1.0 : 0.0);
}

TEST(TaylorCoeffs, SineRateConstantStable)
{
    const auto f = sf::make_target("sin2", 1, 2);
    const sf::EvalGrid grid(1, 4000);
    std::vector<double> consts;
    for (int n : {4, 8, 16}) {
        const auto c = sf::taylor_coeffs(f, n);
        sf::Evaluator sur = [&](std::span<const double> x) { return sf::surrogate_eval(c, x); };
        const double err = sf::sobolev_error(sur, f, 0, sf::kInfinity, grid).total;
        consts.push_back(err * n * n);
    }
    for (std::size_t i = 1; i < consts.size(); ++i)
        EXPECT_LT(std::max(consts[i], consts[i - 1]) / std::min(consts[i], consts[i - 1]), 2.0);
}

TEST(SurrogateEval, SinProductRate)
{
    const auto f = sf::make_target("sinprod", 2, 2);
    const sf::EvalGrid grid(2, 200);
    std::vector<double> ns, errs;
    for (int n : {3, 5, 9, 17}) {
        const auto c = sf::taylor_coeffs(f, n);
        sf::Evaluator sur = [&](std::span<const double> x) { return sf::surrogate_eval(c, x); };
        ns.push_back(n);
        errs.push_back(sf::sobolev_error(sur, f, 0, sf::kInfinity, grid).total);
    }
    const auto fit = sf::fit_loglog(ns, errs);
    EXPECT_NEAR(fit.slope, -2.0, 0.6);
}

TEST(SurrogateEval, ZeroOutsideSupports)
{
    sf::SurrogateCoefficients c = sf::taylor_coeffs(sf::constant_target(1, 1, 0.0), 4);
    c.values[0] = 1.0;
    EXPECT_EQ(sf::surrogate_eval(c, std::vector<double>{0.9}), 0.0);
    EXPECT_EQ(sf::surrogate_eval(c, std::vector<double>{0.0}), 1.0);
}

TEST(GridResolution, FloorOfRoot)
{
    EXPECT_EQ(sf::grid_resolution(16, 1, 2), 4);
    EXPECT_EQ(sf::grid_resolution(4, 4, 2), 4);
    EXPECT_EQ(sf::grid_resolution(24, 1, 2), 4);
    EXPECT_EQ(sf::grid_resolution(8, 1, 3), 2);
    EXPECT_EQ(sf::grid_resolution(7, 1, 1), 7);
}

TEST(BuildEuclidean, ZeroTarget)
{
    const auto f = sf::constant_target(2, 2, 0.0);
    const auto a = sf::build_euclidean(f, 0.0, 0, 16, 1);
    for (const auto& x : random_points(2, 20, 7)) {
        EXPECT_EQ(a(x), 0.0);
        EXPECT_EQ(a.compiled(x), 0.0);
    }
    EXPECT_EQ(a.record.summands, 0u);
    EXPECT_EQ(a.coefficients->max_abs(), 0.0);
}

TEST(BuildEuclidean, PolynomialIsPureNetworkError)
{
    const auto f = sf::make_target("poly-xy", 2, 3);
    const auto a = sf::build_euclidean(f, 0.0, 0, 16, 1);
    const sf::EvalGrid grid(2, 100);
    sf::Evaluator sur = [&](std::span<const double> x) { return sf::surrogate_eval(*a.coefficients, x); };
    EXPECT_LE(sf::sobolev_error(sur, f, 0, sf::kInfinity, grid).total, 1e-10);
    const double err = sf::sobolev_error(a.functional, f, 0, sf::kInfinity, grid).total;
    EXPECT_LE(err, 10.0 * a.record.eta);
}

TEST(BuildEuclidean, CompiledMatchesFunctional)
{
    const auto f = sf::make_target("gauss-bump", 2, 2);
    const auto a = sf::build_euclidean(f, 0.0, 0, 3, 3);
    ASSERT_TRUE(a.network);
    for (const auto& x : random_points(2, 100, 8))
        EXPECT_NEAR(a.compiled(x), a(x), 1e-9);
    EXPECT_LE(a.audit.K, 2u);
    EXPECT_LE(a.audit.kappa1, 3.0 * a.record.n + 1.0);
}

TEST(BuildEuclidean, Preconditions)
{
    const auto f = sf::make_target("sin2", 2, 2);
    EXPECT_THROW(sf::build_euclidean(f, 0.0, 0, 1, 1), sf::PreconditionError);
    EXPECT_THROW(sf::build_euclidean(f, 1.5, 0, 16, 1), sf::PreconditionError);
    EXPECT_THROW(sf::build_euclidean(f, 0.0, 0, 0, 1), sf::PreconditionError);
}

TEST(BuildEuclidean, CoefficientBoundMeasured)
{
    const auto f = sf::make_target("sinprod", 2, 2);
    std::vector<double> c1;
    for (int n : {4, 8}) {
        const auto c = sf::taylor_coeffs(f, n);
        c1.push_back(c.max_abs() / f.norm_bound);
    }
    for (double v : c1)
        EXPECT_LT(v, 10.0);
}
