#include <gtest/gtest.h>

#include <numbers>

#include "sobolev_forge/net_algebra.hpp"
#include "sobolev_forge/rate_fit.hpp"
#include "sobolev_forge/relu_calculus.hpp"
#include "sobolev_forge/sobolev_metrics.hpp"

namespace sf = sobolev_forge;

TEST(GridNorm, LinearFunction)
{
    const sf::EvalGrid grid(2, 50);
    sf::Evaluator g = [](std::span<const double> x) { return x[0]; };
    const double w0 = sf::grid_norm(g, 0, sf::kInfinity, grid);
    EXPECT_NEAR(w0, 1.0 - 0.5 / 50, 1e-6);
    EXPECT_NEAR(sf::grid_norm(g, 1, sf::kInfinity, grid), 1.0, 1e-8);
}

TEST(GridNorm, ConstantEveryExponent)
{
    const sf::EvalGrid grid(2, 20);
    sf::Evaluator g = [](std::span<const double>) { return -2.5; };
    for (int k : {0, 1})
        for (double p : {1.0, 2.0, sf::kInfinity})
            EXPECT_NEAR(sf::grid_norm(g, k, p, grid), 2.5, 1e-9) << k << " " << p;
}

TEST(GridNorm, SineSup)
{
    const sf::EvalGrid grid(1, 201);
    sf::Evaluator g = [](std::span<const double> x) { return std::sin(2.0 * std::numbers::pi * x[0]); };
    EXPECT_NEAR(sf::grid_norm(g, 0, sf::kInfinity, grid), 1.0, 1e-3);
}

TEST(FdPartial, QuadraticExact)
{
    sf::Evaluator g = [](std::span<const double> x) { return x[1] * x[1]; };
    const std::vector<double> x{0.1, 0.3};
    for (double h : {1e-2, 1e-4})
        EXPECT_NEAR(sf::fd_partial(g, x, 1, h), 0.6, 1e-10);
    sf::Evaluator lin = [](std::span<const double> x) { return 3.0 * x[0] - x[1]; };
    EXPECT_NEAR(sf::fd_partial(lin, x, 0, 1e-6), 3.0, 1e-8);
}

TEST(FdPartial, CompiledPsiSlopes)
{
    const int n = 4;
    const auto net = sf::build_trapezoid(1, n);
    sf::Evaluator g = [&](std::span<const double> x) { return net(x); };
    const std::vector<double> ramp_up{0.1}, flat{0.25}, ramp_down{0.4}, off{0.8};
    EXPECT_NEAR(sf::fd_partial(g, ramp_up, 0, sf::kNetworkStep), 3.0 * n, 1e-6);
    EXPECT_NEAR(sf::fd_partial(g, flat, 0, sf::kNetworkStep), 0.0, 1e-9);
    EXPECT_NEAR(sf::fd_partial(g, ramp_down, 0, sf::kNetworkStep), -3.0 * n, 1e-6);
    EXPECT_EQ(sf::fd_partial(g, off, 0, sf::kNetworkStep), 0.0);
}

TEST(Holder, ConstantAndIdentity)
{
    const auto pairs = sf::sample_pairs(1, sf::kMinHolderPairs, 3);
    sf::Evaluator c = [](std::span<const double>) { return 4.0; };
    EXPECT_EQ(sf::holder_quotient(c, 0.5, pairs), 0.0);
    sf::Evaluator id = [](std::span<const double> x) { return x[0]; };
    const double q = sf::holder_quotient(id, 0.5, pairs);
    EXPECT_LE(q, 1.0 + 1e-12);
    EXPECT_GT(q, 0.95);
}

TEST(Holder, TooFewPairsThrows)
{
    sf::Evaluator id = [](std::span<const double> x) { return x[0]; };
    EXPECT_THROW(sf::holder_quotient(id, 0.5, sf::sample_pairs(1, 10, 1)), sf::PreconditionError);
}

TEST(Holder, InterpolationBoundPerPair)
{
    sf::Evaluator g = [](std::span<const double> x) { return std::sin(5.0 * x[0]) * x[1]; };
    const auto v = sf::evaluate_pairs(g, sf::sample_pairs(2, 4000, 5));
    for (double s : {0.25, 0.5, 0.75})
        EXPECT_LE(sf::interpolation_ratio(v, s, 0.0), 1.0 + 1e-12);
}

TEST(Lipschitz, LinearMap)
{
    sf::Evaluator g = [](std::span<const double> x) { return 3.0 * x[0] - 4.0 * x[1]; };
    const auto pairs = sf::sample_pairs(2, 2000, 7);
    const std::vector<std::vector<double>> probes{{0.3, 0.3}, {0.7, 0.2}};
    EXPECT_NEAR(sf::lipschitz_estimate(g, pairs, probes), 5.0, 1e-6);
    sf::Evaluator c = [](std::span<const double>) { return 1.0; };
    EXPECT_EQ(sf::lipschitz_estimate(c, pairs, probes), 0.0);
}

TEST(RateFit, ExactPowerLaw)
{
    const std::vector<double> n{2, 4, 8, 16};
    std::vector<double> e;
    for (double v : n)
        e.push_back(3.0 * std::pow(v, -2.0));
    const auto f = sf::fit_loglog(n, e);
    EXPECT_NEAR(f.slope, -2.0, 1e-12);
    EXPECT_NEAR(f.constant(), 3.0, 1e-10);
    EXPECT_NEAR(f.r2, 1.0, 1e-12);
    EXPECT_THROW(sf::fit_loglog({2.0}, {1.0}), sf::PreconditionError);
    EXPECT_THROW(sf::fit_loglog({2.0, 4.0}, {1.0, 0.0}), sf::PreconditionError);
}
