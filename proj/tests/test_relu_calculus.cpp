#include <gtest/gtest.h>

#include <random>

#include "sobolev_forge/relu_calculus.hpp"
#include "sobolev_forge/taylor.hpp"

namespace sf = sobolev_forge;

// Independent oracle: the piecewise definition, written out again.
static double psi_oracle(double t)
{
    t = t < 0 ? -t : t;
    return t < 1 ? 1.0 : (t <= 2 ? 2.0 - t : 0.0);
}

TEST(Trapezoid, SpecExamples)
{
    EXPECT_EQ(sf::build_trapezoid(0, 1)(0.0), 1.0);
    EXPECT_DOUBLE_EQ(sf::build_trapezoid(0, 1)(0.5), 0.5);
    EXPECT_EQ(sf::build_trapezoid(2, 4)(0.5), 1.0);
}

TEST(Trapezoid, MatchesPsiEverywhere)
{
    for (int n : {1, 2, 4, 8})
        for (int m = 0; m <= n; ++m) {
            const auto net = sf::build_trapezoid(m, n);
            for (int i = 0; i <= 1000; ++i) {
                const double x = (i + 0.37) / 1000.0;
                EXPECT_NEAR(net(x), psi_oracle(3.0 * n * (x - static_cast<double>(m) / n)), 1e-12);
            }
        }
}

TEST(Trapezoid, ExactZeroOffSupportAndOneOnPlateau)
{
    const auto net = sf::build_trapezoid(1, 4);
    EXPECT_EQ(net(0.0), 0.0);
    EXPECT_EQ(net(0.5), 0.0);
    EXPECT_EQ(net(0.25), 1.0);
    EXPECT_EQ(net(0.26), 1.0);
}

TEST(Trapezoid, RejectsBadIndex)
{
    EXPECT_THROW(sf::build_trapezoid(5, 4), sf::PreconditionError);
    EXPECT_THROW(sf::build_trapezoid(0, 0), sf::PreconditionError);
}

TEST(PartitionOfUnity, SumsToOne)
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t d : {1u, 2u, 3u})
        for (int n : {1, 3, 4}) {
            for (int i = 0; i < 2000; ++i) {
                std::vector<double> x(d);
                for (auto& v : x)
                    v = u(rng);
                double s = 0.0;
                std::vector<int> m(d, 0);
                while (true) {
                    s += sf::bump_weight(m, n, x);
                    std::size_t k = 0;
                    while (k < d && ++m[k] > n)
                        m[k++] = 0;
                    if (k == d)
                        break;
                }
                EXPECT_NEAR(s, 1.0, 1e-12);
            }
        }
}

TEST(Square, ZeroAndDyadicExactness)
{
    for (double theta : {0.1, 1e-3, 1e-5}) {
        const auto net = sf::build_square(theta, 1.0);
        EXPECT_EQ(net(0.0), 0.0);
        EXPECT_EQ(net(0.5), 0.25);
    }
}

TEST(Square, GridErrorWithinTheta)
{
    const auto net = sf::build_square(1e-3, 1.0);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double x = -1.0 + 2.0 * (i + 0.5) / 10000.0;
        worst = std::max(worst, std::abs(net(x) - x * x));
    }
    EXPECT_LE(worst, 1e-3);
    EXPECT_EQ(net.accuracy, 1e-3);
}

TEST(Square, EvenAndBoxScaled)
{
    const auto net = sf::build_square(1e-3, 3.0);
    for (double x : {0.1, 0.77, 2.5, 2.99}) {
        EXPECT_EQ(net(x), net(-x));
        EXPECT_LE(std::abs(net(x) - x * x), 1e-3);
    }
}

TEST(Square, ThetaOutOfRangeThrows)
{
    EXPECT_THROW(sf::build_square(0.5, 1.0), sf::PreconditionError);
    EXPECT_THROW(sf::build_square(0.0, 1.0), sf::PreconditionError);
}

TEST(Product, ZeroAnnihilation)
{
    const auto net = sf::build_product2(1e-3, 1.0);
    const std::vector<double> a{0.37, 0.0}, b{0.0, -0.9}, c{0.0, 0.0};
    EXPECT_EQ(net(a), 0.0);
    EXPECT_EQ(net(b), 0.0);
    EXPECT_EQ(net(c), 0.0);
}

TEST(Product, SpecExample)
{
    const auto net = sf::build_product2(1e-3, 1.0);
    const std::vector<double> x{0.7, -0.3};
    EXPECT_LE(std::abs(net(x) + 0.21), 1e-3);
}

TEST(Product, NetworkMatchesClosedForm)
{
    const auto p = sf::product_spec(1e-4, 4.0);
    const auto net = sf::build_product2(p);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    for (int i = 0; i < 1000; ++i) {
        const std::vector<double> x{u(rng), u(rng)};
        EXPECT_NEAR(net(x), sf::product_value(p, x[0], x[1]), 1e-10);
        EXPECT_LE(std::abs(net(x) - x[0] * x[1]), 1e-4);
    }
}

TEST(MonomialBump, VanishesOffSupport)
{
    const sf::MonomialBumpSpec s{{1, 2}, {1, 0}, 4, 3, 1e-3};
    const auto net = sf::build_monomial_bump(s);
    for (double off : {2.0 / 12.0, 0.2, 0.4}) {
        const std::vector<double> x{0.25 + off, 0.5};
        EXPECT_EQ(net(x), 0.0);
        EXPECT_EQ(sf::monomial_bump_value(s, x), 0.0);
    }
}

TEST(MonomialBump, CenterNearOne)
{
    const sf::MonomialBumpSpec s{{2, 3}, {0, 0}, 4, 2, 1e-3};
    const std::vector<double> x{0.5, 0.75};
    EXPECT_NEAR(sf::build_monomial_bump(s)(x), 1.0, 10 * s.eps);
}

TEST(MonomialBump, OneDimensionalExample)
{
    const sf::MonomialBumpSpec s{{0}, {1}, 1, 2, 1e-3};
    const std::vector<double> x{0.2};
    EXPECT_NEAR(sf::build_monomial_bump(s)(x), 0.2, 1e-3);
    EXPECT_EQ(sf::bump_monomial_exact(s, x), 0.2);
}

TEST(MonomialBump, NetworkMatchesFunctional)
{
    const sf::MonomialBumpSpec s{{1, 1}, {1, 1}, 2, 3, 1e-4};
    const auto net = sf::build_monomial_bump(s);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        const std::vector<double> x{u(rng), u(rng)};
        EXPECT_NEAR(net(x), sf::monomial_bump_value(s, x), 1e-10);
        EXPECT_NEAR(net(x), sf::bump_monomial_exact(s, x), 10 * s.eps);
    }
}

TEST(MonomialBump, DegreeGuard)
{
    EXPECT_THROW(sf::build_monomial_bump({{0}, {2}, 1, 2, 0.1}), sf::PreconditionError);
}
