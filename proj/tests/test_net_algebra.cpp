#include <gtest/gtest.h>

#include <random>

#include "sobolev_forge/net_algebra.hpp"
#include "sobolev_forge/relu_calculus.hpp"

namespace sf = sobolev_forge;

namespace {

double psi_at(double t)
{
    const std::vector<double> x{t};
    return sf::mlp_forward(sf::psi_reference_mlp(), x)[0];
}

// psi MLP lifted to two inputs, reading only the first coordinate.
sf::MlpModel psi_mlp_2d()
{
    auto m = sf::psi_reference_mlp();
    m.weights[0] = sf::Matrix::from_rows({{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}});
    return m;
}

} // namespace

TEST(MlpToCnn, PsiAgreesOnGrid)
{
    const auto cnn = sf::mlp_to_cnn(psi_mlp_2d(), 2);
    for (int i = 0; i <= 1000; ++i) {
        const double t = -3.0 + 6.0 * i / 1000.0;
        const std::vector<double> x{t, 0.3};
        EXPECT_NEAR(sf::cnn_forward(cnn, x), psi_at(t), 1e-9);
    }
}

TEST(MlpToCnn, ZeroMlp)
{
    sf::MlpModel m;
    m.weights.emplace_back(3, 2);
    m.biases.push_back({0.0, 0.0, 0.0});
    m.weights.emplace_back(1, 3);
    m.biases.push_back({0.0});
    const auto cnn = sf::mlp_to_cnn(m, 2);
    const std::vector<double> x{0.4, -2.0};
    EXPECT_EQ(sf::cnn_forward(cnn, x), 0.0);
}

TEST(MlpToCnn, ArchitectureBounds)
{
    const auto mlp = psi_mlp_2d();
    const auto cnn = sf::mlp_to_cnn(mlp, 2);
    const auto a = sf::audit_cnn(cnn);
    const std::size_t l = mlp.depth() - 1;
    EXPECT_LE(a.L, l + 2);
    EXPECT_LE(a.J, 4 * mlp.max_width());
    EXPECT_LE(a.K, 2u);
    EXPECT_TRUE(cnn.first_row_only);
}

TEST(MlpToCnn, OneDimensionalInput)
{
    const auto net = sf::build_trapezoid(1, 2);
    const auto cnn = sf::mlp_to_cnn(net, 2);
    for (int i = 0; i <= 200; ++i) {
        const std::vector<double> x{i / 200.0};
        EXPECT_EQ(sf::cnn_forward(cnn, x), net(x));
    }
}

TEST(ComposeCnn, PsiThenSquare)
{
    const auto psi = sf::build_trapezoid(1, 2, 2, 0);
    const auto sq = sf::build_square(1e-3, 1.0);
    const auto f1 = sf::mlp_to_cnn(psi, 2);
    const auto f2 = sf::mlp_to_cnn(sq, 2);
    const auto g = sf::compose_cnn(f1, f2);
    EXPECT_EQ(g.depth(), f1.depth() + f2.depth());
    for (int i = 0; i <= 100; ++i) {
        const std::vector<double> x{i / 100.0, 0.5};
        const double inner = sf::cnn_forward(f1, x);
        const std::vector<double> y{inner};
        EXPECT_NEAR(sf::cnn_forward(g, x), sq(y), 1e-12);
    }
}

TEST(ComposeCnn, IdentityOuter)
{
    const auto f1 = sf::mlp_to_cnn(sf::build_trapezoid(0, 1, 2, 1), 2);
    sf::MlpModel id;
    id.weights.push_back(sf::Matrix::from_rows({{1.0}}));
    id.biases.push_back({0.0});
    id.weights.push_back(sf::Matrix::from_rows({{1.0}}));
    id.biases.push_back({0.0});
    const auto g = sf::compose_cnn(f1, sf::mlp_to_cnn(id, 2));
    for (int i = 0; i <= 100; ++i) {
        const std::vector<double> x{0.2, i / 100.0};
        EXPECT_NEAR(sf::cnn_forward(g, x), sf::cnn_forward(f1, x), 1e-12);
    }
}

TEST(ParallelSum, FourCopiesInTwoGroups)
{
    const auto c = sf::mlp_to_cnn(sf::build_trapezoid(1, 2, 2, 0), 2);
    const std::size_t j0 = c.max_channels();
    const auto groups = sf::parallel_sum({c, c, c, c}, 2 * j0);
    ASSERT_EQ(groups.size(), 2u);
    for (int i = 0; i <= 100; ++i) {
        const std::vector<double> x{i / 100.0, 0.1};
        double s = 0.0;
        for (const auto& g : groups)
            s += sf::cnn_forward(g, x);
        EXPECT_NEAR(s, 4.0 * sf::trapezoid_value(1, 2, x[0]), 1e-12);
    }
    for (const auto& g : groups) {
        EXPECT_EQ(g.kappa1(), c.kappa1());
        EXPECT_EQ(sf::max_abs(g.fc_weight.data()), sf::max_abs(c.fc_weight.data()));
        EXPECT_DOUBLE_EQ(g.fc_bias, 2.0 * c.fc_bias);
    }
}

TEST(ParallelSum, SingleMemberUnchanged)
{
    const auto c = sf::mlp_to_cnn(sf::build_trapezoid(0, 2, 2, 1), 2);
    const auto groups = sf::parallel_sum({c}, c.max_channels());
    ASSERT_EQ(groups.size(), 1u);
    for (int i = 0; i <= 50; ++i) {
        const std::vector<double> x{0.7, i / 50.0};
        EXPECT_EQ(sf::cnn_forward(groups[0], x), sf::cnn_forward(c, x));
    }
}

TEST(ParallelSum, RejectsNarrowGroups)
{
    const auto c = sf::mlp_to_cnn(sf::build_trapezoid(0, 2, 2, 1), 2);
    EXPECT_THROW(sf::parallel_sum({c}, c.max_channels() - 1), sf::PreconditionError);
}

TEST(AssembleResnet, SumOfTwoTrapezoids)
{
    const auto a = sf::mlp_to_cnn(sf::build_trapezoid(0, 2, 2, 0), 2);
    const auto b = sf::mlp_to_cnn(sf::build_trapezoid(1, 2, 2, 0), 2);
    const auto net = sf::assemble_resnet({a, b});
    EXPECT_EQ(net.blocks.size(), 2u);
    for (int i = 0; i <= 200; ++i) {
        const std::vector<double> x{i / 200.0, 0.5};
        EXPECT_NEAR(sf::resnet_forward(net, x), sf::trapezoid_value(0, 2, x[0]) + sf::trapezoid_value(1, 2, x[0]),
                    1e-12);
    }
    const auto p = sf::audit_class(net);
    const double k2 = std::max(a.kappa2(), b.kappa2());
    const double k1 = std::max(a.kappa1(), b.kappa1());
    EXPECT_LE(p.kappa2, k2 * std::max(1.0, 1.0 / k1) + 1e-12);
    EXPECT_TRUE(p.first_row_only);
}

TEST(AssembleResnet, SingleCnn)
{
    const auto sq = sf::build_square(1e-2, 1.0);
    const auto c = sf::compose_cnn(sf::mlp_to_cnn(sf::build_trapezoid(1, 4, 2, 1), 2), sf::mlp_to_cnn(sq, 2));
    const auto net = sf::assemble_resnet({c});
    EXPECT_EQ(net.blocks.size(), 1u);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const std::vector<double> x{u(rng), u(rng)};
        EXPECT_NEAR(sf::resnet_forward(net, x), sf::cnn_forward(c, x), 1e-12);
    }
}

TEST(CnnJson, Roundtrip)
{
    const auto c = sf::mlp_to_cnn(sf::build_product2(1e-2, 1.0), 2);
    const auto back = sf::cnn_from_json(sf::to_json(c));
    const std::vector<double> x{0.3, -0.6};
    EXPECT_EQ(sf::cnn_forward(back, x), sf::cnn_forward(c, x));
}
