#include <gtest/gtest.h>

#include <fstream>

#include "sobolev_forge/study.hpp"

namespace sf = sobolev_forge;
using sf::json;

namespace {

std::filesystem::path scratch(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("sf_study_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

json euclid_config(const std::filesystem::path& out)
{
    return json{{"kind", "euclidean-rate"}, {"target", "gauss-bump"}, {"D", 1},   {"alpha", 2},
                {"s", 0},                   {"p", "inf"},             {"N", {4, 8, 16}}, {"Jt", 1},
                {"compile", false},         {"out", out.string()},    {"checks", {{"slope", {-2.6, -1.4}}}}};
}

} // namespace

TEST(Config, MissingAlphaNamesField)
{
    auto j = euclid_config("x");
    j.erase("alpha");
    try {
        sf::parse_study_config(j);
        FAIL() << "expected ConfigError";
    } catch (const sf::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("alpha"), std::string::npos);
    }
}

TEST(Config, UnknownKeyRejected)
{
    auto j = euclid_config("x");
    j["aplha"] = 2;
    try {
        sf::parse_study_config(j);
        FAIL() << "expected ConfigError";
    } catch (const sf::ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("aplha"), std::string::npos);
    }
}

TEST(Config, BadValues)
{
    auto j = euclid_config("x");
    j["p"] = "two";
    EXPECT_THROW(sf::parse_study_config(j), sf::ConfigError);
    j = euclid_config("x");
    j["kind"] = "bogus";
    EXPECT_THROW(sf::parse_study_config(j), sf::ConfigError);
    j = euclid_config("x");
    j["target"] = "nope";
    EXPECT_THROW(sf::parse_study_config(j), sf::ConfigError);
    j = json{{"kind", "risk"}, {"target", "sin2"}, {"D", 2}, {"alpha", 2}, {"eps", 0.5}};
    EXPECT_THROW(sf::parse_study_config(j), sf::ConfigError);
}

TEST(Config, MtForGrid)
{
    EXPECT_EQ(sf::mt_for(4, 1, 2), 16);
    EXPECT_EQ(sf::mt_for(4, 4, 2), 4);
    EXPECT_EQ(sf::mt_for(8, 3, 2), 22);
}

TEST(Study, EuclideanRateArtifactsAndReproducibility)
{
    const auto out = scratch("euclid");
    const auto c = sf::parse_study_config(euclid_config(out));
    const auto o = sf::run_study(c);
    const auto csv = slurp(out / "euclidean_rate.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    const auto summary = json::parse(slurp(out / "summary.json"));
    EXPECT_NEAR(summary["slope"].get<double>(), -2.0, 0.6);
    EXPECT_TRUE(o.passed());
    EXPECT_TRUE(std::filesystem::exists(out / "euclidean_rate.svg"));
    sf::run_study(c);
    EXPECT_EQ(slurp(out / "euclidean_rate.csv"), csv);
    std::filesystem::remove_all(out);
}

TEST(Study, FailedCheckReported)
{
    const auto out = scratch("fail");
    auto j = euclid_config(out);
    j["N"] = {4, 8};
    j["checks"] = {{"slope", {0.0, 1.0}}};
    const auto o = sf::run_study(sf::parse_study_config(j));
    EXPECT_FALSE(o.passed());
    EXPECT_FALSE(json::parse(slurp(out / "summary.json"))["passed"].get<bool>());
    std::filesystem::remove_all(out);
}

TEST(Study, UnknownCheckName)
{
    auto j = euclid_config(scratch("unk"));
    j["N"] = {4, 8};
    j["checks"] = {{"slopes", {0.0, 1.0}}};
    EXPECT_THROW(sf::run_study(sf::parse_study_config(j)), sf::ConfigError);
}

TEST(Study, AuditOfSavedNetwork)
{
    const auto out = scratch("audit");
    std::filesystem::create_directories(out);
    const auto f = sf::make_target("sin2", 2, 2);
    const auto a = sf::build_euclidean(f, 0.0, 0, 9, 1);
    sf::save_resnet(*a.network, out / "net.json");
    const json j{{"kind", "audit"}, {"network", (out / "net.json").string()}, {"out", out.string()}};
    const auto o = sf::run_study(sf::parse_study_config(j));
    EXPECT_EQ(o.summary, sf::to_json(sf::audit_class(*a.network)));
    std::filesystem::remove_all(out);
}

TEST(Output, CsvAndFormatting)
{
    sf::CsvTable t({"a", "b"});
    t.add({"1", sf::fmt(0.1)});
    EXPECT_EQ(t.str(), "a,b\n1,0.1\n");
    EXPECT_THROW(t.add({"1"}), sf::ShapeError);
    EXPECT_EQ(sf::fmt(sf::kInfinity), "inf");
    EXPECT_EQ(std::stod(sf::fmt(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Output, SvgIsWellFormed)
{
    const auto svg = sf::loglog_svg("t", {{"e", {2, 4, 8}, {1, 0.25, 0.0625}, sf::fit_loglog({2, 4, 8}, {1, 0.25, 0.0625})}});
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_NE(svg.find("slope -2"), std::string::npos);
}
