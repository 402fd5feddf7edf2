// Batch front end: build, eval, audit, studies and network IO.

#include <cstdio>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "sobolev_forge/parallel.hpp"
#include "sobolev_forge/study.hpp"

namespace sf = sobolev_forge;

namespace {

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    unsigned threads = 0;
};

struct BuildArgs {
    std::string target = "sinprod";
    std::size_t dim = 2;
    int alpha = 2;
    double s = 0.0;
    long long mt = 16;
    long long jt = 1;
};

sf::StudyConfig study_from(const Globals& g, const std::vector<std::string>& kinds)
{
    if (g.config.empty())
        throw sf::ConfigError("--config is required for this subcommand");
    auto c = sf::load_study_config(g.config);
    if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end())
        throw sf::ConfigError("config kind \"" + c.kind + "\" does not match this subcommand");
    if (g.seed_set) {
        c.seed = g.seed;
        c.euclidean.seed = g.seed;
        c.manifold.seed = g.seed;
        c.risk.risk.seed = g.seed;
        c.risk.risk.budget.seed = g.seed + 1;
    }
    if (!g.out.empty())
        c.out = g.out;
    return c;
}

int report(const sf::StudyOutcome& o)
{
    for (const auto& f : o.files)
        std::cout << "wrote " << f.string() << "\n";
    for (const auto& c : o.checks)
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " = " << sf::fmt(c.value) << " in ["
                  << sf::fmt(c.lo) << ", " << sf::fmt(c.hi) << "]\n";
    return o.passed() ? 0 : 1;
}

sf::ConstructedApproximator build(const BuildArgs& b, std::uint64_t seed)
{
    const auto names = sf::euclidean_target_names();
    if (std::find(names.begin(), names.end(), b.target) == names.end())
        throw sf::ConfigError("unknown target \"" + b.target + "\"");
    const auto f = sf::make_target(b.target, b.dim, b.alpha);
    sf::EuclideanOptions opt;
    opt.seed = seed;
    return sf::build_euclidean(f, b.s, 0, b.mt, b.jt, opt);
}

std::vector<double> parse_point(const std::string& s)
{
    std::vector<double> x;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        try {
            x.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw sf::ConfigError("bad coordinate \"" + tok + "\" in point \"" + s + "\"");
        }
    return x;
}

std::vector<std::vector<double>> random_points(std::size_t dim, std::size_t count, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<double>> xs(count, std::vector<double>(dim));
    for (auto& x : xs)
        for (auto& v : x)
            v = u(rng);
    return xs;
}

int roundtrip(const std::string& path, std::uint64_t seed)
{
    const auto net = sf::load_resnet(path);
    const auto tmp = std::filesystem::temp_directory_path() /
                     ("sobolev_forge_rt_" + std::to_string(std::random_device{}()) + ".json");
    sf::save_resnet(net, tmp);
    const auto back = sf::load_resnet(tmp);
    std::filesystem::remove(tmp);
    double worst = 0.0;
    for (const auto& x : random_points(net.input_dim, 100, seed))
        worst = std::max(worst, std::abs(sf::resnet_forward(net, x) - sf::resnet_forward(back, x)));
    std::cout << "roundtrip max difference at 100 points: " << sf::fmt(worst) << "\n";
    return worst == 0.0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Constructive ReLU ConvResNet approximators with Sobolev-norm verification"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "study config (JSON)");
    auto* seed_opt = app.add_option("--seed", g.seed, "random seed");
    app.add_option("--out", g.out, "output directory or file");
    app.add_option("--threads", g.threads, "worker threads (else SOBOLEV_FORGE_THREADS)");

    BuildArgs ba;
    auto add_build_opts = [&](CLI::App* s) {
        s->add_option("--target", ba.target, "target name");
        s->add_option("--dim", ba.dim, "input dimension D");
        s->add_option("--alpha", ba.alpha, "smoothness alpha");
        s->add_option("--s", ba.s, "error order s in [0,1]");
        s->add_option("--Mt", ba.mt, "number of groups");
        s->add_option("--Jt", ba.jt, "members per group");
    };

    auto* build_cmd = app.add_subcommand("build", "compile an approximator and save its network");
    add_build_opts(build_cmd);

    std::string network;
    std::vector<std::string> points;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved network");
    eval_cmd->add_option("--network", network, "saved network")->required();
    eval_cmd->add_option("--point", points, "comma-separated point, repeatable");

    auto* audit_cmd = app.add_subcommand("audit", "class audit of a saved network or an audit study");
    audit_cmd->add_option("--network", network, "saved network");

    auto* rate_cmd = app.add_subcommand("rate-study", "Euclidean rate study");
    auto* mani_cmd = app.add_subcommand("manifold-study", "manifold rate study");
    auto* risk_cmd = app.add_subcommand("risk-study", "residual and adversarial risk study");
    auto* adv_cmd = app.add_subcommand("adv-study", "adversarial gap study");

    std::string io_action, io_path;
    auto* io_cmd = app.add_subcommand("net-io", "save, load or roundtrip a network file");
    io_cmd->add_option("action", io_action, "save | load | roundtrip")
        ->required()
        ->check(CLI::IsMember({"save", "load", "roundtrip"}));
    io_cmd->add_option("path", io_path, "network file")->required();
    add_build_opts(io_cmd);

    for (auto* s : app.get_subcommands({}))
        s->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    g.seed_set = seed_opt->count() > 0;
    if (!g.seed_set)
        g.seed = 7;
    if (g.threads)
        sf::set_thread_count(g.threads);

    try {
        if (*build_cmd) {
            const auto a = build(ba, g.seed);
            const std::filesystem::path dir = g.out.empty() ? "out" : g.out;
            sf::save_resnet(*a.network, dir / "network.json");
            sf::json meta{{"record", sf::to_json(a.record)}, {"audit", sf::to_json(a.audit)}};
            sf::write_file_atomic(dir / "build.json", sf::dump_json(meta, 2));
            std::cout << sf::dump_json(meta, 2) << "\n";
            return 0;
        }
        if (*eval_cmd) {
            const auto net = sf::load_resnet(network);
            for (const auto& p : points) {
                const auto x = parse_point(p);
                if (x.size() != net.input_dim)
                    throw sf::ConfigError("point \"" + p + "\" has " + std::to_string(x.size()) +
                                          " coordinates, network expects " + std::to_string(net.input_dim));
                std::cout << sf::fmt(sf::resnet_forward(net, x)) << "\n";
            }
            return 0;
        }
        if (*audit_cmd) {
            if (!network.empty()) {
                std::cout << sf::dump_json(sf::to_json(sf::audit_class(sf::load_resnet(network))), 2) << "\n";
                return 0;
            }
            return report(sf::run_study(study_from(g, {"audit"})));
        }
        if (*rate_cmd)
            return report(sf::run_study(study_from(g, {"euclidean-rate"})));
        if (*mani_cmd)
            return report(sf::run_study(study_from(g, {"manifold-rate"})));
        if (*risk_cmd)
            return report(sf::run_study(study_from(g, {"risk"})));
        if (*adv_cmd)
            return report(sf::run_study(study_from(g, {"adversarial"})));
        if (*io_cmd) {
            if (io_action == "save") {
                const auto a = build(ba, g.seed);
                sf::save_resnet(*a.network, io_path);
                std::cout << "wrote " << io_path << "\n";
                return 0;
            }
            if (io_action == "load") {
                std::cout << sf::dump_json(sf::to_json(sf::audit_class(sf::load_resnet(io_path))), 2) << "\n";
                return 0;
            }
            return roundtrip(io_path, g.seed);
        }
    } catch (const sf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const sf::SerializationError& e) {
        std::cerr << "serialization error: " << e.what() << "\n";
        return 2;
    } catch (const sf::PreconditionError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
