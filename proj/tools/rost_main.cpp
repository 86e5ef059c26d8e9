#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"

#include "rost/config.hpp"
#include "rost/experiments.hpp"

namespace {

struct SubArgs {
    std::string config_path;
    std::string output_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    unsigned threads = 1;
};

int run(const std::string& experiment, const SubArgs& args) {
    rost::RunConfig cfg = rost::load_config(args.config_path);
    if (cfg.experiment != experiment) {
        std::fprintf(stderr, "rost %s: config names experiment \"%s\"\n", experiment.c_str(),
                     cfg.experiment.c_str());
        return 1;
    }
    if (args.seed_set) cfg.seed = args.seed;
    if (!args.output_dir.empty()) cfg.output_path = args.output_dir;

    rost::ExperimentResult res = rost::run_experiment(cfg, args.threads);
    std::printf("%s: %s  (seed %llu, hash %s, results in %s)\n", experiment.c_str(),
                res.pass ? "PASS" : "FAIL",
                static_cast<unsigned long long>(cfg.seed),
                rost::config_hash(cfg).c_str(), cfg.output_path.c_str());
    return res.pass ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"simulation and verification toolkit for random overlap structures"};
    app.require_subcommand(1);

    std::vector<std::pair<std::string, SubArgs>> subs;
    subs.reserve(rost::known_experiments().size());
    for (const std::string& name : rost::known_experiments()) {
        subs.emplace_back(name, SubArgs{});
        SubArgs& args = subs.back().second;
        CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
        sub->add_option("--config", args.config_path, "JSON run configuration")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", args.seed, "override the config seed")
            ->each([&args](const std::string&) { args.seed_set = true; });
        sub->add_option("--threads", args.threads, "worker threads (results do not depend on this)")
            ->check(CLI::PositiveNumber);
        sub->add_option("--output-dir", args.output_dir, "override the config output path");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        for (const auto& [name, args] : subs) {
            if (app.get_subcommand(name)->parsed()) return run(name, args);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "rost: %s\n", e.what());
        return 1;
    }
    return 1;
}
