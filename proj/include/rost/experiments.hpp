#pragma once

#include <string>

#include "json.hpp"

#include "rost/config.hpp"

namespace rost {

// Outcome of a run. pass reflects the experiment's own statistical gate
// (always true for purely generative experiments).
struct ExperimentResult {
    bool pass = true;
    nlohmann::json results;
    std::string csv; // main table, also written to <experiment>.csv
};

// Runs one experiment and writes manifest.json, results.json and
// <experiment>.csv into cfg.output_path. The manifest records the config,
// its hash, the toolkit version and wall clock time; everything else is
// byte-reproducible for a fixed config.
ExperimentResult run_experiment(const RunConfig& cfg, unsigned threads = 1);

} // namespace rost
