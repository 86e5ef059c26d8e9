#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "rost/core.hpp"
#include "rost/estimators.hpp"

namespace rost {

// Everything a run needs. Loaded from JSON; unknown keys, type mismatches
// and out-of-range values are rejected with the offending path in the
// message.
struct RunConfig {
    std::string experiment;
    std::uint64_t seed = 1;
    std::size_t n_atoms = 256;
    std::size_t n_replicas = 200;
    std::size_t draws_per_replica = 64;
    std::vector<CdfAtom> x_atoms = {{0.5, 0.5}};
    PsiSpec psi = PsiSpec::linear(0.5);
    int r = 1;
    std::size_t T = 1;
    int s = 2;
    ObservableSpec observable = ObservableSpec::one(2);

    struct Tolerances {
        double merge_tol = 1e-9;
        double ultra_tol = 0.0;
        double max_violation_fraction = 0.0;
        double alpha = 0.01;   // family-wise level for qs-test
        double z_max = 3.0;    // per-statistic gate elsewhere
        double fd_eps = 1e-3;  // pressure derivative check step
    } tol;

    std::string output_path = ".";
};

RunConfig load_config(const std::string& path);
RunConfig parse_config(const nlohmann::json& j);

// Canonical serialization of the effective config: every field present,
// keys sorted. Two inputs that differ only in key order or in spelled-out
// defaults canonicalize identically.
nlohmann::json canonical_config(const RunConfig& cfg);

// FNV-1a 64 over the compact dump of the canonical form, as 16 hex chars.
std::string config_hash(const RunConfig& cfg);

const std::vector<std::string>& known_experiments();

OverlapCDF overlap_cdf_from_config(const RunConfig& cfg);

} // namespace rost
