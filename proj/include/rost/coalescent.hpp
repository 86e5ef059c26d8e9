#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "rost/rng.hpp"

namespace rost {

// One merge of the coalescent: at `time`, the blocks whose smallest members
// are listed in `merged` (increasing) fused into one block.
struct MergeEvent {
    double time;
    std::vector<std::uint32_t> merged;
};

// Full record of a coalescent run on n initial singletons.
struct CoalescentRecord {
    std::size_t n;
    Eigen::MatrixXd pairwise_times; // tau_ij, zero diagonal
    std::vector<MergeEvent> events; // increasing in time, n-ish of them
};

// Samples the exchangeable coalescent in which, while b blocks remain, every
// k-subset of them merges at rate (k-2)!(b-k)!/(b-1)!. Total merge rate is
// b - 1 and each fixed pair of current blocks coalesces at rate 1, so any
// fixed pair of leaves has an Exp(1) coalescence time.
CoalescentRecord sample_bs_coalescent(std::size_t n, RngStream& rng);

// Merge-size distribution while b blocks remain: P(K = k) for k in 2..b.
// Exposed for tests.
double coalescent_merge_size_pmf(std::size_t b, std::size_t k);

} // namespace rost
