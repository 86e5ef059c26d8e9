#pragma once

#include <cstddef>
#include <vector>

#include "rost/coalescent.hpp"
#include "rost/core.hpp"
#include "rost/rng.hpp"

namespace rost {

// Top n atoms of a Poisson-Dirichlet PD(alpha, 0) mass partition,
// renormalized to sum to 1 and sorted decreasing. alpha in (0, 1).
// Sampled as the n largest jumps of the driving stable subordinator,
// Gamma_k^{-1/alpha} for cumulative exponentials Gamma_k, evaluated in log
// space; this is the exact joint law of the renormalized top n.
std::vector<double> sample_poisson_dirichlet(double alpha, std::size_t n,
                                             RngStream& rng);

// Draws an n-atom cascade with overlap distribution x: weights from
// PD(x(1^-), 0), overlaps from an independent coalescent mapped through the
// inverse of x restricted to [0, 1), i.e. q_ij = x^{-1}(x(1^-) e^{-tau_ij}).
// The result is exactly ultrametric and every off-diagonal entry is one of
// the atom locations of x below 1.
Rost build_rpc(const OverlapCDF& x, std::size_t n, RngStream& rng);

} // namespace rost
