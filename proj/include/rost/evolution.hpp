#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "rost/core.hpp"
#include "rost/field.hpp"
#include "rost/rng.hpp"

namespace rost {

// What one evolution step did.
//
// permutation maps pre-step rank to post-step rank: the atom that was at
// rank i sits at rank permutation[i] afterwards. increments[i] is the
// log-weight increment psi(kappa_i) credited to the pre-step rank-i atom.
// normalizer is the partition sum sum_j w_j exp(increments[j]).
struct StepRecord {
    std::vector<std::uint32_t> permutation;
    std::vector<double> increments;
    double normalizer;
};

// One step of the competitive dynamics: draw kappa ~ N(0, Q^{*r}), tilt
// every weight by exp(psi(kappa_i)), renormalize, re-rank decreasingly
// (ties keep prior order), and conjugate the overlap matrix and labels by
// the same permutation. Tilting happens in max-shifted log space and never
// overflows.
std::pair<Rost, StepRecord> evolve_step(const Rost& rost, const PsiSpec& psi,
                                        int r, RngStream& rng);

// Same, with the field supplied by the caller (indexed by pre-step rank).
std::pair<Rost, StepRecord> evolve_step_with_field(const Rost& rost,
                                                   const PsiSpec& psi,
                                                   const Eigen::VectorXd& kappa);

// A trajectory of T steps from an initial structure.
//
// cumulative_increments[k] is the total increment credited over the whole
// run to the atom that started at rank k (equivalently, to the label
// initial.labels[k]), regardless of where it ranks now.
struct Trajectory {
    Rost initial;
    Rost current;
    std::vector<StepRecord> steps;
    std::vector<double> cumulative_increments;

    std::size_t T() const { return steps.size(); }
    double cumulative_for_label(std::uint32_t label) const;
};

// Runs T steps with a fresh independent field per step. The Gaussian
// factorization is done once in the initial rank frame and reused for every
// step (the covariance is permutation-conjugated along with Q, so this is
// exact), keeping trajectories O(n) per step for ultrametric overlaps. With
// T = 1 this consumes the stream exactly like evolve_step and produces the
// identical result.
Trajectory run_trajectory(const Rost& rost, const PsiSpec& psi, int r,
                          std::size_t T, RngStream& rng);

// Time-averaged increment of the atom occupying the given rank (1-based) at
// the end of the run.
double past_velocity(const Trajectory& traj, std::size_t rank);

// Weight-averaged past velocity over all atoms, weights taken from the
// terminal state.
double weighted_mean_increment(const Trajectory& traj);

// sum over the top_k terminal ranks of w_i (v_i - vbar)^2, with vbar the
// weighted_mean_increment over all ranks.
double velocity_dispersion(const Trajectory& traj, std::size_t top_k);

// Writes one JSON object per line: step index, normalizer, permutation,
// leading weights and the increments credited to them.
void dump_trajectory(std::ostream& os, const Trajectory& traj,
                     std::size_t top_k = 8);

} // namespace rost
