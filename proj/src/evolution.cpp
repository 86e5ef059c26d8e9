#include "rost/evolution.hpp"

#include "rost/errors.hpp"

#include "detail.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <unordered_map>
#include <vector>

namespace rost {

namespace {

// The tilt-sort-relabel core shared by the single step and the trajectory
// loop. Works on plain vectors so trajectories can skip the O(n^2) overlap
// conjugation until their final state.
struct StepCore {
    std::vector<double> weights;
    std::vector<std::uint32_t> labels;
    std::vector<std::uint32_t> order; // order[new rank] = old rank
    StepRecord rec;
};

StepCore step_core(const std::vector<double>& w, const std::vector<std::uint32_t>& labels,
                   const PsiSpec& psi, const Eigen::VectorXd& kappa) {
    const std::size_t n = w.size();
    if (std::size_t(kappa.size()) != n)
        throw InvalidParameter(detail::fmt("field has %ld entries for %zu atoms",
                                           long(kappa.size()), n));

    StepCore out;
    out.rec.increments.resize(n);
    std::vector<double> lw(n);
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        out.rec.increments[i] = psi_eval(psi, kappa(Eigen::Index(i)));
        lw[i] = std::log(w[i]) + out.rec.increments[i];
        shift = std::max(shift, lw[i]);
    }
    if (!std::isfinite(shift))
        throw NumericalFailure("reweighting degenerated: no atom has a finite tilted weight");

    std::vector<double> tilted(n);
    long double total = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        tilted[i] = std::exp(lw[i] - shift);
        total += tilted[i];
    }
    if (!(total > 0.0L) || !std::isfinite(double(total)))
        throw NumericalFailure("reweighting degenerated: tilted weights do not normalize");
    for (std::size_t i = 0; i < n; ++i) tilted[i] = double(tilted[i] / total);
    out.rec.normalizer = std::exp(shift) * double(total);

    out.order.resize(n);
    std::iota(out.order.begin(), out.order.end(), 0u);
    std::stable_sort(out.order.begin(), out.order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return tilted[a] > tilted[b]; });

    out.rec.permutation.resize(n);
    out.weights.resize(n);
    out.labels.resize(n);
    for (std::size_t p = 0; p < n; ++p) {
        std::uint32_t old = out.order[p];
        out.rec.permutation[old] = std::uint32_t(p);
        out.weights[p] = tilted[old];
        out.labels[p] = labels[old];
    }
    return out;
}

Eigen::MatrixXd conjugate(const Eigen::MatrixXd& q, const std::vector<std::uint32_t>& order) {
    const auto n = Eigen::Index(order.size());
    Eigen::MatrixXd out(n, n);
    for (Eigen::Index pj = 0; pj < n; ++pj)
        for (Eigen::Index pi = 0; pi < n; ++pi)
            out(pi, pj) = q(order[std::size_t(pi)], order[std::size_t(pj)]);
    return out;
}

} // namespace

std::pair<Rost, StepRecord> evolve_step_with_field(const Rost& rost, const PsiSpec& psi,
                                                   const Eigen::VectorXd& kappa) {
    StepCore core = step_core(rost.weights.values(), rost.labels, psi, kappa);
    Rost next(RankedWeights(std::move(core.weights)),
              OverlapMatrix(conjugate(rost.overlaps.matrix(), core.order), false),
              std::move(core.labels));
    return {std::move(next), std::move(core.rec)};
}

std::pair<Rost, StepRecord> evolve_step(const Rost& rost, const PsiSpec& psi, int r,
                                        RngStream& rng) {
    FieldSampler sampler(rost.overlaps, r);
    return evolve_step_with_field(rost, psi, sampler.draw(rng));
}

double Trajectory::cumulative_for_label(std::uint32_t label) const {
    for (std::size_t k = 0; k < initial.labels.size(); ++k)
        if (initial.labels[k] == label) return cumulative_increments[k];
    throw InvalidParameter(detail::fmt("label %u is not part of this trajectory", label));
}

Trajectory run_trajectory(const Rost& rost, const PsiSpec& psi, int r, std::size_t T,
                          RngStream& rng) {
    const std::size_t n = rost.size();
    Trajectory traj{rost, rost, {}, std::vector<double>(n, 0.0)};
    if (T == 0) return traj;

    // one factorization, kept in the initial rank frame; conjugating the
    // overlaps by each step permutation conjugates the covariance the same
    // way, so routing the frame-0 field through the labels is exact
    FieldSampler sampler(rost.overlaps, r);
    std::unordered_map<std::uint32_t, std::uint32_t> init_rank;
    init_rank.reserve(n);
    for (std::size_t k = 0; k < n; ++k) init_rank.emplace(rost.labels[k], std::uint32_t(k));

    std::vector<double> w = rost.weights.values();
    std::vector<std::uint32_t> labels = rost.labels;
    const auto ni = Eigen::Index(n);
    Eigen::VectorXd mapped(ni);
    std::vector<std::uint32_t> frame(n);
    traj.steps.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        Eigen::VectorXd kappa0 = sampler.draw(rng);
        for (std::size_t i = 0; i < n; ++i) {
            frame[i] = init_rank.at(labels[i]);
            mapped(Eigen::Index(i)) = kappa0(frame[i]);
        }
        StepCore core = step_core(w, labels, psi, mapped);
        for (std::size_t i = 0; i < n; ++i)
            traj.cumulative_increments[frame[i]] += core.rec.increments[i];
        w = std::move(core.weights);
        labels = std::move(core.labels);
        traj.steps.push_back(std::move(core.rec));
    }

    // conjugate the overlaps once, by the accumulated permutation
    std::vector<std::uint32_t> order(n);
    for (std::size_t p = 0; p < n; ++p) order[p] = init_rank.at(labels[p]);
    traj.current = Rost(RankedWeights(std::move(w)),
                        OverlapMatrix(conjugate(rost.overlaps.matrix(), order), false),
                        std::move(labels));
    return traj;
}

double past_velocity(const Trajectory& traj, std::size_t rank) {
    if (traj.T() == 0) throw InvalidParameter("velocity needs at least one step");
    if (rank < 1 || rank > traj.current.size())
        throw InvalidParameter(detail::fmt("rank %zu out of range [1, %zu]", rank,
                                           traj.current.size()));
    return traj.cumulative_for_label(traj.current.labels[rank - 1]) / double(traj.T());
}

double weighted_mean_increment(const Trajectory& traj) {
    if (traj.T() == 0) throw InvalidParameter("velocity needs at least one step");
    long double acc = 0.0L;
    for (std::size_t i = 0; i < traj.current.size(); ++i)
        acc += traj.current.weights[i] *
               (traj.cumulative_for_label(traj.current.labels[i]) / double(traj.T()));
    return double(acc);
}

double velocity_dispersion(const Trajectory& traj, std::size_t top_k) {
    if (top_k == 0) throw InvalidParameter("dispersion needs at least one rank");
    double vbar = weighted_mean_increment(traj);
    std::size_t k = std::min(top_k, traj.current.size());
    long double acc = 0.0L;
    for (std::size_t i = 0; i < k; ++i) {
        double d = past_velocity(traj, i + 1) - vbar;
        acc += traj.current.weights[i] * d * d;
    }
    return double(acc);
}

void dump_trajectory(std::ostream& os, const Trajectory& traj, std::size_t top_k) {
    const std::size_t n = traj.initial.size();
    std::size_t k = std::min(top_k, n);

    // replay the weights from the step records
    std::vector<double> w = traj.initial.weights.values();
    std::vector<std::uint32_t> inverse(n);
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        const StepRecord& rec = traj.steps[t];
        std::vector<double> tilted(n), next(n);
        long double total = 0.0L;
        for (std::size_t i = 0; i < n; ++i) {
            tilted[i] = w[i] * std::exp(rec.increments[i]);
            total += tilted[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            next[rec.permutation[i]] = double(tilted[i] / total);
            inverse[rec.permutation[i]] = std::uint32_t(i);
        }
        w = std::move(next);

        nlohmann::json line = {
            {"step", t},
            {"normalizer", rec.normalizer},
            {"permutation", rec.permutation},
            {"top_weights", std::vector<double>(w.begin(), w.begin() + std::ptrdiff_t(k))},
        };
        std::vector<double> inc(k);
        for (std::size_t p = 0; p < k; ++p) inc[p] = rec.increments[inverse[p]];
        line["top_increments"] = inc;
        os << line.dump() << '\n';
    }
}

} // namespace rost
