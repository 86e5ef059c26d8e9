#include "doctest.h"

#include "rost/core.hpp"
#include "rost/errors.hpp"
#include "rost/evolution.hpp"
#include "rost/field.hpp"
#include "rost/rng.hpp"
#include "rost/samplers.hpp"

#include "json.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <vector>

using namespace rost;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Rost two_atoms(double w0, double q) {
    MatrixXd m = MatrixXd::Identity(2, 2);
    m(0, 1) = m(1, 0) = q;
    return Rost(RankedWeights({w0, 1.0 - w0}), OverlapMatrix(m));
}

Rost three_atoms() {
    MatrixXd m = MatrixXd::Identity(3, 3);
    m(0, 1) = m(1, 0) = 0.6;
    m(0, 2) = m(2, 0) = 0.2;
    m(1, 2) = m(2, 1) = 0.4;
    return Rost(RankedWeights({0.5, 0.3, 0.2}), OverlapMatrix(m));
}

VectorXd vec(std::initializer_list<double> v) {
    VectorXd out(Eigen::Index(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

} // namespace

TEST_SUITE("evolution") {

TEST_CASE("a fixed field tilts two atoms exactly as computed by hand") {
    Rost s = two_atoms(0.7, 0.5);
    PsiSpec psi = PsiSpec::linear(1.0);
    auto [next, rec] = evolve_step_with_field(s, psi, vec({0.2, 1.5}));

    double u0 = 0.7 * std::exp(0.2), u1 = 0.3 * std::exp(1.5);
    double z = u0 + u1;
    REQUIRE(next.size() == 2);
    // the second atom overtakes the first
    CHECK(next.weights[0] == doctest::Approx(u1 / z).epsilon(1e-14));
    CHECK(next.weights[1] == doctest::Approx(u0 / z).epsilon(1e-14));
    CHECK(next.labels[0] == 1);
    CHECK(next.labels[1] == 0);
    CHECK(rec.permutation == std::vector<std::uint32_t>({1, 0}));
    CHECK(rec.increments[0] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(rec.increments[1] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(rec.normalizer == doctest::Approx(z).epsilon(1e-14));
    CHECK(next.overlaps.matrix()(0, 1) == 0.5);
}

TEST_CASE("reordering conjugates the overlap matrix and labels") {
    Rost s = three_atoms();
    PsiSpec psi = PsiSpec::linear(1.0);
    auto [next, rec] = evolve_step_with_field(s, psi, vec({0.0, 0.0, 3.0}));

    // tilted weights: 0.5, 0.3, 0.2 e^3; the third atom moves to the front
    CHECK(rec.permutation == std::vector<std::uint32_t>({1, 2, 0}));
    CHECK(next.labels == std::vector<std::uint32_t>({2, 0, 1}));
    const MatrixXd& q = next.overlaps.matrix();
    CHECK(q(0, 1) == 0.2);
    CHECK(q(0, 2) == 0.4);
    CHECK(q(1, 2) == 0.6);
    CHECK(q(1, 0) == 0.2);
    for (int i = 0; i < 3; ++i) CHECK(q(i, i) == 1.0);

    double u = 0.5 + 0.3 + 0.2 * std::exp(3.0);
    CHECK(next.weights[0] == doctest::Approx(0.2 * std::exp(3.0) / u).epsilon(1e-14));
    CHECK(next.weights[2] == doctest::Approx(0.3 / u).epsilon(1e-14));
}

TEST_CASE("ties keep the prior order") {
    Rost s(RankedWeights({0.4, 0.4, 0.2}), OverlapMatrix(MatrixXd::Identity(3, 3)));
    PsiSpec psi = PsiSpec::linear(1.0);
    auto [next, rec] = evolve_step_with_field(s, psi, vec({0.7, 0.7, 0.7}));
    CHECK(rec.permutation == std::vector<std::uint32_t>({0, 1, 2}));
    CHECK(next.labels == std::vector<std::uint32_t>({0, 1, 2}));
    CHECK(next.weights[0] == doctest::Approx(0.4).epsilon(1e-14));
}

TEST_CASE("huge fields do not overflow the reweighting") {
    Rost s = two_atoms(0.5, 0.3);
    PsiSpec psi = PsiSpec::linear(1.0);
    auto [next, rec] = evolve_step_with_field(s, psi, vec({600.0, -600.0}));
    CHECK(next.weights[0] == 1.0);
    CHECK(next.weights[1] == 0.0);
    CHECK(std::isfinite(rec.normalizer));
    CHECK(rec.normalizer == doctest::Approx(0.5 * std::exp(600.0)).epsilon(1e-12));

    // and zero tail weights survive another step
    auto [again, rec2] = evolve_step_with_field(next, psi, vec({0.1, 0.2}));
    CHECK(again.weights[0] == 1.0);
    CHECK(again.weights[1] == 0.0);
    CHECK(again.labels == next.labels);
    (void)rec2;
}

TEST_CASE("non finite fields raise a numerical failure") {
    Rost s = two_atoms(0.6, 0.2);
    PsiSpec psi = PsiSpec::linear(1.0);
    CHECK_THROWS_AS((void)evolve_step_with_field(s, psi, vec({std::nan(""), 0.0})),
                    NumericalFailure);
    CHECK_THROWS_AS((void)evolve_step_with_field(s, psi, vec({0.0, 0.1, 0.2})),
                    InvalidParameter);
}

TEST_CASE("the stochastic step is reproducible from the stream key") {
    Rost s = three_atoms();
    PsiSpec psi = PsiSpec::smooth_shifted(1.0, 0.2, true);
    RngStream a(701), b(701), c(702);
    auto [na, ra] = evolve_step(s, psi, 2, a);
    auto [nb, rb] = evolve_step(s, psi, 2, b);
    auto [nc, rc] = evolve_step(s, psi, 2, c);
    CHECK(na.weights.values() == nb.weights.values());
    CHECK(ra.increments == rb.increments);
    CHECK(na.labels == nb.labels);
    CHECK(ra.increments != rc.increments);
    (void)rc;
    (void)nc;
}

TEST_CASE("a one step trajectory is bit identical to a single step") {
    OverlapCDF x({{0.3, 0.25}, {0.7, 0.25}}, false);
    RngStream build(703);
    Rost s = build_rpc(x, 16, build);
    PsiSpec psi = PsiSpec::linear(0.8);

    RngStream a(704), b(704);
    Trajectory traj = run_trajectory(s, psi, 2, 1, a);
    auto [next, rec] = evolve_step(s, psi, 2, b);
    CHECK(traj.current.weights.values() == next.weights.values());
    CHECK(traj.current.labels == next.labels);
    CHECK((traj.current.overlaps.matrix().array() == next.overlaps.matrix().array()).all());
    REQUIRE(traj.steps.size() == 1);
    CHECK(traj.steps[0].permutation == rec.permutation);
    CHECK(traj.steps[0].increments == rec.increments);
    CHECK(traj.steps[0].normalizer == rec.normalizer);
}

TEST_CASE("later trajectory steps map the shared factor through the labels") {
    // replay the documented construction with public pieces only
    OverlapCDF x({{0.3, 0.25}, {0.7, 0.25}}, false);
    RngStream build(705);
    Rost s = build_rpc(x, 8, build);
    PsiSpec psi = PsiSpec::linear(1.0);

    RngStream a(706);
    Trajectory traj = run_trajectory(s, psi, 2, 2, a);

    RngStream b(706);
    FieldSampler sampler(s.overlaps, 2);
    VectorXd k0 = sampler.draw(b);
    auto [mid, rec0] = evolve_step_with_field(s, psi, k0);
    VectorXd k1 = sampler.draw(b);
    VectorXd mapped(8);
    for (int i = 0; i < 8; ++i) mapped(i) = k1(mid.labels[i]);
    auto [fin, rec1] = evolve_step_with_field(mid, psi, mapped);

    CHECK(traj.steps[0].increments == rec0.increments);
    CHECK(traj.steps[1].increments == rec1.increments);
    CHECK(traj.current.weights.values() == fin.weights.values());
    CHECK(traj.current.labels == fin.labels);
}

TEST_CASE("cumulative increments follow atoms through reorderings") {
    OverlapCDF x({{0.5, 0.5}}, false);
    RngStream build(707);
    Rost s = build_rpc(x, 6, build);
    PsiSpec psi = PsiSpec::linear(1.2);
    RngStream a(708);
    Trajectory traj = run_trajectory(s, psi, 1, 7, a);
    REQUIRE(traj.steps.size() == 7);

    // independent replay off the step records
    std::vector<double> cum(6, 0.0);
    std::vector<std::uint32_t> rank_of_initial(6);
    for (std::uint32_t k = 0; k < 6; ++k) rank_of_initial[k] = k;
    for (const StepRecord& rec : traj.steps) {
        for (int k = 0; k < 6; ++k) cum[k] += rec.increments[rank_of_initial[k]];
        for (int k = 0; k < 6; ++k) rank_of_initial[k] = rec.permutation[rank_of_initial[k]];
    }
    for (int k = 0; k < 6; ++k) CHECK(traj.cumulative_increments[k] == cum[k]);

    // the final positions implied by the permutations match the labels
    for (std::uint32_t k = 0; k < 6; ++k)
        CHECK(traj.current.labels[rank_of_initial[k]] == s.labels[k]);

    for (std::uint32_t k = 0; k < 6; ++k)
        CHECK(traj.cumulative_for_label(s.labels[k]) == traj.cumulative_increments[k]);
    CHECK_THROWS_AS((void)traj.cumulative_for_label(777), InvalidParameter);
}

TEST_CASE("velocity summaries agree with their definitions") {
    OverlapCDF x({{0.5, 0.5}}, false);
    RngStream build(709);
    Rost s = build_rpc(x, 5, build);
    PsiSpec psi = PsiSpec::linear(0.9);
    RngStream a(710);
    const std::size_t T = 4;
    Trajectory traj = run_trajectory(s, psi, 1, T, a);

    for (std::size_t rank = 1; rank <= 5; ++rank) {
        double v = past_velocity(traj, rank);
        double expect = traj.cumulative_for_label(traj.current.labels[rank - 1]) / double(T);
        CHECK(v == expect);
    }
    CHECK_THROWS_AS((void)past_velocity(traj, 0), InvalidParameter);
    CHECK_THROWS_AS((void)past_velocity(traj, 6), InvalidParameter);

    double vbar = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
        vbar += traj.current.weights[i] * past_velocity(traj, i + 1);
    CHECK(weighted_mean_increment(traj) == doctest::Approx(vbar).epsilon(1e-14));

    double disp = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        double d = past_velocity(traj, i + 1) - vbar;
        disp += traj.current.weights[i] * d * d;
    }
    CHECK(velocity_dispersion(traj, 3) == doctest::Approx(disp).epsilon(1e-12));
    // top_k larger than the system clamps
    CHECK(velocity_dispersion(traj, 50) == doctest::Approx(velocity_dispersion(traj, 5)).epsilon(1e-15));
}

TEST_CASE("a zero step trajectory is the initial structure") {
    Rost s = three_atoms();
    PsiSpec psi = PsiSpec::linear(1.0);
    RngStream a(711);
    Trajectory traj = run_trajectory(s, psi, 1, 0, a);
    CHECK(traj.T() == 0);
    CHECK(traj.current.weights.values() == s.weights.values());
    for (double c : traj.cumulative_increments) CHECK(c == 0.0);
    CHECK_THROWS_AS((void)past_velocity(traj, 1), InvalidParameter);
}

TEST_CASE("trajectory dumps are one json object per step") {
    OverlapCDF x({{0.5, 0.5}}, false);
    RngStream build(712);
    Rost s = build_rpc(x, 6, build);
    PsiSpec psi = PsiSpec::linear(1.0);
    RngStream a(713);
    Trajectory traj = run_trajectory(s, psi, 1, 3, a);

    std::ostringstream os;
    dump_trajectory(os, traj, 4);
    std::istringstream is(os.str());
    std::string line;
    int lines = 0;
    while (std::getline(is, line)) {
        REQUIRE(!line.empty());
        nlohmann::json j = nlohmann::json::parse(line);
        CHECK(j.at("step") == lines);
        CHECK(j.at("normalizer").is_number());
        CHECK(j.at("permutation").size() == 6);
        CHECK(j.at("top_weights").size() == 4);
        CHECK(j.at("top_increments").size() == 4);
        ++lines;
    }
    CHECK(lines == 3);

    // the dumped weights replay to the terminal state
    nlohmann::json last;
    std::istringstream is2(os.str());
    while (std::getline(is2, line)) last = nlohmann::json::parse(line);
    for (int i = 0; i < 4; ++i)
        CHECK(double(last.at("top_weights")[i]) ==
              doctest::Approx(traj.current.weights[i]).epsilon(1e-12));
}

TEST_CASE("weights remain a ranked simplex along a long run") {
    OverlapCDF x({{0.3, 0.25}, {0.7, 0.25}}, false);
    RngStream build(714);
    Rost s = build_rpc(x, 24, build);
    PsiSpec psi = PsiSpec::smooth_shifted(1.5, 0.5, true);
    RngStream a(715);
    Trajectory traj = run_trajectory(s, psi, 2, 50, a);
    const auto& w = traj.current.weights;
    long double sum = 0.0L;
    for (std::size_t i = 0; i < w.size(); ++i) {
        sum += w[i];
        if (i > 0) CHECK(w[i] <= w[i - 1]);
    }
    CHECK(std::abs(double(sum - 1.0L)) <= 1e-12);
    CHECK(w[0] > 0.0);
}

} // evolution suite
