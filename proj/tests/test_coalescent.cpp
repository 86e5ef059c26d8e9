#include "doctest.h"

#include "rost/coalescent.hpp"
#include "rost/errors.hpp"
#include "rost/rng.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace rost;

TEST_SUITE("coalescent") {

TEST_CASE("merge size pmf matches the rate integrals") {
    // rates lambda(b,k) = int_0^1 x^(k-2) (1-x)^(b-k) dx, pmf is the
    // normalized rate of a k-merge among the C(b,k) subsets
    for (int b : {3, 5, 8}) {
        std::vector<double> weighted(b + 1, 0.0);
        double total = 0.0;
        for (int k = 2; k <= b; ++k) {
            double binom = 1.0;
            for (int i = 0; i < k; ++i) binom = binom * double(b - i) / double(i + 1);
            weighted[k] = binom * oracles::merge_rate_quadrature(b, k);
            total += weighted[k];
        }
        // total merge rate at b blocks is b - 1
        CHECK(total == doctest::Approx(double(b - 1)).epsilon(1e-9));
        for (int k = 2; k <= b; ++k)
            CHECK(coalescent_merge_size_pmf(b, k) ==
                  doctest::Approx(weighted[k] / total).epsilon(1e-9));
    }
}

TEST_CASE("merge size pmf is a distribution") {
    for (int b : {2, 4, 17, 60}) {
        double sum = 0.0;
        for (int k = 2; k <= b; ++k) {
            double p = coalescent_merge_size_pmf(b, k);
            CHECK(p >= 0.0);
            sum += p;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("sampled merge sizes follow the pmf") {
    const int b = 8, reps = 20000;
    RngStream rng(2026'01);
    std::vector<int> counts(b + 1, 0);
    for (int r = 0; r < reps; ++r) {
        RngStream stream = rng.branch(r);
        CoalescentRecord rec = sample_bs_coalescent(b, stream);
        REQUIRE(!rec.events.empty());
        int k = int(rec.events.front().merged.size());
        REQUIRE(k >= 2);
        REQUIRE(k <= b);
        ++counts[k];
    }
    for (int k = 2; k <= b; ++k) {
        double p = coalescent_merge_size_pmf(b, k);
        double se = std::sqrt(p * (1 - p) / reps);
        CHECK(std::abs(counts[k] / double(reps) - p) <= 4 * se + 1e-4);
    }
}

TEST_CASE("two blocks merge at a unit rate") {
    const int reps = 4000;
    RngStream rng(2026'02);
    std::vector<double> times;
    times.reserve(reps);
    for (int r = 0; r < reps; ++r) {
        RngStream stream = rng.branch(r);
        CoalescentRecord rec = sample_bs_coalescent(2, stream);
        REQUIRE(rec.events.size() == 1);
        CHECK(rec.events[0].merged == std::vector<std::uint32_t>({0, 1}));
        CHECK(rec.pairwise_times(0, 1) == rec.events[0].time);
        times.push_back(rec.events[0].time);
    }
    double d = oracles::ks_statistic(times, [](double t) { return 1.0 - std::exp(-t); });
    CHECK(oracles::ks_pvalue(d, times.size()) > 0.01);
}

TEST_CASE("first holding time matches the total rate") {
    const int n = 6, reps = 5000;
    RngStream rng(2026'03);
    double sum = 0.0;
    for (int r = 0; r < reps; ++r) {
        RngStream stream = rng.branch(r);
        CoalescentRecord rec = sample_bs_coalescent(n, stream);
        sum += rec.events.front().time;
    }
    double mean = sum / reps;
    double se = (1.0 / (n - 1)) / std::sqrt(double(reps));
    CHECK(std::abs(mean - 1.0 / (n - 1)) <= 5 * se);
}

TEST_CASE("any fixed pair coalesces at a unit rate") {
    // the defining property used by the cascade overlap map
    const int n = 64, reps = 4000;
    RngStream rng(2026'04);
    std::vector<double> t01, t_far;
    t01.reserve(reps);
    t_far.reserve(reps);
    for (int r = 0; r < reps; ++r) {
        RngStream stream = rng.branch(r);
        CoalescentRecord rec = sample_bs_coalescent(n, stream);
        t01.push_back(rec.pairwise_times(0, 1));
        t_far.push_back(rec.pairwise_times(5, 41));
    }
    auto expcdf = [](double t) { return 1.0 - std::exp(-t); };
    double d1 = oracles::ks_statistic(t01, expcdf);
    double d2 = oracles::ks_statistic(t_far, expcdf);
    CHECK(oracles::ks_pvalue(d1, t01.size()) > 0.01);
    CHECK(oracles::ks_pvalue(d2, t_far.size()) > 0.01);
}

TEST_CASE("pairwise times are an ultrametric on every sample") {
    const int n = 24;
    RngStream rng(2026'05);
    for (int r = 0; r < 20; ++r) {
        RngStream stream = rng.branch(r);
        CoalescentRecord rec = sample_bs_coalescent(n, stream);
        const auto& tau = rec.pairwise_times;
        REQUIRE(tau.rows() == n);
        for (int i = 0; i < n; ++i) {
            CHECK(tau(i, i) == 0.0);
            for (int j = i + 1; j < n; ++j) {
                CHECK(tau(i, j) > 0.0);
                CHECK(tau(i, j) == tau(j, i));
            }
        }
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                for (int k = j + 1; k < n; ++k) {
                    double a = tau(i, j), b = tau(j, k), c = tau(i, k);
                    double mx = std::max({a, b, c});
                    int at_max = int(a == mx) + int(b == mx) + int(c == mx);
                    CHECK(at_max >= 2);
                }
    }
}

TEST_CASE("event log reconstructs the pairwise times") {
    const int n = 12;
    RngStream rng(2026'06);
    for (int r = 0; r < 10; ++r) {
        RngStream stream = rng.branch(r);
        CoalescentRecord rec = sample_bs_coalescent(n, stream);
        REQUIRE(!rec.events.empty());
        double prev = 0.0;
        for (const auto& ev : rec.events) {
            CHECK(ev.time > prev);
            prev = ev.time;
            CHECK(std::is_sorted(ev.merged.begin(), ev.merged.end()));
            CHECK(ev.merged.size() >= 2);
        }
        // replay the merges and check every pair gets the time of the event
        // that first put its members in one block
        std::vector<std::uint32_t> block(n);
        for (int i = 0; i < n; ++i) block[i] = std::uint32_t(i);
        Eigen::MatrixXd tau = Eigen::MatrixXd::Constant(n, n, -1.0);
        tau.diagonal().setZero();
        for (const auto& ev : rec.events) {
            std::uint32_t target = block[ev.merged.front()];
            std::vector<char> member(n, 0);
            for (int i = 0; i < n; ++i)
                for (std::uint32_t leader : ev.merged)
                    if (block[i] == leader) member[i] = 1;
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j)
                    if (member[i] && member[j] && block[i] != block[j])
                        tau(i, j) = tau(j, i) = ev.time;
            for (int i = 0; i < n; ++i)
                if (member[i]) block[i] = target;
        }
        std::uint32_t root = block[0];
        for (int i = 0; i < n; ++i) CHECK(block[i] == root);
        CHECK((tau.array() == rec.pairwise_times.array()).all());
    }
}

TEST_CASE("coalescent input validation") {
    RngStream rng(1);
    CHECK_THROWS_AS(sample_bs_coalescent(0, rng), InvalidParameter);
    CHECK_THROWS_AS(sample_bs_coalescent(1, rng), InvalidParameter);
    CHECK_THROWS_AS(coalescent_merge_size_pmf(1, 2), InvalidParameter);
    CHECK_THROWS_AS(coalescent_merge_size_pmf(5, 1), InvalidParameter);
    CHECK_THROWS_AS(coalescent_merge_size_pmf(5, 6), InvalidParameter);
}

TEST_CASE("coalescent draws are reproducible from the stream key") {
    RngStream a(9090), b(9090);
    CoalescentRecord ra = sample_bs_coalescent(16, a);
    CoalescentRecord rb = sample_bs_coalescent(16, b);
    CHECK((ra.pairwise_times.array() == rb.pairwise_times.array()).all());
    REQUIRE(ra.events.size() == rb.events.size());
    for (std::size_t i = 0; i < ra.events.size(); ++i) {
        CHECK(ra.events[i].time == rb.events[i].time);
        CHECK(ra.events[i].merged == rb.events[i].merged);
    }
}

} // coalescent suite
