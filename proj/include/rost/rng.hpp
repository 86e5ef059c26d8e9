#pragma once

#include <cstdint>
#include <random>

namespace rost {

// Keyed random stream with deterministic branching.
//
// A stream is identified by a 64-bit key. branch(i) derives the key of a
// child stream by mixing; the child is independent of the parent's draw
// position, so replica i can always be given branch(i) no matter how many
// draws the parent has consumed. This is what makes results independent of
// thread scheduling: work item i uses stream.branch(i), and reductions are
// done in index order.
class RngStream {
public:
    explicit RngStream(std::uint64_t key) : key_(key), engine_(mix(key)) {}

    std::uint64_t key() const { return key_; }

    RngStream branch(std::uint64_t i) const {
        return RngStream(mix(key_ ^ (0x9e3779b97f4a7c15ULL + mix(i + 1))));
    }

    double uniform() { return unif_(engine_); }

    double normal() { return norm_(engine_); }

    double exponential(double rate) {
        return std::exponential_distribution<double>(rate)(engine_);
    }

    double gamma(double shape) {
        return std::gamma_distribution<double>(shape, 1.0)(engine_);
    }

    double beta(double a, double b) {
        double x = gamma(a);
        double y = gamma(b);
        return x / (x + y);
    }

    // Uniform index in {0, ..., n-1}.
    std::uint64_t uniform_index(std::uint64_t n) {
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
    std::normal_distribution<double> norm_{0.0, 1.0};
};

} // namespace rost
