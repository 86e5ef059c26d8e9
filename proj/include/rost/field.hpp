#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "rost/core.hpp"
#include "rost/rng.hpp"

namespace rost {

// Samples centered Gaussian vectors with covariance Q^{*r} (entrywise r-th
// power of the overlap matrix).
//
// If Q is exactly ultrametric with nonnegative entries, the covariance has a
// hierarchical factorization: each tree node contributes one independent
// standard normal scaled by sqrt(v^r - v_parent^r), and kappa_i is the sum
// along the root-to-leaf path. That path costs O(n) per draw instead of the
// O(n^2) of a dense factor, and is exact. The tree is detected and fully
// verified at construction; any mismatch falls back to a dense Cholesky of
// Q^{*r} with an escalating diagonal jitter. NumericalFailure if the jitter
// schedule is exhausted.
class FieldSampler {
public:
    FieldSampler(const OverlapMatrix& q, int r);
    ~FieldSampler();
    FieldSampler(FieldSampler&&) noexcept;
    FieldSampler& operator=(FieldSampler&&) noexcept;

    std::size_t size() const;
    // Normals are consumed in a fixed order (tree nodes in construction
    // order then leaves, or z_1..z_n densely), so a given stream state
    // yields the same field no matter where the sampler lives.
    Eigen::VectorXd draw(RngStream& rng) const;

    bool used_tree() const;
    int jitter_escalations() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// One-shot convenience wrapper.
Eigen::VectorXd sample_gaussian_field(const OverlapMatrix& q, int r,
                                      RngStream& rng);

} // namespace rost
