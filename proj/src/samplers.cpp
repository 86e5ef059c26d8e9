#include "rost/samplers.hpp"

#include "rost/errors.hpp"

#include "detail.hpp"

#include <cmath>
#include <vector>

namespace rost {

std::vector<double> sample_poisson_dirichlet(double alpha, std::size_t n, RngStream& rng) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw InvalidParameter(detail::fmt("PD parameter alpha=%g must lie in (0, 1)", alpha));
    if (n == 0) throw InvalidParameter("PD draw needs at least one atom");

    // jump sizes Gamma_k^{-1/alpha}; kept as logs so small alpha cannot overflow
    std::vector<double> lj(n);
    double gamma = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        gamma += rng.exponential(1.0);
        lj[k] = -std::log(gamma) / alpha;
    }

    double shift = lj.front();
    long double total = 0.0L;
    std::vector<double> w(n);
    for (std::size_t k = 0; k < n; ++k) {
        w[k] = std::exp(lj[k] - shift);
        total += w[k];
    }
    for (std::size_t k = 0; k < n; ++k) w[k] = double((long double)(w[k]) / total);
    return w;
}

Rost build_rpc(const OverlapCDF& x, std::size_t n, RngStream& rng) {
    if (n < 2) throw InvalidParameter("cascade needs at least 2 atoms");
    double mass = x.mass_below_one();
    if (!(mass > 0.0 && mass < 1.0))
        throw InvalidParameter(
            detail::fmt("cascade needs overlap mass below one in (0, 1), got %g", mass));
    for (const CdfAtom& a : x.atoms())
        if (a.location < 0.0)
            throw InvalidParameter(
                detail::fmt("cascade atom location %g is negative; a nested hierarchy "
                            "only produces overlaps in [0, 1)",
                            a.location));

    std::vector<double> weights = sample_poisson_dirichlet(mass, n, rng);
    CoalescentRecord coal = sample_bs_coalescent(n, rng);

    Eigen::MatrixXd q = Eigen::MatrixXd::Identity(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = x.inverse(mass * std::exp(-coal.pairwise_times(i, j)));
            q(i, j) = v;
            q(j, i) = v;
        }

    // ultrametric with nonnegative entries, hence positive semidefinite by
    // construction; skip the O(n^3) factorization
    return Rost(RankedWeights(weights), OverlapMatrix(std::move(q), false));
}

} // namespace rost
