#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rost/core.hpp"
#include "rost/rng.hpp"

namespace rost {

// A Monte Carlo estimate. std_error is a bootstrap standard error obtained
// by resampling replicas (256 resamples; per-replica draws are kept).
struct EstimateWithError {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_replicas = 0;
    std::size_t n_draws_per_replica = 0;
};

// A bounded function of the overlaps of s sampled replicas: the product of
// monomial factors q(a,b)^power and threshold indicators. An empty spec is
// the constant 1. Replica indices are 1-based; |F| <= 1 since |q| <= 1.
struct ObservableSpec {
    struct Term {
        int a = 1;
        int b = 2;
        int power = 1;
    };
    struct Indicator {
        int a = 1;
        int b = 2;
        double threshold = 0.0;
        bool less_equal = true;
    };

    int s = 2;
    std::vector<Term> monomials;
    std::vector<Indicator> indicators;

    static ObservableSpec one(int s);
    static ObservableSpec pair_power(int s, int a, int b, int power);
    static ObservableSpec pair_indicator(int s, int a, int b, double threshold,
                                         bool less_equal = true);

    ObservableSpec& with_term(int a, int b, int power);
    ObservableSpec& with_indicator(int a, int b, double threshold,
                                   bool less_equal = true);

    void validate() const;
    // Evaluates F on overlaps q(map[a-1], map[b-1]) for replica indices a,b;
    // map must hold s indices into q.
    double eval_mapped(const Eigen::MatrixXd& q, const int* map) const;
    // qsub is the s x s overlap submatrix of the sampled replicas.
    double eval(const Eigen::MatrixXd& qsub) const;
    std::string describe() const;
};

// A structure generator: fills a fresh draw from the given stream.
using RostSource = std::function<Rost(RngStream&)>;

// Adapts a fixed replica list to the generator interface used by the
// streaming estimator overloads.
RostSource source_from(const std::vector<Rost>& rosts);

// E^(s)[F]: for each structure, draw K s-tuples of atom indices iid from
// the weights (with replacement, so coincident indices contribute q_ii = 1),
// average F over them, then average over structures.
EstimateWithError sampled_expectation(const std::vector<Rost>& rosts,
                                      const ObservableSpec& obs,
                                      std::size_t K, RngStream& rng,
                                      unsigned threads = 1);
EstimateWithError sampled_expectation(const RostSource& source,
                                      std::size_t n_replicas,
                                      const ObservableSpec& obs,
                                      std::size_t K, RngStream& rng,
                                      unsigned threads = 1);

// P(q_{12} <= g) at each grid point, q_{12} the overlap of two replicas
// sampled iid from the weights. One set of K pair draws per structure is
// shared across the whole grid, which makes the estimates monotone in g
// exactly.
std::vector<EstimateWithError> overlap_cdf_values(
    const std::vector<Rost>& rosts, const std::vector<double>& grid,
    std::size_t K, RngStream& rng, unsigned threads = 1);
std::vector<EstimateWithError> overlap_cdf_values(
    const RostSource& source, std::size_t n_replicas,
    const std::vector<double>& grid, std::size_t K, RngStream& rng,
    unsigned threads = 1);

// Same estimate packaged as an empirical distribution function with atoms
// at the grid points (plus the remaining mass at 1).
OverlapCDF estimate_overlap_cdf(const std::vector<Rost>& rosts,
                                const std::vector<double>& grid,
                                std::size_t K, RngStream& rng,
                                unsigned threads = 1);

// 9 equispaced points in [0,1], plus every atom location of x shifted by
// +-1e-6 so step edges are straddled. Pass nullptr for the bare grid.
std::vector<double> default_cdf_grid(const OverlapCDF* x);

// Pressure-type functional E[ log sum_i w_i exp(lambda * psi(kappa_i)) ]
// with kappa ~ N(0, Q^{*r}) and K field draws per structure.
EstimateWithError pressure(const std::vector<Rost>& rosts, const PsiSpec& psi,
                           int r, double lambda, std::size_t K, RngStream& rng,
                           unsigned threads = 1);
EstimateWithError pressure(const RostSource& source, std::size_t n_replicas,
                           const PsiSpec& psi, int r, double lambda,
                           std::size_t K, RngStream& rng,
                           unsigned threads = 1);

// log of integral phi(z) exp(lambda psi(z)) dz by quadrature; the upper
// bound of the pressure for any overlap structure.
double log_field_mgf(const PsiSpec& psi, double lambda);

struct PressureDerivativeCheck {
    EstimateWithError finite_difference; // (P(l+e) - P(l-e)) / 2e
    EstimateWithError direct;            // E[ tilted mean of psi ]
    double diff_z = 0.0;                 // z of fd - direct on common field draws
    EstimateWithError second_difference; // (P(l+e) - 2P(l) + P(l-e)) / e^2
    double min_second_difference = 0.0;  // smallest per-draw second difference
    double eps = 0.0;
};

// Central finite difference of the pressure in lambda against the direct
// estimator E[sum_i w_i e^{lambda psi_i} psi_i / sum_j w_j e^{lambda psi_j}]
// on common field draws. Each draw's log-partition sum is convex in lambda,
// so the per-draw second difference is nonnegative up to roundoff and
// min_second_difference doubles as a convexity check.
PressureDerivativeCheck pressure_derivative_check(
    const std::vector<Rost>& rosts, const PsiSpec& psi, int r, double lambda,
    double eps, std::size_t K, RngStream& rng, unsigned threads = 1);
PressureDerivativeCheck pressure_derivative_check(
    const RostSource& source, std::size_t n_replicas, const PsiSpec& psi,
    int r, double lambda, double eps, std::size_t K, RngStream& rng,
    unsigned threads = 1);

// One term E^(k)[ q(a,b)^r F ] of a replica identity, estimated from shared
// m-tuples: the k replica slots are injected into the tuple positions in
// every possible way and the term value is averaged over the injections.
// a = b = 0 drops the overlap factor; with_f = false drops F.
struct TermSpec {
    int k = 2;
    int a = 0;
    int b = 0;
    bool with_f = true;
};

// Estimates all terms on one common set of weight-sampled m-tuples
// (K per structure). This is the engine behind gg_residual and ac_residual;
// it is exposed so their algebraic relations can be checked on identical
// draws.
std::vector<double> shared_tuple_terms(const std::vector<Rost>& rosts, int r,
                                       const ObservableSpec& obs, int m,
                                       const std::vector<TermSpec>& terms,
                                       std::size_t K, RngStream& rng,
                                       unsigned threads = 1);

// Residual of the cascade identity
//   E^(s+1)[ q_{s,s+1}^r F ] - (1/s) E^(2)[q_{12}^r] E^(s)[F]
//                            - (1/s) sum_{l<s} E^(s)[ q_{l,s}^r F ]
// for an s-replica observable F. All terms come from shared (s+1)-tuples
// with injection averaging, so for F = 1 the residual vanishes identically
// rather than just in distribution.
EstimateWithError gg_residual(const std::vector<Rost>& rosts, int s, int r,
                              const ObservableSpec& obs, std::size_t K,
                              RngStream& rng, unsigned threads = 1);
EstimateWithError gg_residual(const RostSource& source, std::size_t n_replicas,
                              int s, int r, const ObservableSpec& obs,
                              std::size_t K, RngStream& rng,
                              unsigned threads = 1);

// Residual of
//   (s-1)/2 E^(s)[ q_{12}^r F ] - s E^(s+1)[ q_{s,s+1}^r F ]
//                               + (s+1)/2 E^(s+2)[ q_{s+1,s+2}^r F ],
// from shared (s+2)-tuples. The first term couples q_12 with F on the same
// s replicas (the s-replica reading of the identity's leading term).
EstimateWithError ac_residual(const std::vector<Rost>& rosts, int s, int r,
                              const ObservableSpec& obs, std::size_t K,
                              RngStream& rng, unsigned threads = 1);
EstimateWithError ac_residual(const RostSource& source, std::size_t n_replicas,
                              int s, int r, const ObservableSpec& obs,
                              std::size_t K, RngStream& rng,
                              unsigned threads = 1);

// Fraction of weight-sampled triples with q_ik < min(q_ij, q_jk) - tol,
// the triples spread over the structures round-robin.
double ultrametric_violation(const std::vector<Rost>& rosts,
                             std::size_t n_triples, double tol,
                             RngStream& rng);
double ultrametric_violation(const RostSource& source, std::size_t n_replicas,
                             std::size_t n_triples, double tol,
                             RngStream& rng);

struct QsObservableRow {
    std::string name;
    double pre_mean = 0.0, pre_se = 0.0;
    double post_mean = 0.0, post_se = 0.0;
    double z = 0.0, p = 1.0;
    bool reject = false;
};

struct QsReport {
    std::vector<QsObservableRow> rows;
    double alpha = 0.01; // family-wise level, split evenly over rows
    bool pass = true;
};

// Two-sample comparison of the observable vector (sum w^2, sum w^3, top
// weight, sampled overlap CDF on the 9-point grid) between freshly drawn
// structures and independently drawn structures evolved one step. A row is
// rejected when its two-sample z has p < alpha / n_rows.
QsReport quasi_stationarity_test(const RostSource& source, const PsiSpec& psi,
                                 int r, std::size_t n_replicas, std::size_t K,
                                 RngStream& rng, unsigned threads = 1,
                                 double alpha = 0.01);

struct CltReport {
    std::vector<QsObservableRow> rows;    // T-step smooth vs one-step linear
    EstimateWithError increment_variance; // per-atom total-increment variance
    double expected_variance = 0.0;       // lambda^2
    double beta = 0.0;                    // the scale actually used
    double z_max = 3.0;
    bool pass = true;
};

// Small-increment reduction: T steps under the centered smooth map with
// beta = lambda / (|base'(h)| sqrt(T)) against one step of the linear map
// with slope lambda, compared through the quasi-stationarity observable
// set. Also reports the per-atom total-increment variance, whose limit is
// lambda^2.
CltReport clt_reduction_experiment(const RostSource& source, double lambda,
                                   double h, int r, std::size_t T,
                                   std::size_t n_replicas, std::size_t K,
                                   RngStream& rng, unsigned threads = 1,
                                   double z_max = 3.0);

} // namespace rost
