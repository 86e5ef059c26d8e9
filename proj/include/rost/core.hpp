#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "rost/errors.hpp"

namespace rost {

// Weight sum must match 1 to this absolute tolerance.
inline constexpr double weight_sum_tol = 1e-12;

// Normalized weights in decreasing order.
class RankedWeights {
public:
    explicit RankedWeights(std::vector<double> w);

    std::size_t size() const { return w_.size(); }
    double operator[](std::size_t i) const { return w_[i]; }
    const std::vector<double>& values() const { return w_; }

private:
    std::vector<double> w_;
};

// Sums doubles with compensation; used everywhere a weight sum feeds a
// 1e-12-level invariant.
double stable_sum(const std::vector<double>& v);

// Symmetric overlap structure with unit diagonal and entries in [-1, 1].
// PSD is checked at construction unless check_psd is false (callers that
// deliberately build indefinite matrices, e.g. to probe error handling,
// use that escape hatch).
class OverlapMatrix {
public:
    explicit OverlapMatrix(Eigen::MatrixXd q, bool check_psd = true);

    std::size_t size() const { return static_cast<std::size_t>(q_.rows()); }
    double operator()(std::size_t i, std::size_t j) const {
        return q_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    const Eigen::MatrixXd& matrix() const { return q_; }

    double min_eigenvalue() const;
    void require_psd() const;

private:
    Eigen::MatrixXd q_;
};

// Entrywise r-th power of an overlap matrix; r >= 1 integer. Preserves
// symmetry, unit diagonal and positive semidefiniteness (Schur products of
// PSD matrices are PSD).
Eigen::MatrixXd entrywise_power(const Eigen::MatrixXd& q, int r);

// A ranked overlap structure: weights, overlaps between the ranked atoms,
// and a persistent label per atom so an atom can be followed across
// re-rankings.
struct Rost {
    Rost(RankedWeights w, OverlapMatrix q);
    Rost(RankedWeights w, OverlapMatrix q, std::vector<std::uint32_t> lab);

    RankedWeights weights;
    OverlapMatrix overlaps;
    std::vector<std::uint32_t> labels;

    std::size_t size() const { return weights.size(); }
};

// Collapses groups of atoms whose mutual overlaps are all >= 1 - tol into
// single atoms (weights added, the heaviest member's row/column kept, its
// label kept). Groups must be consistent: if i~j and j~k then i~k must also
// hold at the tolerance, otherwise MalformedOverlap. Off-diagonal entries of
// the result are < 1 - tol, and the operation is idempotent.
Rost merge_identical(const Rost& rost, double tol = 1e-9);

// One atom of a discrete overlap distribution function.
struct CdfAtom {
    double location;
    double mass;
};

// Piecewise-constant distribution function x(q) = P(overlap <= q) given by
// atoms at increasing locations in [-1, 1]. If includes_diagonal is false,
// an atom of the missing mass 1 - sum(masses) is implied at q = 1 (the
// self-overlap); otherwise the atoms must sum to 1 and the last may sit at 1.
class OverlapCDF {
public:
    OverlapCDF(std::vector<CdfAtom> atoms, bool includes_diagonal);

    double operator()(double q) const;

    // Right-continuous generalized inverse inf{q : x(q) >= u}.
    double inverse(double u) const;

    // Total mass strictly below 1, i.e. x(1^-).
    double mass_below_one() const { return mass_below_one_; }

    const std::vector<CdfAtom>& atoms() const { return atoms_; }

private:
    std::vector<CdfAtom> atoms_; // includes the diagonal atom at 1
    double mass_below_one_;
};

// The log-moment-generating map applied to the cavity field. Two forms:
// linear psi(z) = lambda * z, and the smooth bounded form
// psi(z) = base(beta * z + h) with base(y) = log cosh(y), optionally
// centered by subtracting base(h).
struct PsiSpec {
    enum class Kind { linear, smooth_shifted };

    Kind kind = Kind::linear;
    double lambda = 1.0; // slope of the linear form
    double beta = 1.0;   // input scale of the smooth form
    double h = 0.0;      // input shift of the smooth form
    bool centered = false;

    static PsiSpec linear(double lambda);
    static PsiSpec smooth_shifted(double beta, double h, bool centered = false);
};

double psi_eval(const PsiSpec& psi, double z);
double psi_deriv(const PsiSpec& psi, double z);

} // namespace rost
