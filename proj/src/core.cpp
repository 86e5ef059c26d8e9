#include "rost/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "detail.hpp"

namespace rost {

using detail::fmt;
using detail::pow_int;

double stable_sum(const std::vector<double>& v) {
    long double s = 0.0L;
    for (double x : v) s += x;
    return static_cast<double>(s);
}

RankedWeights::RankedWeights(std::vector<double> w) : w_(std::move(w)) {
    if (w_.empty()) throw InvalidParameter("weights: empty");
    for (std::size_t i = 0; i < w_.size(); ++i) {
        if (!(w_[i] >= 0.0) || !std::isfinite(w_[i]))
            throw InvalidParameter(fmt("weights[%zu]: not a finite nonnegative value", i));
        if (i > 0 && w_[i] > w_[i - 1])
            throw InvalidParameter(fmt("weights[%zu]: not sorted decreasingly", i));
    }
    if (!(w_[0] > 0.0)) throw InvalidParameter("weights[0]: must be positive");
    double s = stable_sum(w_);
    if (std::abs(s - 1.0) > weight_sum_tol)
        throw InvalidParameter(fmt("weights: sum to %.17g, expected 1 within %g", s, weight_sum_tol));
}

OverlapMatrix::OverlapMatrix(Eigen::MatrixXd q, bool check_psd) : q_(std::move(q)) {
    const Eigen::Index n = q_.rows();
    if (n == 0 || q_.cols() != n)
        throw MalformedOverlap(fmt("overlaps: %ldx%ld, expected nonempty square",
                                   static_cast<long>(q_.rows()), static_cast<long>(q_.cols())));
    for (Eigen::Index i = 0; i < n; ++i) {
        if (q_(i, i) != 1.0)
            throw MalformedOverlap(fmt("overlaps(%ld,%ld): diagonal entry %.17g, expected 1",
                                       static_cast<long>(i), static_cast<long>(i), q_(i, i)));
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (q_(i, j) != q_(j, i))
                throw MalformedOverlap(fmt("overlaps(%ld,%ld): not symmetric",
                                           static_cast<long>(i), static_cast<long>(j)));
            if (!(std::abs(q_(i, j)) <= 1.0))
                throw MalformedOverlap(fmt("overlaps(%ld,%ld): entry %.17g outside [-1,1]",
                                           static_cast<long>(i), static_cast<long>(j), q_(i, j)));
        }
    }
    if (check_psd) require_psd();
}

double OverlapMatrix::min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q_, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

void OverlapMatrix::require_psd() const {
    // a pivot-based factorization misreports singular but valid matrices
    // (duplicated atoms give exact zero pivots), so certify by eigenvalues
    double emin = min_eigenvalue();
    double tol = 1e-9 * static_cast<double>(q_.rows());
    if (emin < -tol)
        throw MalformedOverlap(fmt("overlaps: not positive semidefinite "
                                   "(eigenvalue %.3e below -%.1e)", emin, tol));
}

Eigen::MatrixXd entrywise_power(const Eigen::MatrixXd& q, int r) {
    if (r < 1) throw InvalidParameter(fmt("r: %d, expected a positive integer", r));
    Eigen::MatrixXd out(q.rows(), q.cols());
    for (Eigen::Index j = 0; j < q.cols(); ++j)
        for (Eigen::Index i = 0; i < q.rows(); ++i)
            out(i, j) = pow_int(q(i, j), r);
    return out;
}

Rost::Rost(RankedWeights w, OverlapMatrix q)
    : Rost(std::move(w), std::move(q), {}) {}

Rost::Rost(RankedWeights w, OverlapMatrix q, std::vector<std::uint32_t> lab)
    : weights(std::move(w)), overlaps(std::move(q)), labels(std::move(lab)) {
    if (weights.size() != overlaps.size())
        throw InvalidParameter(fmt("structure: %zu weights vs %zu overlap rows",
                                   weights.size(), overlaps.size()));
    if (labels.empty()) {
        labels.resize(weights.size());
        std::iota(labels.begin(), labels.end(), 0u);
    }
    if (labels.size() != weights.size())
        throw InvalidParameter(fmt("structure: %zu labels vs %zu atoms",
                                   labels.size(), weights.size()));
    std::unordered_set<std::uint32_t> seen(labels.begin(), labels.end());
    if (seen.size() != labels.size())
        throw InvalidParameter("structure: duplicate labels");
}

Rost merge_identical(const Rost& rost, double tol) {
    if (!(tol > 0.0) || tol >= 1.0)
        throw InvalidParameter(fmt("merge tolerance: %.17g, expected in (0,1)", tol));
    const std::size_t n = rost.size();
    const double thr = 1.0 - tol;

    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (rost.overlaps(i, j) >= thr) {
                std::size_t a = find(i), b = find(j);
                if (a != b) parent[std::max(a, b)] = std::min(a, b);
            }

    std::vector<std::vector<std::size_t>> groups(n);
    for (std::size_t i = 0; i < n; ++i) groups[find(i)].push_back(i);

    std::vector<std::size_t> reps;
    for (std::size_t g = 0; g < n; ++g) {
        if (groups[g].empty()) continue;
        const auto& mem = groups[g];
        for (std::size_t a = 0; a < mem.size(); ++a)
            for (std::size_t b = a + 1; b < mem.size(); ++b)
                if (rost.overlaps(mem[a], mem[b]) < thr)
                    throw MalformedOverlap(
                        fmt("merge: atoms %zu and %zu share a near-unit group but "
                            "overlap only %.17g", mem[a], mem[b],
                            rost.overlaps(mem[a], mem[b])));
        reps.push_back(g);
    }

    std::vector<double> w(reps.size());
    for (std::size_t k = 0; k < reps.size(); ++k) {
        std::vector<double> parts;
        for (std::size_t m : groups[reps[k]]) parts.push_back(rost.weights[m]);
        w[k] = stable_sum(parts);
    }

    // Group sums can outrank earlier atoms, so re-rank; ties keep the order
    // of the representatives, which were generated by increasing rank.
    std::vector<std::size_t> order(reps.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });

    std::vector<double> wout(reps.size());
    Eigen::MatrixXd qout(reps.size(), reps.size());
    std::vector<std::uint32_t> lab(reps.size());
    for (std::size_t a = 0; a < reps.size(); ++a) {
        wout[a] = w[order[a]];
        lab[a] = rost.labels[reps[order[a]]];
        for (std::size_t b = 0; b < reps.size(); ++b)
            qout(a, b) = rost.overlaps(reps[order[a]], reps[order[b]]);
    }
    return Rost(RankedWeights(std::move(wout)),
                OverlapMatrix(std::move(qout), /*check_psd=*/false), std::move(lab));
}

OverlapCDF::OverlapCDF(std::vector<CdfAtom> atoms, bool includes_diagonal)
    : atoms_(std::move(atoms)) {
    if (atoms_.empty()) throw InvalidParameter("overlap cdf: no atoms");
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
        const auto& a = atoms_[i];
        if (!(a.location >= -1.0) || !(a.location <= 1.0))
            throw InvalidParameter(fmt("overlap cdf atom %zu: location %.17g outside [-1,1]",
                                       i, a.location));
        if (!(a.mass > 0.0) || !(a.mass <= 1.0))
            throw InvalidParameter(fmt("overlap cdf atom %zu: mass %.17g outside (0,1]",
                                       i, a.mass));
        if (i > 0 && !(a.location > atoms_[i - 1].location))
            throw InvalidParameter(fmt("overlap cdf atom %zu: locations must increase", i));
    }
    std::vector<double> masses;
    for (const auto& a : atoms_) masses.push_back(a.mass);
    double total = stable_sum(masses);
    if (includes_diagonal) {
        if (std::abs(total - 1.0) > weight_sum_tol)
            throw InvalidParameter(fmt("overlap cdf: masses sum to %.17g, expected 1", total));
    } else {
        if (atoms_.back().location >= 1.0)
            throw InvalidParameter("overlap cdf: atom at 1 but diagonal mass implied");
        if (total > 1.0 + weight_sum_tol)
            throw InvalidParameter(fmt("overlap cdf: masses sum to %.17g > 1", total));
        double rest = 1.0 - total;
        if (rest > 0.0) atoms_.push_back({1.0, rest});
    }
    std::vector<double> below;
    for (const auto& a : atoms_)
        if (a.location < 1.0) below.push_back(a.mass);
    mass_below_one_ = std::min(1.0, stable_sum(below));
}

double OverlapCDF::operator()(double q) const {
    if (q >= 1.0) return 1.0;
    long double c = 0.0L;
    for (const auto& a : atoms_) {
        if (a.location > q) break;
        c += a.mass;
    }
    return static_cast<double>(c);
}

double OverlapCDF::inverse(double u) const {
    if (u <= 0.0) return atoms_.front().location;
    long double c = 0.0L;
    for (const auto& a : atoms_) {
        c += a.mass;
        if (static_cast<double>(c) >= u) return a.location;
    }
    return atoms_.back().location;
}

PsiSpec PsiSpec::linear(double lambda) {
    if (!std::isfinite(lambda))
        throw InvalidParameter(fmt("psi: lambda %.17g, expected finite", lambda));
    PsiSpec p;
    p.kind = Kind::linear;
    p.lambda = lambda;
    return p;
}

PsiSpec PsiSpec::smooth_shifted(double beta, double h, bool centered) {
    if (!(beta >= 0.0) || !std::isfinite(beta) || !std::isfinite(h))
        throw InvalidParameter(fmt("psi: beta %.17g h %.17g, expected finite beta >= 0", beta, h));
    PsiSpec p;
    p.kind = Kind::smooth_shifted;
    p.beta = beta;
    p.h = h;
    p.centered = centered;
    return p;
}

namespace {

// log cosh without overflow
double logcosh(double y) {
    double a = std::abs(y);
    return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

} // namespace

double psi_eval(const PsiSpec& psi, double z) {
    switch (psi.kind) {
    case PsiSpec::Kind::linear:
        return psi.lambda * z;
    case PsiSpec::Kind::smooth_shifted: {
        double v = logcosh(psi.beta * z + psi.h);
        return psi.centered ? v - logcosh(psi.h) : v;
    }
    }
    throw InvalidParameter("psi: unknown kind");
}

double psi_deriv(const PsiSpec& psi, double z) {
    switch (psi.kind) {
    case PsiSpec::Kind::linear:
        return psi.lambda;
    case PsiSpec::Kind::smooth_shifted:
        return psi.beta * std::tanh(psi.beta * z + psi.h);
    }
    throw InvalidParameter("psi: unknown kind");
}

} // namespace rost
