#include "rost/estimators.hpp"

#include "rost/errors.hpp"
#include "rost/evolution.hpp"
#include "rost/field.hpp"
#include "rost/parallel.hpp"

#include "detail.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

namespace rost {

namespace {

// Purpose offsets for deterministic stream derivation. Every replica gets
// root.branch(i) (or 2i / 2i+1 for paired designs); within a replica, draw k
// uses rep.branch(base + k). Branching per draw instead of consuming one
// stream keeps a structure's k-th draw identical when an unrelated parameter
// (say the atom count) changes how much earlier stages consumed.
constexpr std::uint64_t kTupleBase = std::uint64_t(1) << 32;
constexpr std::uint64_t kFieldBase = std::uint64_t(2) << 32;
constexpr std::uint64_t kEvolveField = std::uint64_t(3) << 32;
constexpr std::uint64_t kTripleBase = std::uint64_t(4) << 32;
constexpr std::uint64_t kBootBase = 0x8000000000000000ull;

enum BootPurpose : std::uint64_t {
    kBootSampled = 0,
    kBootCdf,
    kBootPressure,
    kBootDeriv,
    kBootResidual,
    kBootVariance,
};

constexpr std::size_t kBootstrapResamples = 256;

// cap on index draws per replica; a request past this is a config mistake,
// not a workload
constexpr std::uint64_t kDrawBudget = std::uint64_t(1) << 40;

void require_budget(std::size_t K, int s) {
    if (std::uint64_t(K) > kDrawBudget / std::uint64_t(s))
        throw BudgetExceeded(detail::fmt(
            "%zu draws of %d indices per replica exceed the draw budget", K, s));
}

std::vector<double> cumulative_weights(const std::vector<double>& w) {
    std::vector<double> cum(w.size());
    long double acc = 0.0L;
    for (std::size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        cum[i] = double(acc);
    }
    cum.back() = 1.0;
    return cum;
}

std::size_t sample_index(const std::vector<double>& cum, RngStream& st) {
    double u = st.uniform();
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    if (it == cum.end()) --it;
    return std::size_t(it - cum.begin());
}

// Runs fn(i, structure, replica stream) for i in [0, n). Structures are
// generated sequentially in index order (sources may be stateful); the
// per-replica work is then fanned out in bounded batches, so memory stays
// proportional to the batch and results cannot depend on thread count.
void for_each_replica(const RostSource& source, std::size_t n, const RngStream& root,
                      unsigned threads, std::uint64_t stride, std::uint64_t offset,
                      const std::function<void(std::size_t, const Rost&, const RngStream&)>& fn) {
    const std::size_t batch = threads <= 1 ? 1 : std::size_t(threads) * 4;
    for (std::size_t lo = 0; lo < n; lo += batch) {
        const std::size_t hi = std::min(n, lo + batch);
        std::vector<Rost> structures;
        std::vector<RngStream> streams;
        structures.reserve(hi - lo);
        streams.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
            RngStream rep = root.branch(offset + stride * i);
            structures.push_back(source(rep));
            streams.push_back(rep);
        }
        parallel_for(hi - lo, threads, [&](std::size_t j) {
            fn(lo + j, structures[j], streams[j]);
        });
    }
}

std::vector<std::vector<std::size_t>> bootstrap_indices(const RngStream& root,
                                                        std::uint64_t purpose, std::size_t n) {
    RngStream boot = root.branch(kBootBase + purpose);
    std::vector<std::vector<std::size_t>> idx(kBootstrapResamples);
    for (auto& row : idx) {
        row.resize(n);
        for (auto& v : row) v = std::size_t(boot.uniform_index(n));
    }
    return idx;
}

double resampled_se(const std::vector<double>& per,
                    const std::vector<std::vector<std::size_t>>& idx) {
    const std::size_t B = idx.size();
    long double mean = 0.0L, m2 = 0.0L;
    std::vector<double> bm(B);
    for (std::size_t b = 0; b < B; ++b) {
        long double acc = 0.0L;
        for (std::size_t j : idx[b]) acc += per[j];
        bm[b] = double(acc / (long double)(idx[b].size()));
        mean += bm[b];
    }
    mean /= (long double)B;
    for (std::size_t b = 0; b < B; ++b) {
        long double d = bm[b] - mean;
        m2 += d * d;
    }
    return std::sqrt(double(m2 / (long double)(B - 1)));
}

double mean_of(const std::vector<double>& v) {
    long double acc = 0.0L;
    for (double x : v) acc += x;
    return double(acc / (long double)v.size());
}

EstimateWithError summarize(const std::vector<double>& per, std::size_t K,
                            const RngStream& root, std::uint64_t purpose) {
    EstimateWithError est;
    est.value = mean_of(per);
    est.std_error = resampled_se(per, bootstrap_indices(root, purpose, per.size()));
    est.n_replicas = per.size();
    est.n_draws_per_replica = K;
    return est;
}

void require_draws(std::size_t n, std::size_t K) {
    if (n == 0) throw InvalidParameter("need at least one replica");
    if (K == 0) throw InvalidParameter("need at least one draw per replica");
}

void require_power(int r) {
    if (r < 1) throw InvalidParameter(detail::fmt("overlap power r = %d, must be >= 1", r));
}

double clamped_z(double delta, double se) {
    if (se > 0.0) {
        double z = delta / se;
        return std::clamp(z, -1e9, 1e9);
    }
    return delta == 0.0 ? 0.0 : (delta > 0.0 ? 1e9 : -1e9);
}

double two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

} // namespace

ObservableSpec ObservableSpec::one(int s) {
    ObservableSpec obs;
    obs.s = s;
    obs.validate();
    return obs;
}

ObservableSpec ObservableSpec::pair_power(int s, int a, int b, int power) {
    ObservableSpec obs;
    obs.s = s;
    obs.monomials.push_back({a, b, power});
    obs.validate();
    return obs;
}

ObservableSpec ObservableSpec::pair_indicator(int s, int a, int b, double threshold,
                                              bool less_equal) {
    ObservableSpec obs;
    obs.s = s;
    obs.indicators.push_back({a, b, threshold, less_equal});
    obs.validate();
    return obs;
}

ObservableSpec& ObservableSpec::with_term(int a, int b, int power) {
    monomials.push_back({a, b, power});
    validate();
    return *this;
}

ObservableSpec& ObservableSpec::with_indicator(int a, int b, double threshold, bool less_equal) {
    indicators.push_back({a, b, threshold, less_equal});
    validate();
    return *this;
}

void ObservableSpec::validate() const {
    if (s < 1 || s > 16)
        throw InvalidParameter(detail::fmt("observable uses s = %d replicas, must be in [1, 16]", s));
    auto check_pair = [&](int a, int b, const char* what) {
        if (a < 1 || a > s || b < 1 || b > s)
            throw InvalidParameter(detail::fmt("%s indices (%d, %d) out of range [1, %d]",
                                               what, a, b, s));
        if (a == b)
            throw InvalidParameter(detail::fmt("%s indices must differ, got (%d, %d)", what,
                                               a, b));
    };
    for (const auto& t : monomials) {
        check_pair(t.a, t.b, "monomial");
        if (t.power < 1)
            throw InvalidParameter(detail::fmt("monomial power %d, must be >= 1", t.power));
    }
    for (const auto& ind : indicators) {
        check_pair(ind.a, ind.b, "indicator");
        if (!std::isfinite(ind.threshold))
            throw InvalidParameter("indicator threshold must be finite");
    }
}

double ObservableSpec::eval_mapped(const Eigen::MatrixXd& q, const int* map) const {
    double out = 1.0;
    for (const auto& t : monomials)
        out *= detail::pow_int(q(map[t.a - 1], map[t.b - 1]), t.power);
    for (const auto& ind : indicators) {
        double v = q(map[ind.a - 1], map[ind.b - 1]);
        bool hit = ind.less_equal ? v <= ind.threshold : v > ind.threshold;
        if (!hit) return 0.0;
    }
    return out;
}

double ObservableSpec::eval(const Eigen::MatrixXd& qsub) const {
    if (qsub.rows() < s || qsub.cols() < s)
        throw InvalidParameter(detail::fmt("overlap block is %ldx%ld, observable needs %d",
                                           long(qsub.rows()), long(qsub.cols()), s));
    int map[16];
    for (int i = 0; i < s; ++i) map[i] = i;
    return eval_mapped(qsub, map);
}

std::string ObservableSpec::describe() const {
    std::string out;
    for (const auto& t : monomials) {
        if (!out.empty()) out += " * ";
        out += detail::fmt("q(%d,%d)", t.a, t.b);
        if (t.power != 1) out += detail::fmt("^%d", t.power);
    }
    for (const auto& ind : indicators) {
        if (!out.empty()) out += " * ";
        out += detail::fmt("1{q(%d,%d) %s %g}", ind.a, ind.b, ind.less_equal ? "<=" : ">",
                           ind.threshold);
    }
    return out.empty() ? "1" : out;
}

RostSource source_from(const std::vector<Rost>& rosts) {
    if (rosts.empty()) throw InvalidParameter("need at least one structure");
    // estimators invoke the source sequentially in replica order, so a plain
    // cycling counter is deterministic
    auto state = std::make_shared<std::pair<std::vector<Rost>, std::size_t>>(rosts, 0);
    return [state](RngStream&) -> Rost {
        return state->first[state->second++ % state->first.size()];
    };
}

EstimateWithError sampled_expectation(const RostSource& source, std::size_t n_replicas,
                                      const ObservableSpec& obs, std::size_t K,
                                      RngStream& rng, unsigned threads) {
    obs.validate();
    require_draws(n_replicas, K);
    require_budget(K, obs.s);
    std::vector<double> per(n_replicas);
    for_each_replica(source, n_replicas, rng, threads, 1, 0,
                     [&](std::size_t i, const Rost& rost, const RngStream& rep) {
        const Eigen::MatrixXd& q = rost.overlaps.matrix();
        std::vector<double> cum = cumulative_weights(rost.weights.values());
        std::vector<int> map(static_cast<std::size_t>(obs.s));
        long double acc = 0.0L;
        for (std::size_t k = 0; k < K; ++k) {
            RngStream st = rep.branch(kTupleBase + k);
            for (int j = 0; j < obs.s; ++j) map[std::size_t(j)] = int(sample_index(cum, st));
            acc += obs.eval_mapped(q, map.data());
        }
        per[i] = double(acc / (long double)K);
    });
    return summarize(per, K, rng, kBootSampled);
}

EstimateWithError sampled_expectation(const std::vector<Rost>& rosts, const ObservableSpec& obs,
                                      std::size_t K, RngStream& rng, unsigned threads) {
    return sampled_expectation(source_from(rosts), rosts.size(), obs, K, rng, threads);
}

std::vector<EstimateWithError> overlap_cdf_values(const RostSource& source,
                                                  std::size_t n_replicas,
                                                  const std::vector<double>& grid,
                                                  std::size_t K, RngStream& rng,
                                                  unsigned threads) {
    require_draws(n_replicas, K);
    if (grid.empty()) throw InvalidParameter("grid must not be empty");
    for (std::size_t j = 1; j < grid.size(); ++j)
        if (!(grid[j] > grid[j - 1]))
            throw InvalidParameter(detail::fmt("grid must increase strictly, got %g then %g",
                                               grid[j - 1], grid[j]));

    const std::size_t G = grid.size();
    std::vector<std::vector<double>> per(G, std::vector<double>(n_replicas));
    for_each_replica(source, n_replicas, rng, threads, 1, 0,
                     [&](std::size_t i, const Rost& rost, const RngStream& rep) {
        const Eigen::MatrixXd& q = rost.overlaps.matrix();
        std::vector<double> cum = cumulative_weights(rost.weights.values());
        std::vector<std::size_t> hits(G, 0);
        for (std::size_t k = 0; k < K; ++k) {
            RngStream st = rep.branch(kTupleBase + k);
            std::size_t a = sample_index(cum, st);
            std::size_t b = sample_index(cum, st);
            double v = q(Eigen::Index(a), Eigen::Index(b));
            // one pair serves every grid point, so the curve is monotone
            // draw by draw, not only in expectation
            for (std::size_t g = 0; g < G; ++g)
                if (v <= grid[g]) ++hits[g];
        }
        for (std::size_t g = 0; g < G; ++g)
            per[g][i] = double(hits[g]) / double(K);
    });

    auto idx = bootstrap_indices(rng, kBootCdf, n_replicas);
    std::vector<EstimateWithError> out(G);
    for (std::size_t g = 0; g < G; ++g) {
        out[g].value = mean_of(per[g]);
        out[g].std_error = resampled_se(per[g], idx);
        out[g].n_replicas = n_replicas;
        out[g].n_draws_per_replica = K;
    }
    return out;
}

std::vector<EstimateWithError> overlap_cdf_values(const std::vector<Rost>& rosts,
                                                  const std::vector<double>& grid,
                                                  std::size_t K, RngStream& rng,
                                                  unsigned threads) {
    return overlap_cdf_values(source_from(rosts), rosts.size(), grid, K, rng, threads);
}

OverlapCDF estimate_overlap_cdf(const std::vector<Rost>& rosts, const std::vector<double>& grid,
                                std::size_t K, RngStream& rng, unsigned threads) {
    std::vector<EstimateWithError> vals = overlap_cdf_values(rosts, grid, K, rng, threads);
    double total = vals.back().value;
    double scale = total < 1.0 - 1e-9 ? 1.0 : (1.0 - 1e-9) / total;
    std::vector<CdfAtom> atoms;
    double prev = 0.0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double mass = (vals[g].value - prev) * scale;
        prev = vals[g].value;
        if (mass > 0.0) atoms.push_back({grid[g], mass});
    }
    return OverlapCDF(std::move(atoms), false);
}

std::vector<double> default_cdf_grid(const OverlapCDF* x) {
    std::vector<double> grid;
    for (int j = 1; j <= 9; ++j) grid.push_back(0.1 * double(j));
    if (x) {
        for (const CdfAtom& atom : x->atoms()) {
            if (atom.location >= 1.0) continue;
            for (double g : {atom.location - 1e-6, atom.location + 1e-6})
                if (g >= 0.0 && g < 1.0) grid.push_back(g);
        }
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return grid;
}

namespace {

double log_tilted_sum(const std::vector<double>& w, const Eigen::VectorXd& kappa,
                      const PsiSpec& psi, double lambda) {
    const std::size_t n = w.size();
    double shift = -std::numeric_limits<double>::infinity();
    std::vector<double> lw(n);
    for (std::size_t i = 0; i < n; ++i) {
        lw[i] = std::log(w[i]) + lambda * psi_eval(psi, kappa(Eigen::Index(i)));
        shift = std::max(shift, lw[i]);
    }
    if (!std::isfinite(shift))
        throw NumericalFailure("tilted sum degenerated: no finite contribution");
    long double total = 0.0L;
    for (std::size_t i = 0; i < n; ++i) total += std::exp(lw[i] - shift);
    return shift + std::log(double(total));
}

} // namespace

EstimateWithError pressure(const RostSource& source, std::size_t n_replicas, const PsiSpec& psi,
                           int r, double lambda, std::size_t K, RngStream& rng,
                           unsigned threads) {
    require_draws(n_replicas, K);
    require_power(r);
    if (!std::isfinite(lambda)) throw InvalidParameter("lambda must be finite");
    if (lambda == 0.0) {
        // the weights are normalized, so the value is identically zero;
        // going through logs would only manufacture roundoff
        return {0.0, 0.0, n_replicas, K};
    }
    std::vector<double> per(n_replicas);
    for_each_replica(source, n_replicas, rng, threads, 1, 0,
                     [&](std::size_t i, const Rost& rost, const RngStream& rep) {
        FieldSampler sampler(rost.overlaps, r);
        const std::vector<double>& w = rost.weights.values();
        long double acc = 0.0L;
        for (std::size_t k = 0; k < K; ++k) {
            RngStream st = rep.branch(kFieldBase + k);
            acc += log_tilted_sum(w, sampler.draw(st), psi, lambda);
        }
        per[i] = double(acc / (long double)K);
    });
    return summarize(per, K, rng, kBootPressure);
}

EstimateWithError pressure(const std::vector<Rost>& rosts, const PsiSpec& psi, int r,
                           double lambda, std::size_t K, RngStream& rng, unsigned threads) {
    return pressure(source_from(rosts), rosts.size(), psi, r, lambda, K, rng, threads);
}

double log_field_mgf(const PsiSpec& psi, double lambda) {
    if (!std::isfinite(lambda)) throw InvalidParameter("lambda must be finite");
    const int n = 9600;
    const double lo = -12.0, hi = 12.0, h = (hi - lo) / n;
    long double acc = 0.0L;
    for (int i = 0; i <= n; ++i) {
        double z = lo + i * h;
        double f = std::exp(lambda * psi_eval(psi, z) - 0.5 * z * z);
        double wt = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += wt * f;
    }
    double integral = double(acc) * h / 3.0 / std::sqrt(2.0 * M_PI);
    return std::log(integral);
}

PressureDerivativeCheck pressure_derivative_check(const RostSource& source,
                                                  std::size_t n_replicas, const PsiSpec& psi,
                                                  int r, double lambda, double eps,
                                                  std::size_t K, RngStream& rng,
                                                  unsigned threads) {
    require_draws(n_replicas, K);
    require_power(r);
    if (!(eps > 0.0)) throw InvalidParameter("eps must be positive");
    if (!std::isfinite(lambda)) throw InvalidParameter("lambda must be finite");

    std::vector<double> fd(n_replicas), direct(n_replicas), second(n_replicas);
    std::vector<double> worst(n_replicas, std::numeric_limits<double>::infinity());
    for_each_replica(source, n_replicas, rng, threads, 1, 0,
                     [&](std::size_t i, const Rost& rost, const RngStream& rep) {
        FieldSampler sampler(rost.overlaps, r);
        const std::vector<double>& w = rost.weights.values();
        const std::size_t n = w.size();
        long double afd = 0.0L, adir = 0.0L, asec = 0.0L;
        for (std::size_t k = 0; k < K; ++k) {
            RngStream st = rep.branch(kFieldBase + k);
            Eigen::VectorXd kappa = sampler.draw(st);
            double l0 = log_tilted_sum(w, kappa, psi, lambda);
            double lp = log_tilted_sum(w, kappa, psi, lambda + eps);
            double lm = log_tilted_sum(w, kappa, psi, lambda - eps);

            long double num = 0.0L, den = 0.0L;
            for (std::size_t j = 0; j < n; ++j) {
                double p = psi_eval(psi, kappa(Eigen::Index(j)));
                double t = std::exp(std::log(w[j]) + lambda * p - l0);
                num += t * p;
                den += t;
            }
            afd += (lp - lm) / (2.0 * eps);
            adir += double(num / den);
            double sec = (lp - 2.0 * l0 + lm) / (eps * eps);
            asec += sec;
            worst[i] = std::min(worst[i], sec);
        }
        fd[i] = double(afd / (long double)K);
        direct[i] = double(adir / (long double)K);
        second[i] = double(asec / (long double)K);
    });

    auto idx = bootstrap_indices(rng, kBootDeriv, n_replicas);
    PressureDerivativeCheck out;
    out.eps = eps;
    out.finite_difference = {mean_of(fd), resampled_se(fd, idx), n_replicas, K};
    out.direct = {mean_of(direct), resampled_se(direct, idx), n_replicas, K};
    out.second_difference = {mean_of(second), resampled_se(second, idx), n_replicas, K};
    double se = std::sqrt(out.finite_difference.std_error * out.finite_difference.std_error +
                          out.direct.std_error * out.direct.std_error);
    out.diff_z = clamped_z(out.finite_difference.value - out.direct.value, se);
    out.min_second_difference = *std::min_element(worst.begin(), worst.end());
    return out;
}

PressureDerivativeCheck pressure_derivative_check(const std::vector<Rost>& rosts,
                                                  const PsiSpec& psi, int r, double lambda,
                                                  double eps, std::size_t K, RngStream& rng,
                                                  unsigned threads) {
    return pressure_derivative_check(source_from(rosts), rosts.size(), psi, r, lambda, eps, K,
                                     rng, threads);
}

namespace {

std::vector<std::vector<int>> injections_into(int m, int k) {
    // all ordered choices of k distinct positions out of m, lexicographic
    std::vector<std::vector<int>> out;
    std::vector<int> cur(static_cast<std::size_t>(k));
    std::vector<bool> used(static_cast<std::size_t>(m), false);
    std::function<void(int)> rec = [&](int depth) {
        if (depth == k) {
            out.push_back(cur);
            return;
        }
        for (int p = 0; p < m; ++p) {
            if (used[std::size_t(p)]) continue;
            used[std::size_t(p)] = true;
            cur[std::size_t(depth)] = p;
            rec(depth + 1);
            used[std::size_t(p)] = false;
        }
    };
    rec(0);
    return out;
}

void validate_terms(const ObservableSpec& obs, int m, const std::vector<TermSpec>& terms) {
    obs.validate();
    if (m < 2 || m > 6)
        throw InvalidParameter(detail::fmt("tuple size m = %d, must be in [2, 6]", m));
    for (const auto& t : terms) {
        if (t.k < 1 || t.k > m)
            throw InvalidParameter(detail::fmt("term uses k = %d replicas with m = %d tuple "
                                               "positions",
                                               t.k, m));
        bool has_pair = t.a != 0 || t.b != 0;
        if (has_pair) {
            if (t.a < 1 || t.b < 1 || t.a > t.k || t.b > t.k || t.a == t.b)
                throw InvalidParameter(detail::fmt("term overlap indices (%d, %d) invalid "
                                                   "for k = %d",
                                                   t.a, t.b, t.k));
        }
        if (t.with_f && obs.s > t.k)
            throw InvalidParameter(detail::fmt("term applies the observable on %d replicas "
                                               "but k = %d",
                                               obs.s, t.k));
    }
}

// per[term][replica]: injection-averaged term values on shared m-tuples
std::vector<std::vector<double>> tuple_term_matrix(const RostSource& source,
                                                   std::size_t n_replicas, int r,
                                                   const ObservableSpec& obs, int m,
                                                   const std::vector<TermSpec>& terms,
                                                   std::size_t K, const RngStream& rng,
                                                   unsigned threads) {
    require_budget(K, m);
    std::vector<std::vector<std::vector<int>>> inj(std::size_t(m) + 1);
    for (const auto& t : terms)
        if (inj[std::size_t(t.k)].empty()) inj[std::size_t(t.k)] = injections_into(m, t.k);

    std::vector<std::vector<double>> per(terms.size(), std::vector<double>(n_replicas));
    for_each_replica(source, n_replicas, rng, threads, 1, 0,
                     [&](std::size_t i, const Rost& rost, const RngStream& rep) {
        const Eigen::MatrixXd& q = rost.overlaps.matrix();
        std::vector<double> cum = cumulative_weights(rost.weights.values());
        std::vector<int> tuple(static_cast<std::size_t>(m));
        std::vector<int> map(static_cast<std::size_t>(m));
        std::vector<long double> acc(terms.size(), 0.0L);
        for (std::size_t k = 0; k < K; ++k) {
            RngStream st = rep.branch(kTupleBase + k);
            for (int j = 0; j < m; ++j) tuple[std::size_t(j)] = int(sample_index(cum, st));
            for (std::size_t t = 0; t < terms.size(); ++t) {
                const TermSpec& term = terms[t];
                const auto& choices = inj[std::size_t(term.k)];
                long double sum = 0.0L;
                for (const auto& pos : choices) {
                    for (int j = 0; j < term.k; ++j)
                        map[std::size_t(j)] = tuple[std::size_t(pos[std::size_t(j)])];
                    double v = 1.0;
                    if (term.a != 0)
                        v = detail::pow_int(
                            q(map[std::size_t(term.a - 1)], map[std::size_t(term.b - 1)]), r);
                    if (term.with_f) v *= obs.eval_mapped(q, map.data());
                    sum += v;
                }
                acc[t] += double(sum / (long double)choices.size());
            }
        }
        for (std::size_t t = 0; t < terms.size(); ++t)
            per[t][i] = double(acc[t] / (long double)K);
    });
    return per;
}

// combine(term_means) -> residual; bootstrap resamples replicas jointly so
// products of means are handled correctly
EstimateWithError residual_estimate(const std::vector<std::vector<double>>& per, std::size_t K,
                                    const RngStream& rng,
                                    const std::function<double(const std::vector<double>&)>&
                                        combine) {
    const std::size_t n = per.front().size();
    std::vector<double> means(per.size());
    for (std::size_t t = 0; t < per.size(); ++t) means[t] = mean_of(per[t]);

    auto idx = bootstrap_indices(rng, kBootResidual, n);
    std::vector<double> boot(idx.size());
    std::vector<double> rm(per.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
        for (std::size_t t = 0; t < per.size(); ++t) {
            long double acc = 0.0L;
            for (std::size_t j : idx[b]) acc += per[t][j];
            rm[t] = double(acc / (long double)n);
        }
        boot[b] = combine(rm);
    }
    long double bmean = 0.0L, m2 = 0.0L;
    for (double v : boot) bmean += v;
    bmean /= (long double)boot.size();
    for (double v : boot) {
        long double d = v - bmean;
        m2 += d * d;
    }
    EstimateWithError est;
    est.value = combine(means);
    est.std_error = std::sqrt(double(m2 / (long double)(boot.size() - 1)));
    est.n_replicas = n;
    est.n_draws_per_replica = K;
    return est;
}

void require_identity_params(int s, int r) {
    if (s < 2) throw InvalidParameter(detail::fmt("s = %d, must be >= 2", s));
    require_power(r);
}

void require_matching_observable(const ObservableSpec& obs, int s) {
    if (obs.s != s)
        throw InvalidParameter(detail::fmt("observable uses %d replicas, expected s = %d",
                                           obs.s, s));
}

} // namespace

std::vector<double> shared_tuple_terms(const std::vector<Rost>& rosts, int r,
                                       const ObservableSpec& obs, int m,
                                       const std::vector<TermSpec>& terms, std::size_t K,
                                       RngStream& rng, unsigned threads) {
    require_draws(rosts.size(), K);
    require_power(r);
    validate_terms(obs, m, terms);
    auto per = tuple_term_matrix(source_from(rosts), rosts.size(), r, obs, m, terms, K, rng,
                                 threads);
    std::vector<double> out(terms.size());
    for (std::size_t t = 0; t < terms.size(); ++t) out[t] = mean_of(per[t]);
    return out;
}

EstimateWithError gg_residual(const RostSource& source, std::size_t n_replicas, int s, int r,
                              const ObservableSpec& obs, std::size_t K, RngStream& rng,
                              unsigned threads) {
    require_identity_params(s, r);
    require_draws(n_replicas, K);
    require_matching_observable(obs, s);

    std::vector<TermSpec> terms;
    terms.push_back({s + 1, s, s + 1, true});
    terms.push_back({2, 1, 2, false});
    terms.push_back({s, 0, 0, true});
    for (int l = 1; l < s; ++l) terms.push_back({s, l, s, true});
    validate_terms(obs, s + 1, terms);

    auto per = tuple_term_matrix(source, n_replicas, r, obs, s + 1, terms, K, rng, threads);
    double inv_s = 1.0 / double(s);
    return residual_estimate(per, K, rng, [inv_s](const std::vector<double>& t) {
        double out = t[0] - inv_s * t[1] * t[2];
        for (std::size_t l = 3; l < t.size(); ++l) out -= inv_s * t[l];
        return out;
    });
}

EstimateWithError gg_residual(const std::vector<Rost>& rosts, int s, int r,
                              const ObservableSpec& obs, std::size_t K, RngStream& rng,
                              unsigned threads) {
    return gg_residual(source_from(rosts), rosts.size(), s, r, obs, K, rng, threads);
}

EstimateWithError ac_residual(const RostSource& source, std::size_t n_replicas, int s, int r,
                              const ObservableSpec& obs, std::size_t K, RngStream& rng,
                              unsigned threads) {
    require_identity_params(s, r);
    require_draws(n_replicas, K);
    require_matching_observable(obs, s);

    std::vector<TermSpec> terms = {
        {s, 1, 2, true},
        {s + 1, s, s + 1, true},
        {s + 2, s + 1, s + 2, true},
    };
    validate_terms(obs, s + 2, terms);

    auto per = tuple_term_matrix(source, n_replicas, r, obs, s + 2, terms, K, rng, threads);
    double sd = double(s);
    return residual_estimate(per, K, rng, [sd](const std::vector<double>& t) {
        return 0.5 * (sd - 1.0) * t[0] - sd * t[1] + 0.5 * (sd + 1.0) * t[2];
    });
}

EstimateWithError ac_residual(const std::vector<Rost>& rosts, int s, int r,
                              const ObservableSpec& obs, std::size_t K, RngStream& rng,
                              unsigned threads) {
    return ac_residual(source_from(rosts), rosts.size(), s, r, obs, K, rng, threads);
}

namespace {

double violation_fraction(const std::vector<Rost>& rosts, std::size_t n_triples, double tol,
                          const RngStream& rng) {
    std::vector<std::vector<double>> cums;
    cums.reserve(rosts.size());
    for (const Rost& r : rosts) cums.push_back(cumulative_weights(r.weights.values()));

    std::size_t violations = 0;
    for (std::size_t t = 0; t < n_triples; ++t) {
        const Rost& rost = rosts[t % rosts.size()];
        const std::vector<double>& cum = cums[t % rosts.size()];
        RngStream st = rng.branch(kTripleBase + t);
        std::size_t i = sample_index(cum, st);
        std::size_t j = sample_index(cum, st);
        std::size_t k = sample_index(cum, st);
        // the middle value is found by sorting, not by subtracting from the
        // sum: exact ties between non-dyadic overlaps must stay exact
        std::array<double, 3> q = {rost.overlaps(i, j), rost.overlaps(i, k),
                                   rost.overlaps(j, k)};
        std::sort(q.begin(), q.end());
        if (q[0] < q[1] - tol) ++violations;
    }
    return double(violations) / double(n_triples);
}

} // namespace

double ultrametric_violation(const std::vector<Rost>& rosts, std::size_t n_triples, double tol,
                             RngStream& rng) {
    if (rosts.empty()) throw InvalidParameter("need at least one structure");
    if (n_triples == 0) throw InvalidParameter("need at least one triple");
    if (tol < 0.0) throw InvalidParameter("tol must be nonnegative");
    return violation_fraction(rosts, n_triples, tol, rng);
}

double ultrametric_violation(const RostSource& source, std::size_t n_replicas,
                             std::size_t n_triples, double tol, RngStream& rng) {
    if (n_replicas == 0) throw InvalidParameter("need at least one replica");
    if (n_triples == 0) throw InvalidParameter("need at least one triple");
    if (tol < 0.0) throw InvalidParameter("tol must be nonnegative");
    std::vector<Rost> rosts;
    rosts.reserve(n_replicas);
    for (std::size_t i = 0; i < n_replicas; ++i) {
        RngStream rep = rng.branch(i);
        rosts.push_back(source(rep));
    }
    return violation_fraction(rosts, n_triples, tol, rng);
}

namespace {

std::vector<std::string> comparison_row_names(const std::vector<double>& grid) {
    std::vector<std::string> names = {"sum_w2", "sum_w3", "top_weight"};
    for (double g : grid) names.push_back(detail::fmt("cdf_at_%.1f", g));
    return names;
}

std::vector<double> structure_observables(const Rost& rost, const std::vector<double>& grid,
                                          std::size_t K, const RngStream& rep) {
    const std::vector<double>& w = rost.weights.values();
    long double s2 = 0.0L, s3 = 0.0L;
    for (double v : w) {
        s2 += v * v;
        s3 += v * v * v;
    }
    std::vector<double> out = {double(s2), double(s3), w[0]};

    const Eigen::MatrixXd& q = rost.overlaps.matrix();
    std::vector<double> cum = cumulative_weights(w);
    std::vector<std::size_t> hits(grid.size(), 0);
    for (std::size_t k = 0; k < K; ++k) {
        RngStream st = rep.branch(kTupleBase + k);
        std::size_t a = sample_index(cum, st);
        std::size_t b = sample_index(cum, st);
        double v = q(Eigen::Index(a), Eigen::Index(b));
        for (std::size_t g = 0; g < grid.size(); ++g)
            if (v <= grid[g]) ++hits[g];
    }
    for (std::size_t g = 0; g < grid.size(); ++g)
        out.push_back(double(hits[g]) / double(K));
    return out;
}

QsObservableRow two_sample_row(const std::string& name, const std::vector<double>& pre,
                               const std::vector<double>& post) {
    auto moments = [](const std::vector<double>& v) {
        long double mean = 0.0L;
        for (double x : v) mean += x;
        mean /= (long double)v.size();
        long double m2 = 0.0L;
        for (double x : v) {
            long double d = x - mean;
            m2 += d * d;
        }
        double var = v.size() > 1 ? double(m2 / (long double)(v.size() - 1)) : 0.0;
        return std::pair<double, double>(double(mean),
                                         std::sqrt(var / double(v.size())));
    };
    QsObservableRow row;
    row.name = name;
    auto [pm, pse] = moments(pre);
    auto [qm, qse] = moments(post);
    row.pre_mean = pm;
    row.pre_se = pse;
    row.post_mean = qm;
    row.post_se = qse;
    row.z = clamped_z(qm - pm, std::sqrt(pse * pse + qse * qse));
    row.p = two_sided_p(row.z);
    return row;
}

} // namespace

QsReport quasi_stationarity_test(const RostSource& source, const PsiSpec& psi, int r,
                                 std::size_t n_replicas, std::size_t K, RngStream& rng,
                                 unsigned threads, double alpha) {
    require_power(r);
    if (n_replicas < 2) throw InvalidParameter("need at least two replicas per arm");
    if (K == 0) throw InvalidParameter("need at least one draw per replica");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidParameter("alpha must be in (0, 1)");

    std::vector<double> grid = default_cdf_grid(nullptr);
    const std::size_t n_rows = 3 + grid.size();
    std::vector<std::vector<double>> pre(n_rows, std::vector<double>(n_replicas));
    std::vector<std::vector<double>> post(n_rows, std::vector<double>(n_replicas));

    for_each_replica(source, n_replicas, rng, threads, 2, 0,
                     [&](std::size_t i, const Rost& rost, const RngStream& rep) {
        std::vector<double> obs = structure_observables(rost, grid, K, rep);
        for (std::size_t j = 0; j < n_rows; ++j) pre[j][i] = obs[j];
    });
    for_each_replica(source, n_replicas, rng, threads, 2, 1,
                     [&](std::size_t i, const Rost& rost, const RngStream& rep) {
        RngStream field = rep.branch(kEvolveField);
        auto [next, rec] = evolve_step(rost, psi, r, field);
        (void)rec;
        std::vector<double> obs = structure_observables(next, grid, K, rep);
        for (std::size_t j = 0; j < n_rows; ++j) post[j][i] = obs[j];
    });

    QsReport report;
    report.alpha = alpha;
    std::vector<std::string> names = comparison_row_names(grid);
    for (std::size_t j = 0; j < n_rows; ++j) {
        QsObservableRow row = two_sample_row(names[j], pre[j], post[j]);
        row.reject = row.p < alpha / double(n_rows);
        report.pass = report.pass && !row.reject;
        report.rows.push_back(std::move(row));
    }
    return report;
}

CltReport clt_reduction_experiment(const RostSource& source, double lambda, double h, int r,
                                   std::size_t T, std::size_t n_replicas, std::size_t K,
                                   RngStream& rng, unsigned threads, double z_max) {
    require_power(r);
    if (T == 0) throw InvalidParameter("need at least one step");
    if (n_replicas < 2) throw InvalidParameter("need at least two replicas per arm");
    if (K == 0) throw InvalidParameter("need at least one draw per replica");
    if (h == 0.0 || !std::isfinite(h))
        throw InvalidParameter("h must be nonzero: the slope tanh(h) sets the scaling");
    if (!std::isfinite(lambda) || lambda == 0.0)
        throw InvalidParameter("lambda must be finite and nonzero");
    if (!(z_max > 0.0)) throw InvalidParameter("z_max must be positive");

    CltReport report;
    report.z_max = z_max;
    report.expected_variance = lambda * lambda;
    report.beta = lambda / (std::abs(std::tanh(h)) * std::sqrt(double(T)));
    PsiSpec smooth = PsiSpec::smooth_shifted(report.beta, h, true);
    PsiSpec linear = PsiSpec::linear(lambda);

    std::vector<double> grid = default_cdf_grid(nullptr);
    const std::size_t n_rows = 3 + grid.size();
    std::vector<std::vector<double>> many(n_rows, std::vector<double>(n_replicas));
    std::vector<std::vector<double>> once(n_rows, std::vector<double>(n_replicas));
    std::vector<double> totals(n_replicas);

    for_each_replica(source, n_replicas, rng, threads, 2, 0,
                     [&](std::size_t i, const Rost& rost, const RngStream& rep) {
        RngStream field = rep.branch(kEvolveField);
        Trajectory traj = run_trajectory(rost, smooth, r, T, field);
        totals[i] = traj.cumulative_increments[0];
        std::vector<double> obs = structure_observables(traj.current, grid, K, rep);
        for (std::size_t j = 0; j < n_rows; ++j) many[j][i] = obs[j];
    });
    for_each_replica(source, n_replicas, rng, threads, 2, 1,
                     [&](std::size_t i, const Rost& rost, const RngStream& rep) {
        RngStream field = rep.branch(kEvolveField);
        auto [next, rec] = evolve_step(rost, linear, r, field);
        (void)rec;
        std::vector<double> obs = structure_observables(next, grid, K, rep);
        for (std::size_t j = 0; j < n_rows; ++j) once[j][i] = obs[j];
    });

    std::vector<std::string> names = comparison_row_names(grid);
    for (std::size_t j = 0; j < n_rows; ++j) {
        QsObservableRow row = two_sample_row(names[j], once[j], many[j]);
        row.reject = std::abs(row.z) > z_max;
        report.pass = report.pass && !row.reject;
        report.rows.push_back(std::move(row));
    }

    // marginal variance of one atom's accumulated increment; which atom does
    // not matter since the field law is exchangeable over ranks
    auto sample_variance = [](const std::vector<double>& v) {
        long double mean = 0.0L;
        for (double x : v) mean += x;
        mean /= (long double)v.size();
        long double m2 = 0.0L;
        for (double x : v) {
            long double d = x - mean;
            m2 += d * d;
        }
        return double(m2 / (long double)(v.size() - 1));
    };
    report.increment_variance.value = sample_variance(totals);
    auto idx = bootstrap_indices(rng, kBootVariance, n_replicas);
    std::vector<double> boot(idx.size());
    std::vector<double> resampled(n_replicas);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        for (std::size_t j = 0; j < n_replicas; ++j) resampled[j] = totals[idx[b][j]];
        boot[b] = sample_variance(resampled);
    }
    long double bmean = 0.0L, bm2 = 0.0L;
    for (double v : boot) bmean += v;
    bmean /= (long double)boot.size();
    for (double v : boot) {
        long double d = v - bmean;
        bm2 += d * d;
    }
    report.increment_variance.std_error = std::sqrt(double(bm2 / (long double)(boot.size() - 1)));
    report.increment_variance.n_replicas = n_replicas;
    report.increment_variance.n_draws_per_replica = T;
    return report;
}

} // namespace rost
