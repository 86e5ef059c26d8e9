#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace oracles {

std::vector<double> stick_breaking_top(double alpha, std::size_t n,
                                       std::size_t n_sticks,
                                       std::mt19937_64& eng) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha");
    std::vector<double> sticks(n_sticks);
    double rem = 1.0;
    for (std::size_t i = 0; i < n_sticks; ++i) {
        std::gamma_distribution<double> ga(1.0 - alpha, 1.0);
        std::gamma_distribution<double> gb(static_cast<double>(i + 1) * alpha, 1.0);
        double x = ga(eng), y = gb(eng);
        double v = x / (x + y);
        sticks[i] = rem * v;
        rem *= (1.0 - v);
    }
    std::sort(sticks.begin(), sticks.end(), std::greater<double>());
    sticks.resize(std::min(n, n_sticks));
    double s = std::accumulate(sticks.begin(), sticks.end(), 0.0);
    for (double& v : sticks) v /= s;
    return sticks;
}

double merge_rate_quadrature(std::size_t b, std::size_t k) {
    if (k < 2 || k > b) throw std::invalid_argument("merge rate: k");
    auto integrand = [&](double x) {
        return std::pow(x, static_cast<double>(k) - 2.0) *
               std::pow(1.0 - x, static_cast<double>(b - k));
    };
    const std::size_t intervals = 20000; // even
    const double hstep = 1.0 / static_cast<double>(intervals);
    double acc = integrand(0.0) + integrand(1.0);
    for (std::size_t i = 1; i < intervals; ++i) {
        double x = static_cast<double>(i) * hstep;
        acc += integrand(x) * (i % 2 == 1 ? 4.0 : 2.0);
    }
    return acc * hstep / 3.0;
}

double pd_eppf(double alpha, const std::vector<int>& sizes) {
    // p(n1..nk) = alpha^{k-1} (k-1)! / (n-1)! * prod_i (1-alpha)_{n_i - 1}
    int n = 0;
    for (int s : sizes) n += s;
    int k = static_cast<int>(sizes.size());
    double logp = static_cast<double>(k - 1) * std::log(alpha);
    for (int j = 1; j < k; ++j) logp += std::log(static_cast<double>(j));
    for (int j = 1; j < n; ++j) logp -= std::log(static_cast<double>(j));
    for (int s : sizes)
        for (int j = 0; j < s - 1; ++j)
            logp += std::log(1.0 - alpha + static_cast<double>(j));
    return std::exp(logp);
}

namespace {

// All set partitions of {0..j-1} as assignment vectors in restricted
// growth form.
std::vector<std::vector<int>> set_partitions(int j) {
    std::vector<std::vector<int>> out;
    std::vector<int> a(static_cast<std::size_t>(j), 0);
    std::function<void(int, int)> rec = [&](int i, int maxb) {
        if (i == j) {
            out.push_back(a);
            return;
        }
        for (int b = 0; b <= maxb + 1; ++b) {
            a[static_cast<std::size_t>(i)] = b;
            rec(i + 1, std::max(maxb, b));
        }
    };
    rec(0, -1);
    return out;
}

std::vector<int> block_sizes(const std::vector<int>& assign) {
    int k = *std::max_element(assign.begin(), assign.end()) + 1;
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (int b : assign) sizes[static_cast<std::size_t>(b)]++;
    return sizes;
}

} // namespace

double one_level_expectation(double m, double qstar, int j, const PatternFn& f) {
    double total = 0.0;
    Eigen::MatrixXd pat(j, j);
    for (const auto& assign : set_partitions(j)) {
        double p = pd_eppf(m, block_sizes(assign));
        for (int a = 0; a < j; ++a)
            for (int b = 0; b < j; ++b)
                pat(a, b) = assign[static_cast<std::size_t>(a)] ==
                                    assign[static_cast<std::size_t>(b)]
                                ? 1.0
                                : qstar;
        total += p * f(pat);
    }
    return total;
}

double two_level_expectation(double m1, double m2, double q1, double q2,
                             int j, const PatternFn& f) {
    double total = 0.0;
    Eigen::MatrixXd pat(j, j);
    for (const auto& fine : set_partitions(j)) {
        double pf = pd_eppf(m2, block_sizes(fine));
        int k = *std::max_element(fine.begin(), fine.end()) + 1;
        for (const auto& coarse : set_partitions(k)) {
            double pc = pd_eppf(m1 / m2, block_sizes(coarse));
            for (int a = 0; a < j; ++a)
                for (int b = 0; b < j; ++b) {
                    int fa = fine[static_cast<std::size_t>(a)];
                    int fb = fine[static_cast<std::size_t>(b)];
                    if (fa == fb)
                        pat(a, b) = 1.0;
                    else if (coarse[static_cast<std::size_t>(fa)] ==
                             coarse[static_cast<std::size_t>(fb)])
                        pat(a, b) = q2;
                    else
                        pat(a, b) = q1;
                }
            total += pf * pc * f(pat);
        }
    }
    return total;
}

double fixed_structure_expectation(const std::vector<double>& w,
                                   const Eigen::MatrixXd& q, int j,
                                   const PatternFn& f) {
    const int n = static_cast<int>(w.size());
    std::vector<int> idx(static_cast<std::size_t>(j), 0);
    Eigen::MatrixXd pat(j, j);
    double total = 0.0;
    while (true) {
        double p = 1.0;
        for (int t = 0; t < j; ++t) p *= w[static_cast<std::size_t>(idx[t])];
        for (int a = 0; a < j; ++a)
            for (int b = 0; b < j; ++b) pat(a, b) = q(idx[a], idx[b]);
        total += p * f(pat);
        int t = j - 1;
        while (t >= 0 && idx[static_cast<std::size_t>(t)] == n - 1) {
            idx[static_cast<std::size_t>(t)] = 0;
            --t;
        }
        if (t < 0) break;
        idx[static_cast<std::size_t>(t)]++;
    }
    return total;
}

double ks_statistic(std::vector<double> sample,
                    const std::function<double(double)>& cdf) {
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        double c = cdf(sample[i]);
        double lo = static_cast<double>(i) / n;
        double hi = static_cast<double>(i + 1) / n;
        d = std::max(d, std::max(std::abs(c - lo), std::abs(hi - c)));
    }
    return d;
}

double ks_pvalue(double d, std::size_t n) {
    double rn = std::sqrt(static_cast<double>(n));
    double lam = (rn + 0.12 + 0.11 / rn) * d;
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        double term = 2.0 * std::pow(-1.0, k - 1) * std::exp(-2.0 * k * k * lam * lam);
        sum += term;
        if (std::abs(term) < 1e-12) break;
    }
    return std::min(1.0, std::max(0.0, sum));
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

} // namespace oracles
