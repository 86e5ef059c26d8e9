#include "rost/coalescent.hpp"

#include "rost/errors.hpp"

#include "detail.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace rost {

double coalescent_merge_size_pmf(std::size_t b, std::size_t k) {
    if (b < 2) throw InvalidParameter("merge size pmf needs at least 2 blocks");
    if (k < 2 || k > b)
        throw InvalidParameter(detail::fmt("merge size k=%zu out of range [2, %zu]", k, b));
    // C(b,k) subsets, each at rate (k-2)!(b-k)!/(b-1)!, total rate b-1;
    // the product telescopes to b / (k (k-1) (b-1))
    double bd = double(b), kd = double(k);
    return bd / (kd * (kd - 1.0) * (bd - 1.0));
}

namespace {

// Inverse-CDF draw of the merge size while b blocks remain.
// P(K <= k) = b (k-1) / (k (b-1)), so K is the smallest integer >= kreal.
std::size_t sample_merge_size(std::size_t b, RngStream& rng) {
    double u = rng.uniform();
    double bd = double(b);
    double kreal = bd / (bd - u * (bd - 1.0));
    auto k = std::size_t(std::ceil(kreal - 1e-12));
    if (k < 2) k = 2;
    if (k > b) k = b;
    return k;
}

} // namespace

CoalescentRecord sample_bs_coalescent(std::size_t n, RngStream& rng) {
    if (n < 2) throw InvalidParameter("coalescent needs at least 2 leaves");

    CoalescentRecord rec;
    rec.n = n;
    rec.pairwise_times = Eigen::MatrixXd::Zero(n, n);

    // blocks hold sorted leaf members; front() is the leader
    std::vector<std::vector<std::uint32_t>> blocks(n);
    for (std::size_t i = 0; i < n; ++i) blocks[i] = {std::uint32_t(i)};

    std::vector<std::size_t> idx(n);
    double t = 0.0;
    while (blocks.size() > 1) {
        std::size_t b = blocks.size();
        t += rng.exponential(double(b - 1));
        std::size_t k = sample_merge_size(b, rng);

        idx.resize(b);
        std::iota(idx.begin(), idx.end(), std::size_t(0));
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + rng.uniform_index(b - i);
            std::swap(idx[i], idx[j]);
        }
        std::vector<std::size_t> chosen(idx.begin(), idx.begin() + k);
        std::sort(chosen.begin(), chosen.end());

        MergeEvent ev;
        ev.time = t;
        ev.merged.reserve(k);
        for (std::size_t c : chosen) ev.merged.push_back(blocks[c].front());
        std::sort(ev.merged.begin(), ev.merged.end());

        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t c = a + 1; c < k; ++c)
                for (std::uint32_t i : blocks[chosen[a]])
                    for (std::uint32_t j : blocks[chosen[c]]) {
                        rec.pairwise_times(i, j) = t;
                        rec.pairwise_times(j, i) = t;
                    }

        std::size_t target = chosen.front();
        for (std::size_t a = 1; a < k; ++a) {
            if (blocks[chosen[a]].front() < blocks[target].front()) target = chosen[a];
        }
        std::vector<std::uint32_t> merged;
        for (std::size_t c : chosen) {
            std::vector<std::uint32_t> next;
            next.reserve(merged.size() + blocks[c].size());
            std::merge(merged.begin(), merged.end(), blocks[c].begin(), blocks[c].end(),
                       std::back_inserter(next));
            merged = std::move(next);
        }
        blocks[target] = std::move(merged);
        for (auto it = chosen.rbegin(); it != chosen.rend(); ++it)
            if (*it != target) blocks.erase(blocks.begin() + std::ptrdiff_t(*it));

        rec.events.push_back(std::move(ev));
    }
    return rec;
}

} // namespace rost
