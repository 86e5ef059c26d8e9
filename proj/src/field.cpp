#include "rost/field.hpp"

#include "rost/errors.hpp"

#include "detail.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace rost {

namespace {

struct TreeNode {
    double coef;
    std::vector<std::uint32_t> members;
};

} // namespace

struct FieldSampler::Impl {
    std::size_t n = 0;
    bool tree = false;
    int escalations = 0;

    std::vector<TreeNode> nodes;
    std::vector<double> leaf_coef;

    Eigen::MatrixXd chol;
};

namespace {

// Recursive refinement of the covariance into nested blocks. Succeeds only
// if the matrix is exactly hierarchical: inside every class the minimum
// entry v splits the class into components of entries > v, and every
// cross-component entry equals v bit for bit.
class TreeBuilder {
public:
    TreeBuilder(const Eigen::MatrixXd& c, std::vector<TreeNode>& nodes,
                std::vector<double>& leaf_coef)
        : c_(c), nodes_(nodes), leaf_coef_(leaf_coef) {}

    bool run() {
        auto n = std::size_t(c_.rows());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (!(c_(i, j) >= 0.0)) return false;
        leaf_coef_.assign(n, 0.0);
        std::vector<std::uint32_t> all(n);
        std::iota(all.begin(), all.end(), 0u);
        return refine(std::move(all), 0.0);
    }

private:
    bool refine(std::vector<std::uint32_t> idx, double parent) {
        if (idx.size() == 1) {
            leaf_coef_[idx[0]] = std::sqrt(1.0 - parent);
            return parent <= 1.0;
        }
        double v = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < idx.size(); ++a)
            for (std::size_t b = a + 1; b < idx.size(); ++b)
                v = std::min(v, c_(idx[a], idx[b]));
        if (v < parent || v > 1.0) return false;

        // components of the graph with edges c > v, found in index order
        std::vector<std::uint32_t> comp(idx.size());
        std::iota(comp.begin(), comp.end(), 0u);
        auto find = [&](std::uint32_t a) {
            while (comp[a] != a) {
                comp[a] = comp[comp[a]];
                a = comp[a];
            }
            return a;
        };
        for (std::size_t a = 0; a < idx.size(); ++a)
            for (std::size_t b = a + 1; b < idx.size(); ++b)
                if (c_(idx[a], idx[b]) > v) {
                    std::uint32_t ra = find(std::uint32_t(a)), rb = find(std::uint32_t(b));
                    if (ra != rb) comp[std::max(ra, rb)] = std::min(ra, rb);
                }
        std::vector<std::vector<std::uint32_t>> classes;
        std::vector<int> class_of(idx.size(), -1);
        for (std::size_t a = 0; a < idx.size(); ++a) {
            std::uint32_t root = find(std::uint32_t(a));
            if (class_of[root] < 0) {
                class_of[root] = int(classes.size());
                classes.emplace_back();
            }
            class_of[a] = class_of[root];
            classes[std::size_t(class_of[root])].push_back(idx[a]);
        }
        if (classes.size() < 2) return false;
        for (std::size_t a = 0; a < idx.size(); ++a)
            for (std::size_t b = a + 1; b < idx.size(); ++b)
                if (class_of[a] != class_of[b] && c_(idx[a], idx[b]) != v) return false;

        nodes_.push_back({std::sqrt(v - parent), std::move(idx)});
        for (auto& cls : classes)
            if (!refine(std::move(cls), v)) return false;
        return true;
    }

    const Eigen::MatrixXd& c_;
    std::vector<TreeNode>& nodes_;
    std::vector<double>& leaf_coef_;
};

void build_dense(const Eigen::MatrixXd& c, Eigen::MatrixXd& chol, int& escalations) {
    auto n = c.rows();
    double jitter = 0.0;
    const double base = 1e-12 * c.trace() / double(n);
    Eigen::LLT<Eigen::MatrixXd> llt;
    for (int attempt = 0; attempt <= 6; ++attempt) {
        Eigen::MatrixXd shifted = c;
        if (attempt > 0) {
            jitter = (attempt == 1) ? base : jitter * 10.0;
            shifted.diagonal().array() += jitter;
            ++escalations;
        }
        llt.compute(shifted);
        if (llt.info() == Eigen::Success) {
            Eigen::MatrixXd l = llt.matrixL();
            // a zero pivot can slip through as a silent non-finite column
            if (l.allFinite()) {
                chol = std::move(l);
                return;
            }
        }
    }
    throw NumericalFailure(
        detail::fmt("field covariance is not factorizable; the matrix stayed "
                    "non positive definite after a diagonal shift of %.3e",
                    jitter));
}

} // namespace

FieldSampler::FieldSampler(const OverlapMatrix& q, int r) : impl_(new Impl) {
    Eigen::MatrixXd c = entrywise_power(q.matrix(), r);
    impl_->n = std::size_t(c.rows());
    TreeBuilder builder(c, impl_->nodes, impl_->leaf_coef);
    if (builder.run()) {
        impl_->tree = true;
    } else {
        impl_->nodes.clear();
        impl_->leaf_coef.clear();
        build_dense(c, impl_->chol, impl_->escalations);
    }
}

FieldSampler::~FieldSampler() = default;
FieldSampler::FieldSampler(FieldSampler&&) noexcept = default;
FieldSampler& FieldSampler::operator=(FieldSampler&&) noexcept = default;

std::size_t FieldSampler::size() const { return impl_->n; }
bool FieldSampler::used_tree() const { return impl_->tree; }
int FieldSampler::jitter_escalations() const { return impl_->escalations; }

Eigen::VectorXd FieldSampler::draw(RngStream& rng) const {
    const auto n = Eigen::Index(impl_->n);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    if (impl_->tree) {
        for (const auto& node : impl_->nodes) {
            double g = rng.normal();
            if (node.coef != 0.0)
                for (std::uint32_t i : node.members) out(i) += node.coef * g;
        }
        for (Eigen::Index i = 0; i < n; ++i) out(i) += impl_->leaf_coef[std::size_t(i)] * rng.normal();
    } else {
        Eigen::VectorXd z(n);
        for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
        out.noalias() = impl_->chol * z;
    }
    return out;
}

Eigen::VectorXd sample_gaussian_field(const OverlapMatrix& q, int r, RngStream& rng) {
    return FieldSampler(q, r).draw(rng);
}

} // namespace rost
