#include "lfa/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

#include "lfa/rng.hpp"

namespace lfa {

void ClusterConfig::validate() const {
    if (!(tau_low > -1.0 && tau_low < tau_high && tau_high < 1.0)) {
        throw ValidationError("cluster thresholds must satisfy -1 < tau_low < tau_high < 1");
    }
    if (knn < 1) throw ValidationError("knn must be >= 1");
}

namespace {

// Union-find with path compression.
struct DisjointSet {
    std::vector<std::uint64_t> parent;
    explicit DisjointSet(std::uint64_t n) : parent(n) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    std::uint64_t find(std::uint64_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::uint64_t a, std::uint64_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a > b) std::swap(a, b);  // lower root wins, keeps merging order-free
        parent[b] = a;
    }
};

// Dot product of unit rows = cosine.
double unit_cosine(const EmbeddingStore& store, std::uint64_t i, std::uint64_t j) {
    auto a = store.row(i);
    auto b = store.row(j);
    double dot = 0.0;
    for (std::uint32_t d = 0; d < store.dim; ++d) dot += static_cast<double>(a[d]) * b[d];
    return dot;
}

std::vector<std::uint32_t> pass1_raw(const EmbeddingStore& normalized, const IvfPqIndex& index,
                                     const ClusterConfig& cfg) {
    const std::uint64_t n = normalized.rows;
    std::uint32_t nprobe = cfg.nprobe ? cfg.nprobe : default_nprobe(index.nlist());

    // Candidate edges from kNN queries; exact cosine decides membership.
    std::vector<std::vector<std::uint64_t>> edges(n);
#pragma omp parallel for schedule(dynamic)
    for (std::uint64_t i = 0; i < n; ++i) {
        std::uint32_t k = static_cast<std::uint32_t>(
            std::min<std::uint64_t>(static_cast<std::uint64_t>(cfg.knn) + 1, n));
        SearchResult res = search(normalized.row(i), index, k, nprobe);
        for (const auto& [j, dist] : res.neighbors) {
            if (j == i) continue;
            if (unit_cosine(normalized, i, j) > cfg.tau_high) edges[i].push_back(j);
        }
    }

    // Serial merge in ascending id order; the union-find result is
    // independent of the query scheduling above.
    DisjointSet ds(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        for (std::uint64_t j : edges[i]) ds.unite(i, j);
    }
    std::vector<std::uint32_t> raw(n);
    for (std::uint64_t i = 0; i < n; ++i) raw[i] = static_cast<std::uint32_t>(ds.find(i));
    return raw;
}

}  // namespace

ClusterAssignment canonicalize_labels(std::span<const std::uint32_t> raw_labels) {
    ClusterAssignment out;
    out.labels.resize(raw_labels.size());
    std::unordered_map<std::uint32_t, std::uint32_t> remap;
    remap.reserve(raw_labels.size());
    std::uint32_t next = 0;
    // First occurrence in id order = smallest member id.
    for (std::size_t i = 0; i < raw_labels.size(); ++i) {
        auto [it, inserted] = remap.emplace(raw_labels[i], next);
        if (inserted) ++next;
        out.labels[i] = it->second;
    }
    out.n_clusters = next;
    return out;
}

ClusterAssignment cluster_pass1(const EmbeddingStore& normalized, const IvfPqIndex& index,
                                const ClusterConfig& cfg) {
    cfg.validate();
    if (normalized.rows == 0) return {};
    auto raw = pass1_raw(normalized, index, cfg);
    return canonicalize_labels(raw);
}

ClusterAssignment cluster(const EmbeddingStore& normalized, const IvfPqIndex& index,
                          const ClusterConfig& cfg) {
    cfg.validate();
    if (normalized.rows == 0) return {};
    const std::uint64_t n = normalized.rows;

    ClusterAssignment pass1 = canonicalize_labels(pass1_raw(normalized, index, cfg));
    std::vector<std::uint64_t> sizes(pass1.n_clusters, 0);
    for (auto c : pass1.labels) ++sizes[c];

    // Frozen centroids of the multi-member pass-1 clusters, renormalized.
    // Singletons attach independently, so the result does not depend on
    // the order they are visited in.
    std::vector<std::uint32_t> multi_ids;
    for (std::uint32_t c = 0; c < pass1.n_clusters; ++c) {
        if (sizes[c] >= 2) multi_ids.push_back(c);
    }
    const std::uint32_t dim = normalized.dim;
    std::vector<double> centroids(static_cast<std::size_t>(multi_ids.size()) * dim, 0.0);
    std::unordered_map<std::uint32_t, std::size_t> multi_slot;
    for (std::size_t s = 0; s < multi_ids.size(); ++s) multi_slot.emplace(multi_ids[s], s);
    for (std::uint64_t i = 0; i < n; ++i) {
        auto it = multi_slot.find(pass1.labels[i]);
        if (it == multi_slot.end()) continue;
        double* dst = centroids.data() + it->second * dim;
        auto x = normalized.row(i);
        for (std::uint32_t d = 0; d < dim; ++d) dst[d] += x[d];
    }
    std::vector<bool> centroid_ok(multi_ids.size(), false);
    for (std::size_t s = 0; s < multi_ids.size(); ++s) {
        double* cen = centroids.data() + s * dim;
        double sq = 0.0;
        for (std::uint32_t d = 0; d < dim; ++d) sq += cen[d] * cen[d];
        if (sq > 0.0) {
            double inv = 1.0 / std::sqrt(sq);
            for (std::uint32_t d = 0; d < dim; ++d) cen[d] *= inv;
            centroid_ok[s] = true;
        }
    }

    std::vector<std::uint32_t> labels = pass1.labels;
#pragma omp parallel for schedule(dynamic)
    for (std::uint64_t i = 0; i < n; ++i) {
        if (sizes[pass1.labels[i]] != 1) continue;  // only pass-1 singletons
        auto x = normalized.row(i);
        double best = -2.0;
        std::uint32_t best_cluster = 0;
        bool found = false;
        for (std::size_t s = 0; s < multi_ids.size(); ++s) {
            if (!centroid_ok[s]) continue;
            const double* cen = centroids.data() + s * dim;
            double dot = 0.0;
            for (std::uint32_t d = 0; d < dim; ++d) dot += cen[d] * x[d];
            if (dot > best) {  // strict: ties stay with the smaller cluster id
                best = dot;
                best_cluster = multi_ids[s];
                found = true;
            }
        }
        if (found && best > cfg.tau_low) labels[i] = best_cluster;
    }

    return canonicalize_labels(labels);
}

double purity(const ClusterAssignment& assignment, std::span<const std::uint32_t> truth) {
    if (truth.size() != assignment.labels.size()) {
        throw ValidationError("purity: truth does not cover all samples");
    }
    if (assignment.labels.empty()) return 1.0;
    std::vector<std::unordered_map<std::uint32_t, std::uint64_t>> counts(assignment.n_clusters);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ++counts[assignment.labels[i]][truth[i]];
    }
    std::uint64_t agree = 0;
    for (const auto& cluster_counts : counts) {
        std::uint64_t best = 0;
        for (const auto& [identity, c] : cluster_counts) best = std::max(best, c);
        agree += best;
    }
    return static_cast<double>(agree) / static_cast<double>(truth.size());
}

SplitManifest split_identities(const ClusterAssignment& assignment, double test_fraction,
                               std::uint64_t seed) {
    if (assignment.n_clusters < 2) {
        throw ValidationError("split_identities requires at least 2 clusters");
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ValidationError("test_fraction must be in (0, 1)");
    }
    const std::uint32_t c = assignment.n_clusters;
    std::vector<std::uint32_t> order(c);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    deterministic_shuffle(order, rng);

    // ceil with a tolerance so e.g. 0.2 * 10 lands on 2, not 3.
    auto n_test = static_cast<std::uint32_t>(
        std::ceil(test_fraction * static_cast<double>(c) - 1e-9));
    n_test = std::clamp<std::uint32_t>(n_test, 1, c - 1);

    SplitManifest split;
    split.seed = seed;
    split.test_fraction = test_fraction;
    split.test_clusters.assign(order.begin(), order.begin() + n_test);
    split.train_clusters.assign(order.begin() + n_test, order.end());
    std::sort(split.test_clusters.begin(), split.test_clusters.end());
    std::sort(split.train_clusters.begin(), split.train_clusters.end());
    return split;
}

}  // namespace lfa
