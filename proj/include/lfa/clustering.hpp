#pragma once

// Two-pass hierarchical identity clustering over the IVF-PQ index, plus
// identity-disjoint train/test splitting and a purity diagnostic.
//
// Pass 1 links samples whose exact cosine (recomputed from the stored
// vectors, never from PQ codes) exceeds tau_high; candidate pairs come
// from kNN queries against the index. Pass 2 attaches each remaining
// singleton to the best multi-member cluster centroid above tau_low.

#include <cstdint>
#include <span>
#include <vector>

#include "lfa/embedding_store.hpp"
#include "lfa/ivfpq.hpp"

namespace lfa {

struct ClusterConfig {
    double tau_high = 0.75;
    double tau_low = 0.50;
    std::uint32_t knn = 16;    // neighbors per sample for graph construction
    std::uint32_t nprobe = 0;  // 0 = index default
    std::uint64_t seed = 0;

    void validate() const;
};

struct ClusterAssignment {
    // labels[sample_id] = cluster_id; ids dense 0..n_clusters-1,
    // canonically numbered by smallest member id.
    std::vector<std::uint32_t> labels;
    std::uint32_t n_clusters = 0;
};

// Pass 1 alone: connected components of the tau_high graph.
ClusterAssignment cluster_pass1(const EmbeddingStore& normalized, const IvfPqIndex& index,
                                const ClusterConfig& cfg);

// Both passes, canonical labels.
ClusterAssignment cluster(const EmbeddingStore& normalized, const IvfPqIndex& index,
                          const ClusterConfig& cfg);

// Fraction of samples whose cluster's majority identity matches their own.
// truth[sample_id] = identity.
double purity(const ClusterAssignment& assignment, std::span<const std::uint32_t> truth);

struct SplitManifest {
    std::vector<std::uint32_t> train_clusters;  // ascending
    std::vector<std::uint32_t> test_clusters;   // ascending, disjoint from train
    std::uint64_t seed = 0;
    double test_fraction = 0.0;
};

// Seeded shuffle of the cluster ids; the first ceil(test_fraction * n)
// become the test set (clamped so both sides stay nonempty).
SplitManifest split_identities(const ClusterAssignment& assignment, double test_fraction,
                               std::uint64_t seed);

// Canonical relabeling shared by the clustering paths: clusters numbered
// by their smallest member id.
ClusterAssignment canonicalize_labels(std::span<const std::uint32_t> raw_labels);

}  // namespace lfa
