#pragma once

// Lloyd's k-means with k-means++ seeding. Deterministic for a fixed seed:
// the RNG and the weighted draws are hand-rolled (bit-portable), the
// assignment step parallelizes over points only, and centroid sums
// accumulate serially in sample order with 64-bit floats.

#include <cstdint>
#include <span>
#include <vector>

#include "lfa/embedding_store.hpp"

namespace lfa {

struct KMeansParams {
    std::uint32_t k = 1;
    std::uint64_t seed = 0;
    int max_iter = 25;
    double tol = 1e-4;  // relative inertia change
};

struct KMeansModel {
    std::uint32_t k = 0;
    std::uint32_t dim = 0;
    std::vector<float> centroids;  // k * dim, row-major
    std::uint64_t seed = 0;
    int iterations_run = 0;        // Lloyd update steps executed
    double inertia = 0.0;          // of the final assignment
    std::vector<double> inertia_history;  // one entry per assignment step, non-increasing

    std::span<const float> centroid(std::uint32_t c) const {
        return std::span<const float>(centroids.data() + static_cast<std::size_t>(c) * dim, dim);
    }
};

KMeansModel kmeans(std::span<const float> data, std::uint64_t n, std::uint32_t dim,
                   const KMeansParams& params);
KMeansModel kmeans(const EmbeddingStore& data, const KMeansParams& params);

// Nearest centroid per point (squared L2, ties to the lowest centroid id).
std::vector<std::uint32_t> assign_to_centroids(const KMeansModel& model,
                                               std::span<const float> data, std::uint64_t n);

// Squared L2 between two equal-length vectors, accumulated in doubles.
double squared_l2(std::span<const float> a, std::span<const float> b);

}  // namespace lfa
