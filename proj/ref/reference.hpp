#pragma once

// Serial reference implementations, kept deliberately naive and
// independent of the parallel kernels in lfa_core. Tests compare the two
// paths; the benchmark times them against each other.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "lfa/embedding_store.hpp"

namespace lfa::ref {

// Exhaustive kNN by squared L2, ascending (distance, id).
std::vector<std::pair<std::uint64_t, double>> exact_knn(const EmbeddingStore& store,
                                                        std::span<const float> query,
                                                        std::uint32_t k);

// Double-loop cosine matrix straight from the definition.
std::vector<double> similarity_matrix_naive(std::span<const std::uint64_t> rows,
                                            const EmbeddingStore& store);

double mean_off_diagonal_naive(const std::vector<double>& matrix, std::size_t n);

// Exhaustive two-pass threshold clustering: O(N^2) cosine graph above
// tau_high, components by BFS, then singleton attachment to the best
// multi-member centroid above tau_low. Labels canonical by smallest
// member id.
std::vector<std::uint32_t> cluster_two_pass(const EmbeddingStore& normalized, double tau_high,
                                            double tau_low);

// recall@k of approximate ids against the exact neighbor ids.
double recall_at_k(std::span<const std::uint64_t> approx, std::span<const std::uint64_t> exact);

}  // namespace lfa::ref
