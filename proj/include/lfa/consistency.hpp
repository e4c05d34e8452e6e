#pragma once

// Identity consistency analysis: pairwise cosine-similarity matrix over a
// clip's frame embeddings, the mean off-diagonal statistic, and the
// strict-greater retention gate (default threshold 0.6).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lfa/embedding_store.hpp"

namespace lfa {

struct SimilarityMatrix {
    std::size_t n = 0;
    std::vector<double> values;  // n*n, row-major, symmetric, unit diagonal

    double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

struct ConsistencyReport {
    std::string clip_id;
    std::size_t n_embeddings = 0;
    std::size_t n_missing = 0;  // sampled single-face frames without an embedding row
    std::optional<double> mean_similarity;
    bool retained = false;
};

// (a.b)/(|a||b|) accumulated in doubles, clamped to [-1, 1].
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Each pair computed once and mirrored; row norms precomputed.
SimilarityMatrix similarity_matrix(std::span<const std::uint64_t> rows,
                                   const EmbeddingStore& store);

// Sum of values[i][j] for i != j, divided by n(n-1). Requires n >= 2.
double mean_off_diagonal(const SimilarityMatrix& m);

// retained = (mean > threshold), strict per the retention rule. Fewer than
// two embeddings cannot be scored: retained=false, mean absent (the caller
// maps that to MISSING_DATA). n_missing counts frames the caller had to
// skip for lack of an embedding row; it is carried into the report.
ConsistencyReport consistency_gate(const std::string& clip_id,
                                   std::span<const std::uint64_t> rows,
                                   const EmbeddingStore& store, double threshold = 0.6,
                                   std::size_t n_missing = 0);

}  // namespace lfa
