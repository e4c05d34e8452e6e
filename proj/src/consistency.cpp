#include "lfa/consistency.hpp"

#include <algorithm>
#include <cmath>

namespace lfa {

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw ValidationError("cosine_similarity: dimension mismatch (" + std::to_string(a.size()) +
                              " vs " + std::to_string(b.size()) + ")");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) throw ValidationError("cosine_similarity: zero-norm vector");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

SimilarityMatrix similarity_matrix(std::span<const std::uint64_t> rows,
                                   const EmbeddingStore& store) {
    const std::size_t n = rows.size();
    if (n < 2) throw ValidationError("similarity_matrix requires at least 2 embeddings");

    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (rows[i] >= store.rows) {
            throw ValidationError("embedding row " + std::to_string(rows[i]) + " out of range");
        }
        double sq = 0.0;
        for (float v : store.row(rows[i])) sq += static_cast<double>(v) * v;
        if (sq <= 0.0) {
            throw ValidationError("zero-norm embedding at row " + std::to_string(rows[i]));
        }
        norms[i] = std::sqrt(sq);
    }

    SimilarityMatrix m;
    m.n = n;
    m.values.assign(n * n, 0.0);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        auto a = store.row(rows[i]);
        m.values[i * n + i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            auto b = store.row(rows[j]);
            double dot = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) dot += static_cast<double>(a[k]) * b[k];
            double s = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
            m.values[i * n + j] = s;
            m.values[j * n + i] = s;
        }
    }
    return m;
}

double mean_off_diagonal(const SimilarityMatrix& m) {
    if (m.n < 2) throw ValidationError("mean_off_diagonal requires n >= 2");
    double sum = 0.0;
    for (std::size_t i = 0; i < m.n; ++i) {
        for (std::size_t j = 0; j < m.n; ++j) {
            if (i != j) sum += m.at(i, j);
        }
    }
    return sum / (static_cast<double>(m.n) * static_cast<double>(m.n - 1));
}

ConsistencyReport consistency_gate(const std::string& clip_id,
                                   std::span<const std::uint64_t> rows,
                                   const EmbeddingStore& store, double threshold,
                                   std::size_t n_missing) {
    ConsistencyReport r;
    r.clip_id = clip_id;
    r.n_embeddings = rows.size();
    r.n_missing = n_missing;
    if (rows.size() < 2) {
        r.retained = false;
        return r;
    }
    SimilarityMatrix m = similarity_matrix(rows, store);
    r.mean_similarity = mean_off_diagonal(m);
    r.retained = *r.mean_similarity > threshold;
    return r;
}

}  // namespace lfa
