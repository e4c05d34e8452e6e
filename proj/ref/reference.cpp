#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <unordered_set>

namespace lfa::ref {

std::vector<std::pair<std::uint64_t, double>> exact_knn(const EmbeddingStore& store,
                                                        std::span<const float> query,
                                                        std::uint32_t k) {
    std::vector<std::pair<double, std::uint64_t>> all(store.rows);
    for (std::uint64_t i = 0; i < store.rows; ++i) {
        auto x = store.row(i);
        double d = 0.0;
        for (std::uint32_t c = 0; c < store.dim; ++c) {
            double r = static_cast<double>(query[c]) - x[c];
            d += r * r;
        }
        all[i] = {d, i};
    }
    std::size_t keep = std::min<std::size_t>(k, all.size());
    std::partial_sort(all.begin(), all.begin() + keep, all.end());
    std::vector<std::pair<std::uint64_t, double>> out(keep);
    for (std::size_t i = 0; i < keep; ++i) out[i] = {all[i].second, all[i].first};
    return out;
}

std::vector<double> similarity_matrix_naive(std::span<const std::uint64_t> rows,
                                            const EmbeddingStore& store) {
    const std::size_t n = rows.size();
    std::vector<double> m(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            auto a = store.row(rows[i]);
            auto b = store.row(rows[j]);
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (std::uint32_t d = 0; d < store.dim; ++d) {
                dot += static_cast<double>(a[d]) * b[d];
                na += static_cast<double>(a[d]) * a[d];
                nb += static_cast<double>(b[d]) * b[d];
            }
            double s = dot / (std::sqrt(na) * std::sqrt(nb));
            m[i * n + j] = std::clamp(s, -1.0, 1.0);
        }
    }
    return m;
}

double mean_off_diagonal_naive(const std::vector<double>& matrix, std::size_t n) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            sum += matrix[i * n + j];
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

namespace {

double dot_rows(const EmbeddingStore& s, std::uint64_t i, std::uint64_t j) {
    auto a = s.row(i);
    auto b = s.row(j);
    double dot = 0.0;
    for (std::uint32_t d = 0; d < s.dim; ++d) dot += static_cast<double>(a[d]) * b[d];
    return dot;
}

}  // namespace

std::vector<std::uint32_t> cluster_two_pass(const EmbeddingStore& normalized, double tau_high,
                                            double tau_low) {
    const std::uint64_t n = normalized.rows;
    std::vector<std::uint32_t> label(n, 0);
    if (n == 0) return label;

    // Pass 1: BFS over the full tau_high graph.
    const std::uint32_t unset = 0xffffffffu;
    std::fill(label.begin(), label.end(), unset);
    std::uint32_t next = 0;
    for (std::uint64_t s = 0; s < n; ++s) {
        if (label[s] != unset) continue;
        label[s] = next;
        std::deque<std::uint64_t> queue{s};
        while (!queue.empty()) {
            std::uint64_t i = queue.front();
            queue.pop_front();
            for (std::uint64_t j = 0; j < n; ++j) {
                if (label[j] != unset || j == i) continue;
                if (dot_rows(normalized, i, j) > tau_high) {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        ++next;
    }

    // Pass 2: attach singletons to the best multi-member centroid.
    std::vector<std::uint64_t> sizes(next, 0);
    for (auto c : label) ++sizes[c];
    std::vector<std::uint32_t> multi;
    for (std::uint32_t c = 0; c < next; ++c) {
        if (sizes[c] >= 2) multi.push_back(c);
    }
    const std::uint32_t dim = normalized.dim;
    std::vector<std::vector<double>> centroids(multi.size(), std::vector<double>(dim, 0.0));
    for (std::uint64_t i = 0; i < n; ++i) {
        auto it = std::find(multi.begin(), multi.end(), label[i]);
        if (it == multi.end()) continue;
        auto x = normalized.row(i);
        auto& cen = centroids[static_cast<std::size_t>(it - multi.begin())];
        for (std::uint32_t d = 0; d < dim; ++d) cen[d] += x[d];
    }
    std::vector<bool> ok(multi.size(), false);
    for (std::size_t s = 0; s < multi.size(); ++s) {
        double sq = 0.0;
        for (double v : centroids[s]) sq += v * v;
        if (sq > 0.0) {
            double inv = 1.0 / std::sqrt(sq);
            for (double& v : centroids[s]) v *= inv;
            ok[s] = true;
        }
    }
    std::vector<std::uint32_t> result = label;
    for (std::uint64_t i = 0; i < n; ++i) {
        if (sizes[label[i]] != 1) continue;
        auto x = normalized.row(i);
        double best = -2.0;
        std::uint32_t best_c = 0;
        bool found = false;
        for (std::size_t s = 0; s < multi.size(); ++s) {
            if (!ok[s]) continue;
            double dot = 0.0;
            for (std::uint32_t d = 0; d < dim; ++d) dot += centroids[s][d] * x[d];
            if (dot > best) {
                best = dot;
                best_c = multi[s];
                found = true;
            }
        }
        if (found && best > tau_low) result[i] = best_c;
    }

    // Canonical relabel by first occurrence (= smallest member id).
    std::map<std::uint32_t, std::uint32_t> remap;
    std::vector<std::uint32_t> canon(n);
    std::uint32_t fresh = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
        auto [it, inserted] = remap.emplace(result[i], fresh);
        if (inserted) ++fresh;
        canon[i] = it->second;
    }
    return canon;
}

double recall_at_k(std::span<const std::uint64_t> approx, std::span<const std::uint64_t> exact) {
    if (exact.empty()) return 1.0;
    std::unordered_set<std::uint64_t> truth(exact.begin(), exact.end());
    std::size_t hit = 0;
    for (auto id : approx) hit += truth.count(id);
    return static_cast<double>(hit) / static_cast<double>(exact.size());
}

}  // namespace lfa::ref
