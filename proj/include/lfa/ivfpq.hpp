#pragma once

// IVF-PQ approximate nearest-neighbor index over unit-normalized
// embeddings: a coarse k-means partition into inverted lists, product
// quantization of residuals (x - coarse centroid) into m byte codes, and
// ADC search through per-query lookup tables. Squared L2 over unit
// vectors ranks identically to cosine (d^2 = 2 - 2 cos).
//
// Ties anywhere (coarse assignment, code selection, result ranking) break
// toward the lowest id so builds and searches reproduce bit-identically.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lfa/embedding_store.hpp"
#include "lfa/kmeans.hpp"

namespace lfa {

struct PqCodebook {
    std::uint32_t m = 0;        // subquantizer count
    std::uint32_t sub_dim = 0;  // dim / m
    std::uint32_t k_pq = 0;     // codewords per subspace, min(256, N)
    std::vector<float> codebooks;  // m * k_pq * sub_dim
    std::uint64_t seed = 0;

    std::span<const float> codeword(std::uint32_t sub, std::uint32_t code) const {
        std::size_t off = (static_cast<std::size_t>(sub) * k_pq + code) * sub_dim;
        return std::span<const float>(codebooks.data() + off, sub_dim);
    }
};

struct IvfList {
    std::vector<std::uint64_t> ids;   // ascending
    std::vector<std::uint8_t> codes;  // ids.size() * m
};

struct IvfPqIndex {
    KMeansModel coarse;
    PqCodebook pq;
    std::vector<IvfList> lists;  // one per coarse centroid
    std::uint64_t seed = 0;

    std::uint32_t nlist() const { return coarse.k; }
    std::uint32_t dim() const { return coarse.dim; }
    std::uint64_t size() const;
};

struct SearchResult {
    // (sample_id, squared L2 distance), ascending by (distance, id).
    std::vector<std::pair<std::uint64_t, double>> neighbors;
};

struct IvfPqParams {
    std::uint32_t nlist = 0;   // 0 = clamp(4*ceil(sqrt(N)), 8, 1024), capped at N
    std::uint32_t m = 8;
    std::uint32_t nprobe = 0;  // 0 = max(1, nlist/8)
    std::uint64_t seed = 0;
    int max_iter = 25;
    double tol = 1e-4;
};

std::uint32_t default_nlist(std::uint64_t n);
std::uint32_t default_nprobe(std::uint32_t nlist);

// Per-subspace k-means (k_pq codewords) on residuals r = x - coarse
// centroid. D must be divisible by m; k_pq is capped at N with a warning
// on stderr when N < 256.
PqCodebook train_pq(const EmbeddingStore& data, std::span<const std::uint32_t> coarse_assign,
                    const KMeansModel& coarse, std::uint32_t m, std::uint64_t seed);

struct PqCode {
    std::uint32_t list_id = 0;
    std::vector<std::uint8_t> codes;
};

PqCode encode(std::span<const float> x, const KMeansModel& coarse, const PqCodebook& pq);

// Reconstruction = coarse centroid + per-subspace codewords.
std::vector<float> reconstruct(const IvfPqIndex& index, std::uint32_t list_id,
                               std::span<const std::uint8_t> codes);

// Encodes every row of the store against pre-trained quantizers and fills
// the inverted lists in ascending id order.
IvfPqIndex build_index(const EmbeddingStore& normalized, const KMeansModel& coarse,
                       const PqCodebook& pq);

// Convenience: coarse k-means + PQ training + build.
IvfPqIndex train_index(const EmbeddingStore& normalized, const IvfPqParams& params);

// Probes the nprobe nearest coarse lists (nprobe clamped to [1, nlist])
// and ranks candidates by ADC distance. k must be >= 1.
SearchResult search(std::span<const float> query, const IvfPqIndex& index, std::uint32_t k,
                    std::uint32_t nprobe);

// One independent search per query row, parallelized over queries.
std::vector<SearchResult> search_batch(const EmbeddingStore& queries, const IvfPqIndex& index,
                                       std::uint32_t k, std::uint32_t nprobe);

// Index file: magic "LFAIVFPQ1", little-endian header (version, D, nlist,
// m, k_pq, N, seed), coarse centroids, codebooks, then per-list sections.
std::vector<std::uint8_t> serialize_index(const IvfPqIndex& index);
IvfPqIndex deserialize_index(std::span<const std::uint8_t> bytes);

void save_index(const IvfPqIndex& index, const std::filesystem::path& path);
IvfPqIndex load_index(const std::filesystem::path& path);

}  // namespace lfa
