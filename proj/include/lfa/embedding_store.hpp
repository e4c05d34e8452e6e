#pragma once

// Dense N x D matrix of float32 identity embeddings with a bit-exact
// binary layout:
//   magic "LFAEMB01" (8 bytes) | u64 N | u32 D | N*D little-endian f32, row-major

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lfa/errors.hpp"

namespace lfa {

struct EmbeddingStore {
    std::uint32_t dim = 0;
    std::uint64_t rows = 0;
    std::vector<float> data;  // rows * dim, row-major

    std::span<const float> row(std::uint64_t i) const {
        return std::span<const float>(data.data() + i * dim, dim);
    }
    std::span<float> row(std::uint64_t i) {
        return std::span<float>(data.data() + i * dim, dim);
    }
};

// Validates magic, header/payload agreement and finiteness of every value.
EmbeddingStore parse_embedding_store(std::span<const std::uint8_t> bytes,
                                     const std::string& context);
std::vector<std::uint8_t> serialize_embedding_store(const EmbeddingStore& store);

EmbeddingStore load_embedding_store(const std::filesystem::path& path);
void write_embedding_store(const EmbeddingStore& store, const std::filesystem::path& path);

// Returns a copy whose rows have unit L2 norm (within 1e-6). A zero-norm
// row is an error naming the row index.
EmbeddingStore normalize_rows(const EmbeddingStore& store);

}  // namespace lfa
