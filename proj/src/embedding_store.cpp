#include "lfa/embedding_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "lfa/binio.hpp"

namespace lfa {

namespace {
constexpr char kMagic[8] = {'L', 'F', 'A', 'E', 'M', 'B', '0', '1'};
}

namespace binio {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(size);
    if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw IoError("read failure on " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    if (!bytes.empty()) {
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace binio

EmbeddingStore parse_embedding_store(std::span<const std::uint8_t> bytes,
                                     const std::string& context) {
    binio::Reader r(bytes, context);
    auto magic = r.take(8);
    if (std::memcmp(magic.data(), kMagic, 8) != 0) {
        throw ValidationError(context + ": bad magic, not an embedding store");
    }
    EmbeddingStore store;
    store.rows = r.u64();
    store.dim = r.u32();
    if (store.dim < 2) throw ValidationError(context + ": dimension must be >= 2");
    store.data.resize(static_cast<std::size_t>(store.rows) * store.dim);
    for (std::size_t i = 0; i < store.data.size(); ++i) {
        float v = r.f32();
        if (!std::isfinite(v)) {
            throw ValidationError(context + ": non-finite value at row " +
                                  std::to_string(i / store.dim) + ", col " +
                                  std::to_string(i % store.dim));
        }
        store.data[i] = v;
    }
    r.expect_end();
    return store;
}

std::vector<std::uint8_t> serialize_embedding_store(const EmbeddingStore& store) {
    std::vector<std::uint8_t> out;
    out.reserve(20 + store.data.size() * 4);
    binio::put_bytes(out, kMagic, 8);
    binio::put_u64(out, store.rows);
    binio::put_u32(out, store.dim);
    for (float v : store.data) binio::put_f32(out, v);
    return out;
}

EmbeddingStore load_embedding_store(const std::filesystem::path& path) {
    return parse_embedding_store(binio::read_file(path), path.string());
}

void write_embedding_store(const EmbeddingStore& store, const std::filesystem::path& path) {
    binio::write_file(path, serialize_embedding_store(store));
}

EmbeddingStore normalize_rows(const EmbeddingStore& store) {
    EmbeddingStore out = store;
    for (std::uint64_t i = 0; i < out.rows; ++i) {
        auto row = out.row(i);
        double sq = 0.0;
        for (float v : row) sq += static_cast<double>(v) * v;
        if (sq <= 0.0) {
            throw ValidationError("zero-norm embedding at row " + std::to_string(i));
        }
        double inv = 1.0 / std::sqrt(sq);
        for (float& v : row) v = static_cast<float>(v * inv);
    }
    return out;
}

}  // namespace lfa
