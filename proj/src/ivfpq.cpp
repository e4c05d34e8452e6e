#include "lfa/ivfpq.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>
#include <queue>

#include "lfa/binio.hpp"
#include "lfa/rng.hpp"

namespace lfa {

namespace {
constexpr char kMagic[9] = {'L', 'F', 'A', 'I', 'V', 'F', 'P', 'Q', '1'};
constexpr std::uint32_t kFormatVersion = 1;
}  // namespace

std::uint64_t IvfPqIndex::size() const {
    std::uint64_t n = 0;
    for (const auto& l : lists) n += l.ids.size();
    return n;
}

std::uint32_t default_nlist(std::uint64_t n) {
    if (n == 0) return 1;
    auto root = static_cast<std::uint64_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    std::uint64_t v = std::clamp<std::uint64_t>(4 * root, 8, 1024);
    return static_cast<std::uint32_t>(std::min<std::uint64_t>(v, n));
}

std::uint32_t default_nprobe(std::uint32_t nlist) { return std::max<std::uint32_t>(1, nlist / 8); }

PqCodebook train_pq(const EmbeddingStore& data, std::span<const std::uint32_t> coarse_assign,
                    const KMeansModel& coarse, std::uint32_t m, std::uint64_t seed) {
    if (m == 0 || data.dim % m != 0) {
        throw ValidationError("train_pq: dimension " + std::to_string(data.dim) +
                              " not divisible by m=" + std::to_string(m));
    }
    if (data.rows == 0) throw ValidationError("train_pq: empty training set");
    if (coarse_assign.size() != data.rows) {
        throw ValidationError("train_pq: assignment size mismatch");
    }

    PqCodebook pq;
    pq.m = m;
    pq.sub_dim = data.dim / m;
    pq.k_pq = static_cast<std::uint32_t>(std::min<std::uint64_t>(256, data.rows));
    pq.seed = seed;
    if (pq.k_pq < 256) {
        std::fprintf(stderr, "warning: train_pq: only %llu training vectors, capping k_pq at %u\n",
                     static_cast<unsigned long long>(data.rows), pq.k_pq);
    }
    pq.codebooks.resize(static_cast<std::size_t>(m) * pq.k_pq * pq.sub_dim);

    const std::uint64_t n = data.rows;
    std::vector<float> residual_sub(static_cast<std::size_t>(n) * pq.sub_dim);
    for (std::uint32_t sub = 0; sub < m; ++sub) {
        const std::uint32_t off = sub * pq.sub_dim;
#pragma omp parallel for schedule(static)
        for (std::uint64_t i = 0; i < n; ++i) {
            auto x = data.row(i);
            auto c = coarse.centroid(coarse_assign[i]);
            float* dst = residual_sub.data() + static_cast<std::size_t>(i) * pq.sub_dim;
            for (std::uint32_t d = 0; d < pq.sub_dim; ++d) dst[d] = x[off + d] - c[off + d];
        }
        KMeansParams kp;
        kp.k = pq.k_pq;
        kp.seed = mix_seed(seed, sub);
        KMeansModel model = kmeans(residual_sub, n, pq.sub_dim, kp);
        std::copy(model.centroids.begin(), model.centroids.end(),
                  pq.codebooks.begin() + static_cast<std::size_t>(sub) * pq.k_pq * pq.sub_dim);
    }
    return pq;
}

PqCode encode(std::span<const float> x, const KMeansModel& coarse, const PqCodebook& pq) {
    if (x.size() != coarse.dim) {
        throw ValidationError("encode: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                              std::to_string(coarse.dim) + ")");
    }
    PqCode out;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::uint32_t c = 0; c < coarse.k; ++c) {
        double d = squared_l2(x, coarse.centroid(c));
        if (d < best_d) {
            best_d = d;
            out.list_id = c;
        }
    }
    auto cen = coarse.centroid(out.list_id);
    out.codes.resize(pq.m);
    for (std::uint32_t sub = 0; sub < pq.m; ++sub) {
        const std::uint32_t off = sub * pq.sub_dim;
        std::uint32_t best_code = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::uint32_t w = 0; w < pq.k_pq; ++w) {
            auto cw = pq.codeword(sub, w);
            double d = 0.0;
            for (std::uint32_t j = 0; j < pq.sub_dim; ++j) {
                double r = static_cast<double>(x[off + j]) - cen[off + j] - cw[j];
                d += r * r;
            }
            if (d < best) {
                best = d;
                best_code = w;
            }
        }
        out.codes[sub] = static_cast<std::uint8_t>(best_code);
    }
    return out;
}

std::vector<float> reconstruct(const IvfPqIndex& index, std::uint32_t list_id,
                               std::span<const std::uint8_t> codes) {
    auto cen = index.coarse.centroid(list_id);
    std::vector<float> x(cen.begin(), cen.end());
    for (std::uint32_t sub = 0; sub < index.pq.m; ++sub) {
        auto cw = index.pq.codeword(sub, codes[sub]);
        const std::uint32_t off = sub * index.pq.sub_dim;
        for (std::uint32_t j = 0; j < index.pq.sub_dim; ++j) x[off + j] += cw[j];
    }
    return x;
}

IvfPqIndex build_index(const EmbeddingStore& normalized, const KMeansModel& coarse,
                       const PqCodebook& pq) {
    if (normalized.rows > 0 && normalized.dim != coarse.dim) {
        throw ValidationError("build_index: store dimension does not match coarse quantizer");
    }
    IvfPqIndex index;
    index.coarse = coarse;
    index.pq = pq;
    index.seed = coarse.seed;
    index.lists.resize(coarse.k);

    const std::uint64_t n = normalized.rows;
    std::vector<PqCode> encoded(n);
#pragma omp parallel for schedule(static)
    for (std::uint64_t i = 0; i < n; ++i) {
        encoded[i] = encode(normalized.row(i), coarse, pq);
    }
    // Fill lists serially in ascending id order so layout is reproducible.
    for (std::uint64_t i = 0; i < n; ++i) {
        IvfList& list = index.lists[encoded[i].list_id];
        list.ids.push_back(i);
        list.codes.insert(list.codes.end(), encoded[i].codes.begin(), encoded[i].codes.end());
    }
    return index;
}

IvfPqIndex train_index(const EmbeddingStore& normalized, const IvfPqParams& params) {
    if (normalized.rows == 0) throw ValidationError("train_index: empty store");
    KMeansParams kp;
    kp.k = params.nlist ? params.nlist : default_nlist(normalized.rows);
    kp.seed = params.seed;
    kp.max_iter = params.max_iter;
    kp.tol = params.tol;
    KMeansModel coarse = kmeans(normalized, kp);
    auto assign = assign_to_centroids(coarse, normalized.data, normalized.rows);
    PqCodebook pq = train_pq(normalized, assign, coarse, params.m, mix_seed(params.seed, 0x9e));
    return build_index(normalized, coarse, pq);
}

SearchResult search(std::span<const float> query, const IvfPqIndex& index, std::uint32_t k,
                    std::uint32_t nprobe) {
    if (k == 0) throw ValidationError("search: k must be >= 1");
    if (query.size() != index.dim()) {
        throw ValidationError("search: dimension mismatch (" + std::to_string(query.size()) +
                              " vs " + std::to_string(index.dim()) + ")");
    }
    const std::uint32_t nlist = index.nlist();
    nprobe = std::clamp<std::uint32_t>(nprobe, 1, nlist);

    // Rank coarse lists by centroid distance, ties toward the lower id.
    std::vector<std::pair<double, std::uint32_t>> coarse_d(nlist);
    for (std::uint32_t c = 0; c < nlist; ++c) {
        coarse_d[c] = {squared_l2(query, index.coarse.centroid(c)), c};
    }
    std::partial_sort(coarse_d.begin(), coarse_d.begin() + nprobe, coarse_d.end());

    // Bounded max-heap over (distance, id).
    using Entry = std::pair<double, std::uint64_t>;
    std::priority_queue<Entry> top;

    const std::uint32_t m = index.pq.m;
    const std::uint32_t sub_dim = index.pq.sub_dim;
    std::vector<double> table(static_cast<std::size_t>(m) * index.pq.k_pq);
    std::vector<float> qres(index.dim());

    for (std::uint32_t p = 0; p < nprobe; ++p) {
        const std::uint32_t list_id = coarse_d[p].second;
        const IvfList& list = index.lists[list_id];
        if (list.ids.empty()) continue;

        auto cen = index.coarse.centroid(list_id);
        for (std::uint32_t d = 0; d < index.dim(); ++d) qres[d] = query[d] - cen[d];
        // ADC table: squared distance of the query residual to every
        // codeword, per subspace.
        for (std::uint32_t sub = 0; sub < m; ++sub) {
            const std::uint32_t off = sub * sub_dim;
            for (std::uint32_t w = 0; w < index.pq.k_pq; ++w) {
                auto cw = index.pq.codeword(sub, w);
                double d = 0.0;
                for (std::uint32_t j = 0; j < sub_dim; ++j) {
                    double r = static_cast<double>(qres[off + j]) - cw[j];
                    d += r * r;
                }
                table[static_cast<std::size_t>(sub) * index.pq.k_pq + w] = d;
            }
        }

        for (std::size_t i = 0; i < list.ids.size(); ++i) {
            const std::uint8_t* codes = list.codes.data() + i * m;
            double dist = 0.0;
            for (std::uint32_t sub = 0; sub < m; ++sub) {
                dist += table[static_cast<std::size_t>(sub) * index.pq.k_pq + codes[sub]];
            }
            Entry e{dist, list.ids[i]};
            if (top.size() < k) {
                top.push(e);
            } else if (e < top.top()) {
                top.pop();
                top.push(e);
            }
        }
    }

    SearchResult res;
    res.neighbors.resize(top.size());
    for (std::size_t i = top.size(); i-- > 0;) {
        res.neighbors[i] = {top.top().second, top.top().first};
        top.pop();
    }
    return res;
}

std::vector<SearchResult> search_batch(const EmbeddingStore& queries, const IvfPqIndex& index,
                                       std::uint32_t k, std::uint32_t nprobe) {
    std::vector<SearchResult> out(queries.rows);
#pragma omp parallel for schedule(dynamic)
    for (std::uint64_t i = 0; i < queries.rows; ++i) {
        out[i] = search(queries.row(i), index, k, nprobe);
    }
    return out;
}

std::vector<std::uint8_t> serialize_index(const IvfPqIndex& index) {
    std::vector<std::uint8_t> out;
    binio::put_bytes(out, kMagic, 9);
    binio::put_u32(out, kFormatVersion);
    binio::put_u32(out, index.dim());
    binio::put_u32(out, index.nlist());
    binio::put_u32(out, index.pq.m);
    binio::put_u32(out, index.pq.k_pq);
    binio::put_u64(out, index.size());
    binio::put_u64(out, index.seed);
    for (float v : index.coarse.centroids) binio::put_f32(out, v);
    for (float v : index.pq.codebooks) binio::put_f32(out, v);
    for (const auto& list : index.lists) {
        binio::put_u64(out, list.ids.size());
        for (std::uint64_t id : list.ids) binio::put_u64(out, id);
        binio::put_bytes(out, list.codes.data(), list.codes.size());
    }
    return out;
}

IvfPqIndex deserialize_index(std::span<const std::uint8_t> bytes) {
    binio::Reader r(bytes, "ivfpq index");
    auto magic = r.take(9);
    if (std::memcmp(magic.data(), kMagic, 9) != 0) {
        throw ValidationError("ivfpq index: bad magic");
    }
    std::uint32_t version = r.u32();
    if (version != kFormatVersion) {
        throw ValidationError("ivfpq index: unsupported version " + std::to_string(version));
    }
    IvfPqIndex index;
    std::uint32_t dim = r.u32();
    std::uint32_t nlist = r.u32();
    index.pq.m = r.u32();
    index.pq.k_pq = r.u32();
    std::uint64_t n = r.u64();
    index.seed = r.u64();
    if (index.pq.m == 0 || dim % index.pq.m != 0) {
        throw ValidationError("ivfpq index: dimension not divisible by m");
    }
    index.pq.sub_dim = dim / index.pq.m;
    index.pq.seed = index.seed;

    index.coarse.k = nlist;
    index.coarse.dim = dim;
    index.coarse.seed = index.seed;
    index.coarse.centroids.resize(static_cast<std::size_t>(nlist) * dim);
    for (auto& v : index.coarse.centroids) v = r.f32();
    index.pq.codebooks.resize(static_cast<std::size_t>(index.pq.m) * index.pq.k_pq *
                              index.pq.sub_dim);
    for (auto& v : index.pq.codebooks) v = r.f32();

    index.lists.resize(nlist);
    std::uint64_t total = 0;
    for (auto& list : index.lists) {
        std::uint64_t len = r.u64();
        list.ids.resize(len);
        for (auto& id : list.ids) id = r.u64();
        auto raw = r.take(static_cast<std::size_t>(len) * index.pq.m);
        list.codes.assign(raw.begin(), raw.end());
        total += len;
    }
    r.expect_end();
    if (total != n) throw ValidationError("ivfpq index: header N does not match list contents");
    return index;
}

void save_index(const IvfPqIndex& index, const std::filesystem::path& path) {
    binio::write_file(path, serialize_index(index));
}

IvfPqIndex load_index(const std::filesystem::path& path) {
    return deserialize_index(binio::read_file(path));
}

}  // namespace lfa
