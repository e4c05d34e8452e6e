// Benchmark: OpenMP kernels in lfa_core against the serial reference
// implementations, plus the IVF-PQ index against exhaustive search.
//
//   lfa_bench [--small]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "exact_fixture.hpp"
#include "lfa/consistency.hpp"
#include "lfa/ivfpq.hpp"
#include "lfa/pipeline.hpp"
#include "lfa/rng.hpp"
#include "lfa/synthetic.hpp"
#include "reference.hpp"

using namespace lfa;
using Clock = std::chrono::steady_clock;

namespace {

int runtime_threads() {
#ifdef _OPENMP
    int n = 0;
#pragma omp parallel
#pragma omp single
    n = omp_get_num_threads();
    return n;
#else
    return 1;
#endif
}

template <typename Fn>
double time_ms(Fn&& fn) {
    auto start = Clock::now();
    fn();
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void row(const char* name, double serial_ms, double parallel_ms, const char* extra = "") {
    std::printf("%-34s %10.1f ms %12.1f ms %8.2fx  %s\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms, extra);
}

}  // namespace

int main(int argc, char** argv) {
    bool small = argc > 1 && std::strcmp(argv[1], "--small") == 0;
    const std::uint64_t sim_n = small ? 128 : 384;
    const std::uint32_t sim_dim = 512;
    const std::uint64_t ann_n = small ? 2000 : 10000;
    const std::uint64_t ann_q = small ? 100 : 1000;
    const std::uint32_t clips = small ? 200 : 1000;

    std::printf("threads: %d\n", runtime_threads());
    std::printf("%-34s %13s %15s %9s\n", "kernel", "serial ref", "lfa_core", "speedup");

    {  // pairwise similarity matrix
        auto store = [&] {
            std::mt19937_64 rng(3);
            EmbeddingStore s;
            s.dim = sim_dim;
            s.rows = sim_n;
            s.data.resize(sim_n * sim_dim);
            for (auto& v : s.data) v = static_cast<float>(normal(rng));
            return s;
        }();
        std::vector<std::uint64_t> rows(sim_n);
        std::iota(rows.begin(), rows.end(), 0);

        double mean_core = 0, mean_ref = 0;
        double t_ref = time_ms([&] {
            auto m = ref::similarity_matrix_naive(rows, store);
            mean_ref = ref::mean_off_diagonal_naive(m, sim_n);
        });
        double t_core = time_ms([&] {
            mean_core = mean_off_diagonal(similarity_matrix(rows, store));
        });
        char extra[64];
        std::snprintf(extra, sizeof(extra), "|mean diff| %.2e", std::abs(mean_core - mean_ref));
        row("similarity matrix (N x N cosine)", t_ref, t_core, extra);
    }

    {  // kNN: exhaustive serial scan vs IVF-PQ ADC batch search
        auto data = test::clustered_unit_vectors(ann_n, 64, ann_n / 12, 0.15, 7);
        IvfPqParams params;
        params.nlist = 64;
        params.m = 8;
        params.seed = 9;
        IvfPqIndex index;
        double t_build = time_ms([&] { index = train_index(data, params); });

        std::mt19937_64 rng(11);
        EmbeddingStore queries;
        queries.dim = data.dim;
        queries.rows = ann_q;
        queries.data.resize(ann_q * data.dim);
        for (std::uint64_t i = 0; i < ann_q; ++i) {
            auto src = data.row(uniform_index(rng, data.rows));
            std::copy(src.begin(), src.end(), queries.data.begin() + i * data.dim);
        }

        std::vector<std::vector<std::uint64_t>> exact_ids(ann_q);
        double t_exact = time_ms([&] {
            for (std::uint64_t i = 0; i < ann_q; ++i) {
                for (auto& [id, d] : ref::exact_knn(data, queries.row(i), 10)) {
                    exact_ids[i].push_back(id);
                }
            }
        });
        std::vector<SearchResult> approx;
        double t_adc = time_ms([&] { approx = search_batch(queries, index, 10, 8); });
        double recall = 0;
        for (std::uint64_t i = 0; i < ann_q; ++i) {
            std::vector<std::uint64_t> ids;
            for (auto& [id, d] : approx[i].neighbors) ids.push_back(id);
            recall += ref::recall_at_k(ids, exact_ids[i]);
        }
        char extra[96];
        std::snprintf(extra, sizeof(extra), "recall@10 %.3f, build %.0f ms, nprobe 8/64",
                      recall / static_cast<double>(ann_q), t_build);
        row("kNN (exhaustive vs IVF-PQ ADC)", t_exact, t_adc, extra);
    }

    {  // filter stage: 1 thread vs all threads
        GenConfig gen;
        gen.identities = clips / 20;
        gen.clips_per_identity = 20;
        gen.dim = 512;
        gen.seed = 13;
        gen.rate_face_count = 0.1;
        gen.rate_identity = 0.1;
        gen.rate_low_variation = 0.1;
        auto corpus = generate_corpus(gen);
        FilterConfig cfg;

        std::vector<FilterDecision> serial, parallel;
#ifdef _OPENMP
        int threads = runtime_threads();
        omp_set_num_threads(1);
#endif
        double t_serial = time_ms([&] {
            serial = run_filter(corpus.clips, corpus.faces, corpus.embeddings, cfg);
        });
#ifdef _OPENMP
        omp_set_num_threads(threads);
#endif
        double t_parallel = time_ms([&] {
            parallel = run_filter(corpus.clips, corpus.faces, corpus.embeddings, cfg);
        });
        bool identical = serial.size() == parallel.size();
        for (std::size_t i = 0; identical && i < serial.size(); ++i) {
            identical = serial[i].clip_id == parallel[i].clip_id &&
                        serial[i].accepted == parallel[i].accepted &&
                        serial[i].reasons == parallel[i].reasons;
        }
        row("clip filter (1 thread vs all)", t_serial, t_parallel,
            identical ? "decisions identical" : "DECISIONS DIFFER");
    }
    return 0;
}
