// lfa: dataset curation pipeline and numeric checks.
//
// Subcommands: gen, filter, cluster, split, stats, index build, index
// query, mofe-check. Exit codes: 0 ok, 1 usage error, 2 data error.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "lfa/clustering.hpp"
#include "lfa/ivfpq.hpp"
#include "lfa/manifest.hpp"
#include "lfa/mofe.hpp"
#include "lfa/pipeline.hpp"
#include "lfa/synthetic.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

void apply_threads(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

struct FilterArgs {
    std::string clips, faces, embeddings, out;
    lfa::FilterConfig cfg;
    int threads = 0;
};

int cmd_filter(const FilterArgs& a) {
    apply_threads(a.threads);
    auto clips = lfa::parse_clip_manifest(a.clips);
    auto faces = lfa::parse_face_manifest(a.faces, clips);
    auto store = lfa::load_embedding_store(a.embeddings);
    auto decisions = lfa::run_filter(clips, faces, store, a.cfg);
    lfa::write_report(decisions, a.out);
    std::uint64_t kept = 0;
    for (const auto& d : decisions) kept += d.accepted;
    std::fprintf(stderr, "filter: %zu clips in, %llu accepted\n", clips.size(),
                 static_cast<unsigned long long>(kept));
    return kExitOk;
}

struct ClusterArgs {
    std::string clips, faces, embeddings, report, out;
    std::string save_index;
    bool per_frame = false;
    int sample_stride = 3;
    lfa::ClusterConfig cluster_cfg;
    lfa::IvfPqParams index_params;
    int threads = 0;
};

void write_clusters_jsonl(const lfa::ClusterAssignment& assignment,
                          const std::vector<std::string>* clip_ids, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw lfa::IoError("cannot open " + path + " for writing");
    for (std::size_t i = 0; i < assignment.labels.size(); ++i) {
        json j{{"sample_id", i}, {"cluster_id", assignment.labels[i]}};
        if (clip_ids) j["clip_id"] = (*clip_ids)[i];
        out << j.dump() << '\n';
    }
    if (!out) throw lfa::IoError("write failure on " + path);
}

int cmd_cluster(const ClusterArgs& a) {
    apply_threads(a.threads);
    auto clips = lfa::parse_clip_manifest(a.clips);
    auto faces = lfa::parse_face_manifest(a.faces, clips);
    auto store = lfa::load_embedding_store(a.embeddings);

    std::vector<std::string> accepted;
    for (const auto& d : lfa::parse_report(a.report)) {
        if (d.accepted) accepted.push_back(d.clip_id);
    }

    lfa::EmbeddingStore input;
    std::vector<std::string> clip_ids;
    const std::vector<std::string>* names = nullptr;
    if (a.per_frame) {
        input = lfa::normalize_rows(store);
    } else {
        auto table = lfa::per_clip_embeddings(clips, faces, store, accepted, a.sample_stride);
        input = std::move(table.store);
        clip_ids = std::move(table.clip_ids);
        names = &clip_ids;
    }
    if (input.rows == 0) {
        std::ofstream(a.out, std::ios::binary | std::ios::trunc);
        std::fprintf(stderr, "cluster: no samples to cluster\n");
        return kExitOk;
    }

    lfa::IvfPqParams ip = a.index_params;
    ip.seed = a.cluster_cfg.seed;
    lfa::IvfPqIndex index = lfa::train_index(input, ip);
    lfa::ClusterAssignment assignment = lfa::cluster(input, index, a.cluster_cfg);
    write_clusters_jsonl(assignment, names, a.out);
    if (!a.save_index.empty()) lfa::save_index(index, a.save_index);
    std::fprintf(stderr, "cluster: %llu samples -> %u clusters\n",
                 static_cast<unsigned long long>(input.rows), assignment.n_clusters);
    return kExitOk;
}

lfa::ClusterAssignment read_clusters_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw lfa::IoError("cannot open " + path);
    std::vector<std::pair<std::uint64_t, std::uint32_t>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw lfa::ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        rows.emplace_back(j.at("sample_id").get<std::uint64_t>(),
                          j.at("cluster_id").get<std::uint32_t>());
    }
    lfa::ClusterAssignment assignment;
    assignment.labels.resize(rows.size());
    std::uint32_t max_label = 0;
    for (const auto& [sample, cluster] : rows) {
        if (sample >= rows.size()) {
            throw lfa::ValidationError(path + ": sample_id " + std::to_string(sample) +
                                       " out of range");
        }
        assignment.labels[sample] = cluster;
        max_label = std::max(max_label, cluster);
    }
    assignment.n_clusters = rows.empty() ? 0 : max_label + 1;
    return assignment;
}

struct SplitArgs {
    std::string clusters, out;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;
};

int cmd_split(const SplitArgs& a) {
    auto assignment = read_clusters_jsonl(a.clusters);
    auto split = lfa::split_identities(assignment, a.test_fraction, a.seed);
    json j{{"seed", split.seed},
           {"test_fraction", split.test_fraction},
           {"test_clusters", split.test_clusters},
           {"train_clusters", split.train_clusters}};
    std::ofstream out(a.out, std::ios::binary | std::ios::trunc);
    if (!out) throw lfa::IoError("cannot open " + a.out + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw lfa::IoError("write failure on " + a.out);
    return kExitOk;
}

struct StatsArgs {
    std::string report, clusters, out;
};

int cmd_stats(const StatsArgs& a) {
    auto decisions = lfa::parse_report(a.report);
    std::optional<lfa::ClusterAssignment> assignment;
    if (!a.clusters.empty()) assignment = read_clusters_jsonl(a.clusters);
    lfa::CorpusStats stats =
        lfa::compute_stats(decisions, assignment ? &*assignment : nullptr);

    json hist = json::object();
    for (const auto& [bucket, count] : stats.angle_variation_hist) {
        hist[std::to_string(bucket)] = count;
    }
    json rej = json::object();
    for (const auto& [reason, count] : stats.rejections_by_first_reason) rej[reason] = count;
    json sizes = json::object();
    for (const auto& [size, count] : stats.cluster_size_hist) sizes[std::to_string(size)] = count;
    json j{{"n_clips_in", stats.n_clips_in},
           {"n_clips_out", stats.n_clips_out},
           {"rejections_by_first_reason", rej},
           {"angle_variation_hist", hist},
           {"cluster_size_hist", sizes}};
    if (a.out.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        std::ofstream out(a.out, std::ios::binary | std::ios::trunc);
        if (!out) throw lfa::IoError("cannot open " + a.out + " for writing");
        out << j.dump(2) << '\n';
    }
    return kExitOk;
}

struct GenArgs {
    lfa::GenConfig cfg;
    std::string out_dir;
};

int cmd_gen(const GenArgs& a) {
    auto corpus = lfa::generate_corpus(a.cfg);
    lfa::write_corpus(corpus, a.out_dir);
    std::fprintf(stderr, "gen: %zu clips, %zu faces, %llu embeddings -> %s\n",
                 corpus.clips.size(), corpus.faces.size(),
                 static_cast<unsigned long long>(corpus.embeddings.rows), a.out_dir.c_str());
    return kExitOk;
}

struct IndexBuildArgs {
    std::string embeddings, out;
    lfa::IvfPqParams params;
    int threads = 0;
};

int cmd_index_build(const IndexBuildArgs& a) {
    apply_threads(a.threads);
    auto store = lfa::normalize_rows(lfa::load_embedding_store(a.embeddings));
    auto index = lfa::train_index(store, a.params);
    lfa::save_index(index, a.out);
    std::fprintf(stderr, "index build: %llu vectors, nlist=%u, m=%u -> %s\n",
                 static_cast<unsigned long long>(index.size()), index.nlist(), index.pq.m,
                 a.out.c_str());
    return kExitOk;
}

struct IndexQueryArgs {
    std::string index, queries, out;
    std::uint32_t k = 10;
    std::uint32_t nprobe = 0;
    int threads = 0;
};

int cmd_index_query(const IndexQueryArgs& a) {
    apply_threads(a.threads);
    auto index = lfa::load_index(a.index);
    auto queries = lfa::normalize_rows(lfa::load_embedding_store(a.queries));
    std::uint32_t nprobe = a.nprobe ? a.nprobe : lfa::default_nprobe(index.nlist());
    auto results = lfa::search_batch(queries, index, a.k, nprobe);

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!a.out.empty()) {
        file.open(a.out, std::ios::binary | std::ios::trunc);
        if (!file) throw lfa::IoError("cannot open " + a.out + " for writing");
        out = &file;
    }
    for (std::size_t i = 0; i < results.size(); ++i) {
        json neighbors = json::array();
        for (const auto& [id, dist] : results[i].neighbors) {
            neighbors.push_back(json{{"id", id}, {"distance", dist}});
        }
        *out << json{{"query", i}, {"neighbors", neighbors}}.dump() << '\n';
    }
    return kExitOk;
}

struct MofeArgs {
    lfa::mofe::MofeConfig cfg;
    std::uint64_t base_params = 1'300'000'000;
    std::string gate = "linear";
    std::string granularity = "per-token";
};

int cmd_mofe_check(const MofeArgs& a) {
    lfa::mofe::MofeConfig cfg = a.cfg;
    cfg.gate_kind = a.gate == "mlp" ? lfa::mofe::GateKind::Mlp : lfa::mofe::GateKind::Linear;
    cfg.gate_granularity = a.granularity == "pooled" ? lfa::mofe::GateGranularity::Pooled
                                                     : lfa::mofe::GateGranularity::PerToken;
    auto verdict = lfa::mofe::run_check(cfg, a.base_params);
    json j{{"grad_max_rel_err", verdict.grad_max_rel_err},
           {"gate_row_sum_err", verdict.gate_row_sum_err},
           {"blocks_injected", verdict.blocks_injected},
           {"param_ratio", verdict.param_ratio}};
    std::cout << j.dump() << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LFA dataset curation pipeline"};
    app.require_subcommand(1);

    FilterArgs filter_args;
    auto* filter = app.add_subcommand("filter", "Run facial constraints + identity gate");
    filter->add_option("--clips", filter_args.clips, "clips.jsonl")->required();
    filter->add_option("--faces", filter_args.faces, "faces.jsonl")->required();
    filter->add_option("--embeddings", filter_args.embeddings, "embeddings.bin")->required();
    filter->add_option("--out", filter_args.out, "report.jsonl")->required();
    filter->add_option("--sample-stride", filter_args.cfg.constraints.sample_stride,
                       "frame sampling stride")->capture_default_str();
    filter->add_option("--min-face-prop", filter_args.cfg.constraints.min_face_proportion,
                       "minimum mean bbox area")->capture_default_str();
    filter->add_option("--min-angle-var", filter_args.cfg.constraints.min_angle_variation,
                       "minimum angle variation, degrees")->capture_default_str();
    filter->add_option("--identity-threshold", filter_args.cfg.identity_threshold,
                       "mean similarity retention threshold")->capture_default_str();
    filter->add_option("--threads", filter_args.threads, "OpenMP threads (0 = default)");

    ClusterArgs cluster_args;
    auto* cluster = app.add_subcommand("cluster", "Cluster accepted clips by identity");
    cluster->add_option("--clips", cluster_args.clips, "clips.jsonl")->required();
    cluster->add_option("--faces", cluster_args.faces, "faces.jsonl")->required();
    cluster->add_option("--embeddings", cluster_args.embeddings, "embeddings.bin")->required();
    cluster->add_option("--report", cluster_args.report, "filter report.jsonl")->required();
    cluster->add_option("--out", cluster_args.out, "clusters.jsonl")->required();
    cluster->add_option("--save-index", cluster_args.save_index, "persist the trained index");
    cluster->add_flag("--per-frame", cluster_args.per_frame,
                      "cluster per-frame embeddings instead of per-clip means");
    cluster->add_option("--sample-stride", cluster_args.sample_stride, "frame sampling stride")
        ->capture_default_str();
    cluster->add_option("--tau-high", cluster_args.cluster_cfg.tau_high, "pass-1 threshold")
        ->capture_default_str();
    cluster->add_option("--tau-low", cluster_args.cluster_cfg.tau_low, "pass-2 threshold")
        ->capture_default_str();
    cluster->add_option("--knn", cluster_args.cluster_cfg.knn, "neighbors per sample")
        ->capture_default_str();
    cluster->add_option("--nprobe", cluster_args.cluster_cfg.nprobe, "probed lists (0 = auto)");
    cluster->add_option("--nlist", cluster_args.index_params.nlist, "coarse lists (0 = auto)");
    cluster->add_option("--m", cluster_args.index_params.m, "PQ subquantizers")
        ->capture_default_str();
    cluster->add_option("--seed", cluster_args.cluster_cfg.seed, "index training seed")
        ->capture_default_str();
    cluster->add_option("--threads", cluster_args.threads, "OpenMP threads (0 = default)");

    SplitArgs split_args;
    auto* split = app.add_subcommand("split", "Identity-disjoint train/test split");
    split->add_option("--clusters", split_args.clusters, "clusters.jsonl")->required();
    split->add_option("--out", split_args.out, "split.json")->required();
    split->add_option("--test-frac", split_args.test_fraction, "test fraction")
        ->capture_default_str();
    split->add_option("--seed", split_args.seed, "shuffle seed")->capture_default_str();

    StatsArgs stats_args;
    auto* stats = app.add_subcommand("stats", "Corpus statistics from a filter report");
    stats->add_option("--report", stats_args.report, "report.jsonl")->required();
    stats->add_option("--clusters", stats_args.clusters, "clusters.jsonl (optional)");
    stats->add_option("--out", stats_args.out, "stats.json (stdout when omitted)");

    GenArgs gen_args;
    auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus with ground truth");
    gen->add_option("--out-dir", gen_args.out_dir, "output directory")->required();
    gen->add_option("--identities", gen_args.cfg.identities, "identity count")
        ->capture_default_str();
    gen->add_option("--clips-per", gen_args.cfg.clips_per_identity, "clips per identity")
        ->capture_default_str();
    gen->add_option("--dim", gen_args.cfg.dim, "embedding dimension")->capture_default_str();
    gen->add_option("--seed", gen_args.cfg.seed, "generator seed")->capture_default_str();
    gen->add_option("--sample-stride", gen_args.cfg.sample_stride, "stride the filter will use")
        ->capture_default_str();
    gen->add_option("--rate-face-count", gen_args.cfg.rate_face_count, "face-count violations");
    gen->add_option("--rate-low-prop", gen_args.cfg.rate_low_proportion,
                    "low-proportion violations");
    gen->add_option("--rate-low-var", gen_args.cfg.rate_low_variation,
                    "low-variation violations");
    gen->add_option("--rate-identity", gen_args.cfg.rate_identity,
                    "identity-inconsistency violations");
    gen->add_option("--rate-missing", gen_args.cfg.rate_missing, "missing-embedding violations");
    gen->add_option("--rate-multi", gen_args.cfg.rate_multi, "low-prop + low-var violations");

    IndexBuildArgs ib_args;
    IndexQueryArgs iq_args;
    auto* index = app.add_subcommand("index", "IVF-PQ index operations");
    index->require_subcommand(1);
    auto* ib = index->add_subcommand("build", "Train and save an index");
    ib->add_option("--embeddings", ib_args.embeddings, "embeddings.bin")->required();
    ib->add_option("--out", ib_args.out, "index file")->required();
    ib->add_option("--nlist", ib_args.params.nlist, "coarse lists (0 = auto)");
    ib->add_option("--m", ib_args.params.m, "PQ subquantizers")->capture_default_str();
    ib->add_option("--seed", ib_args.params.seed, "training seed")->capture_default_str();
    ib->add_option("--threads", ib_args.threads, "OpenMP threads (0 = default)");
    auto* iq = index->add_subcommand("query", "Query a saved index");
    iq->add_option("--index", iq_args.index, "index file")->required();
    iq->add_option("--queries", iq_args.queries, "queries in embeddings.bin format")->required();
    iq->add_option("--out", iq_args.out, "results.jsonl (stdout when omitted)");
    iq->add_option("--k", iq_args.k, "neighbors per query")->capture_default_str();
    iq->add_option("--nprobe", iq_args.nprobe, "probed lists (0 = auto)");
    iq->add_option("--threads", iq_args.threads, "OpenMP threads (0 = default)");

    MofeArgs mofe_args;
    // Check defaults are toy-sized so the finite-difference sweep over
    // every parameter stays well under a few seconds.
    mofe_args.cfg.d_model = 8;
    mofe_args.cfg.n_tokens = 2;
    mofe_args.cfg.d_id = 16;
    mofe_args.cfg.d_sem = 24;
    mofe_args.cfg.d_det = 24;
    mofe_args.cfg.n_blocks = 4;
    auto* mofe = app.add_subcommand("mofe-check", "Verify MoFE forward/backward numerics");
    mofe->add_option("--d-model", mofe_args.cfg.d_model, "unified width")->capture_default_str();
    mofe->add_option("--n-tokens", mofe_args.cfg.n_tokens, "tokens per stream")
        ->capture_default_str();
    mofe->add_option("--d-id", mofe_args.cfg.d_id, "identity feature width")
        ->capture_default_str();
    mofe->add_option("--d-sem", mofe_args.cfg.d_sem, "semantic feature width")
        ->capture_default_str();
    mofe->add_option("--d-det", mofe_args.cfg.d_det, "detail feature width")
        ->capture_default_str();
    mofe->add_option("--n-blocks", mofe_args.cfg.n_blocks, "DiT block count")
        ->capture_default_str();
    mofe->add_option("--inject-every", mofe_args.cfg.inject_every, "injection stride")
        ->capture_default_str();
    mofe->add_option("--gate", mofe_args.gate, "gate kind: linear | mlp")->capture_default_str();
    mofe->add_option("--gate-granularity", mofe_args.granularity, "per-token | pooled")
        ->capture_default_str();
    mofe->add_option("--seed", mofe_args.cfg.seed, "parameter seed")->capture_default_str();
    mofe->add_option("--base-params", mofe_args.base_params, "base model parameter count")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*filter) return cmd_filter(filter_args);
        if (*cluster) return cmd_cluster(cluster_args);
        if (*split) return cmd_split(split_args);
        if (*stats) return cmd_stats(stats_args);
        if (*gen) return cmd_gen(gen_args);
        if (*index) {
            if (*ib) return cmd_index_build(ib_args);
            if (*iq) return cmd_index_query(iq_args);
        }
        if (*mofe) return cmd_mofe_check(mofe_args);
    } catch (const lfa::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const lfa::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return kExitUsage;
}
