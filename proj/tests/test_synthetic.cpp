#include <doctest.h>

#include "lfa/pipeline.hpp"
#include "lfa/synthetic.hpp"
#include "test_util.hpp"

using namespace lfa;
using test::TempDir;
using test::read_text;

namespace {

GenConfig mixed_config(std::uint64_t seed) {
    GenConfig cfg;
    cfg.identities = 5;
    cfg.clips_per_identity = 8;
    cfg.dim = 64;
    cfg.seed = seed;
    cfg.rate_face_count = 0.12;
    cfg.rate_low_proportion = 0.12;
    cfg.rate_low_variation = 0.12;
    cfg.rate_identity = 0.12;
    cfg.rate_missing = 0.06;
    cfg.rate_multi = 0.06;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("synthetic");

TEST_CASE("generation is deterministic and writes byte-identical corpora") {
    auto cfg = mixed_config(404);
    TempDir a("gen_a"), b("gen_b");
    write_corpus(generate_corpus(cfg), a.path());
    write_corpus(generate_corpus(cfg), b.path());
    for (const char* name : {"clips.jsonl", "faces.jsonl", "embeddings.bin", "truth.jsonl"}) {
        CHECK(read_text(a / name) == read_text(b / name));
    }
}

TEST_CASE("different seeds differ") {
    auto corpus1 = generate_corpus(mixed_config(1));
    auto corpus2 = generate_corpus(mixed_config(2));
    CHECK(corpus1.embeddings.data != corpus2.embeddings.data);
}

TEST_CASE("generated corpora pass their own manifest validation") {
    auto corpus = generate_corpus(mixed_config(9));
    TempDir dir("gen");
    write_corpus(corpus, dir.path());
    auto clips = parse_clip_manifest(dir / "clips.jsonl");
    auto faces = parse_face_manifest(dir / "faces.jsonl", clips);
    auto store = load_embedding_store(dir / "embeddings.bin");
    CHECK(clips.size() == 40);
    CHECK(faces.size() == corpus.faces.size());
    CHECK(store.rows == corpus.embeddings.rows);
    auto truth = parse_truth(dir / "truth.jsonl");
    CHECK(truth.size() == clips.size());
}

TEST_CASE("filter decisions match the planted ground truth exactly") {
    // The generator is the oracle here: its labels come from the planted
    // construction, not from the filter.
    for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
        auto corpus = generate_corpus(mixed_config(seed));
        FilterConfig cfg;
        auto decisions = run_filter(corpus.clips, corpus.faces, corpus.embeddings, cfg);
        REQUIRE(decisions.size() == corpus.truth.size());

        std::map<std::string, const TruthRecord*> truth;
        for (const auto& t : corpus.truth) truth[t.clip_id] = &t;
        for (const auto& d : decisions) {
            const TruthRecord* t = truth.at(d.clip_id);
            CHECK(d.accepted == t->accepted);
            CHECK(d.reasons == t->reasons);
        }
    }
}

TEST_CASE("violation-free corpus is fully accepted") {
    GenConfig cfg;
    cfg.identities = 3;
    cfg.clips_per_identity = 5;
    cfg.dim = 32;
    cfg.seed = 77;
    auto corpus = generate_corpus(cfg);
    auto decisions = run_filter(corpus.clips, corpus.faces, corpus.embeddings, FilterConfig{});
    for (const auto& d : decisions) {
        CHECK(d.accepted);
        CHECK(*d.mean_similarity > 0.9);
    }
}

TEST_CASE("config validation") {
    GenConfig cfg;
    cfg.identities = 100;
    cfg.dim = 64;
    CHECK_THROWS_AS(generate_corpus(cfg), ValidationError);  // bases need identities+1 <= dim

    cfg = GenConfig{};
    cfg.rate_face_count = 0.8;
    cfg.rate_identity = 0.8;
    CHECK_THROWS_AS(generate_corpus(cfg), ValidationError);

    cfg = GenConfig{};
    cfg.frames_min = 3;
    CHECK_THROWS_AS(generate_corpus(cfg), ValidationError);
}

TEST_CASE("per-clip embeddings cover exactly the accepted clips") {
    auto corpus = generate_corpus(mixed_config(21));
    FilterConfig fcfg;
    auto decisions = run_filter(corpus.clips, corpus.faces, corpus.embeddings, fcfg);
    std::vector<std::string> accepted;
    for (const auto& d : decisions) {
        if (d.accepted) accepted.push_back(d.clip_id);
    }
    auto table = per_clip_embeddings(corpus.clips, corpus.faces, corpus.embeddings, accepted,
                                     fcfg.constraints.sample_stride);
    CHECK(table.store.rows == accepted.size());
    CHECK(table.clip_ids.size() == accepted.size());
    // rows are unit-normalized
    for (std::uint64_t i = 0; i < table.store.rows; ++i) {
        double sq = 0.0;
        for (float v : table.store.row(i)) sq += static_cast<double>(v) * v;
        CHECK(sq == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("stats conserve clip counts") {
    auto corpus = generate_corpus(mixed_config(33));
    auto decisions = run_filter(corpus.clips, corpus.faces, corpus.embeddings, FilterConfig{});
    auto stats = compute_stats(decisions);
    CHECK(stats.n_clips_in == decisions.size());
    std::uint64_t rejected = 0;
    for (const auto& [reason, count] : stats.rejections_by_first_reason) rejected += count;
    CHECK(stats.n_clips_out + rejected == stats.n_clips_in);

    std::uint64_t with_angle = 0;
    for (const auto& d : decisions) with_angle += d.angle_variation_deg.has_value();
    std::uint64_t hist_total = 0;
    for (const auto& [bucket, count] : stats.angle_variation_hist) hist_total += count;
    CHECK(hist_total == with_angle);
}

TEST_SUITE_END();
