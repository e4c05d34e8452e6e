#include "lfa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <json.hpp>

#include "lfa/rng.hpp"

namespace lfa {

void GenConfig::validate() const {
    if (identities < 1 || clips_per_identity < 1) {
        throw ValidationError("generator: identities and clips_per_identity must be >= 1");
    }
    if (dim < 2) throw ValidationError("generator: dim must be >= 2");
    if (identities + 1 > dim) {
        throw ValidationError("generator: needs identities + 1 <= dim for orthogonal bases");
    }
    if (sample_stride < 1) throw ValidationError("generator: sample_stride must be >= 1");
    if (frames_min < 2 * sample_stride + 1) {
        throw ValidationError("generator: frames_min must be >= 2*stride+1 so clips keep >= 3 sampled frames");
    }
    if (frames_max < frames_min) throw ValidationError("generator: frames_max < frames_min");
    double total = rate_face_count + rate_low_proportion + rate_low_variation + rate_identity +
                   rate_missing + rate_multi;
    if (total > 1.0 + 1e-12) throw ValidationError("generator: violation rates sum past 1");
    if (!(embedding_noise > 0.0)) throw ValidationError("generator: embedding_noise must be > 0");
}

namespace {

// Orthonormal identity bases (plus one extra used as the "wrong person"
// for identity-inconsistency plants), via Gram-Schmidt on Gaussian draws.
std::vector<std::vector<double>> orthonormal_bases(std::uint32_t count, std::uint32_t dim,
                                                   std::mt19937_64& rng) {
    std::vector<std::vector<double>> bases;
    bases.reserve(count);
    while (bases.size() < count) {
        std::vector<double> v(dim);
        for (auto& x : v) x = normal(rng);
        for (const auto& b : bases) {
            double dot = 0.0;
            for (std::uint32_t d = 0; d < dim; ++d) dot += v[d] * b[d];
            for (std::uint32_t d = 0; d < dim; ++d) v[d] -= dot * b[d];
        }
        double sq = 0.0;
        for (double x : v) sq += x * x;
        if (sq < 1e-12) continue;  // rare degenerate draw, resample
        double inv = 1.0 / std::sqrt(sq);
        for (auto& x : v) x *= inv;
        bases.push_back(std::move(v));
    }
    return bases;
}

PlantedClass draw_class(const GenConfig& cfg, std::mt19937_64& rng) {
    double u = u01(rng);
    double edge = cfg.rate_face_count;
    if (u < edge) return PlantedClass::FaceCountViolation;
    edge += cfg.rate_low_proportion;
    if (u < edge) return PlantedClass::LowProportion;
    edge += cfg.rate_low_variation;
    if (u < edge) return PlantedClass::LowVariation;
    edge += cfg.rate_identity;
    if (u < edge) return PlantedClass::IdentityInconsistency;
    edge += cfg.rate_missing;
    if (u < edge) return PlantedClass::MissingEmbeddings;
    edge += cfg.rate_multi;
    if (u < edge) return PlantedClass::LowProportionAndVariation;
    return PlantedClass::Clean;
}

std::vector<RejectReason> expected_reasons(PlantedClass c) {
    switch (c) {
        case PlantedClass::Clean: return {};
        case PlantedClass::FaceCountViolation: return {RejectReason::FaceCount};
        case PlantedClass::LowProportion: return {RejectReason::FaceProportion};
        case PlantedClass::LowVariation: return {RejectReason::PoseDiversity};
        case PlantedClass::IdentityInconsistency: return {RejectReason::IdentityConsistency};
        case PlantedClass::MissingEmbeddings: return {RejectReason::MissingData};
        case PlantedClass::LowProportionAndVariation:
            return {RejectReason::FaceProportion, RejectReason::PoseDiversity};
    }
    return {};
}

std::vector<float> make_embedding(const std::vector<double>& base, double noise,
                                  std::uint32_t dim, std::mt19937_64& rng) {
    // Per-dimension scale keeps the total perturbation norm near `noise`
    // regardless of dim, so within-identity cosine sits around
    // 1/(1+noise^2) for any embedding width.
    const double scale = noise / std::sqrt(static_cast<double>(dim));
    std::vector<double> v(dim);
    double sq = 0.0;
    for (std::uint32_t d = 0; d < dim; ++d) {
        v[d] = base[d] + scale * normal(rng);
        sq += v[d] * v[d];
    }
    double inv = 1.0 / std::sqrt(sq);
    std::vector<float> out(dim);
    for (std::uint32_t d = 0; d < dim; ++d) out[d] = static_cast<float>(v[d] * inv);
    return out;
}

}  // namespace

SyntheticCorpus generate_corpus(const GenConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);

    SyntheticCorpus corpus;
    corpus.embeddings.dim = cfg.dim;
    auto bases = orthonormal_bases(cfg.identities + 1, cfg.dim, rng);
    const auto& foreign = bases.back();

    char name[48];
    for (std::uint32_t ident = 0; ident < cfg.identities; ++ident) {
        for (std::uint32_t ci = 0; ci < cfg.clips_per_identity; ++ci) {
            std::snprintf(name, sizeof(name), "id%05u_c%05u", ident, ci);
            PlantedClass planted = draw_class(cfg, rng);

            ClipRecord clip;
            clip.clip_id = name;
            clip.width = 1280;
            clip.height = 720;
            clip.frame_count = cfg.frames_min +
                               static_cast<int>(uniform_index(
                                   rng, static_cast<std::uint64_t>(cfg.frames_max - cfg.frames_min + 1)));
            clip.fps = 24.0;

            const int stride = cfg.sample_stride;
            const int last_sampled = stride * ((clip.frame_count - 1) / stride);
            const int n_sampled = last_sampled / stride + 1;

            // Pose series. Clean clips ramp yaw so the range over sampled
            // frames lands well above the 30-degree default; low-variation
            // plants keep every axis inside a few degrees.
            const bool flat_pose = planted == PlantedClass::LowVariation ||
                                   planted == PlantedClass::LowProportionAndVariation;
            double yaw_span = flat_pose ? 0.0 : uniform_range(rng, 50.0, 120.0);
            double yaw_sign = u01(rng) < 0.5 ? -1.0 : 1.0;

            const bool small_boxes = planted == PlantedClass::LowProportion ||
                                     planted == PlantedClass::LowProportionAndVariation;

            int bad_ordinal = -1;
            bool drop_face = false;
            if (planted == PlantedClass::FaceCountViolation) {
                bad_ordinal = static_cast<int>(uniform_index(rng, n_sampled));
                drop_face = u01(rng) < 0.5;
            }

            const bool give_embeddings = planted != PlantedClass::MissingEmbeddings;

            for (int f = 0; f < clip.frame_count; ++f) {
                const bool sampled = f % stride == 0;
                const int ordinal = f / stride;
                if (sampled && ordinal == bad_ordinal && drop_face) continue;

                FaceObservation face;
                face.clip_id = clip.clip_id;
                face.frame_index = f;
                if (flat_pose) {
                    face.pitch = uniform_range(rng, -4.0, 4.0);
                    face.yaw = uniform_range(rng, -4.0, 4.0);
                    face.roll = uniform_range(rng, -4.0, 4.0);
                } else {
                    face.yaw = yaw_sign * (yaw_span * f / last_sampled - yaw_span / 2.0);
                    face.pitch = uniform_range(rng, -5.0, 5.0);
                    face.roll = uniform_range(rng, -5.0, 5.0);
                }
                if (small_boxes) {
                    face.w = uniform_range(rng, 0.10, 0.18);
                    face.h = uniform_range(rng, 0.10, 0.18);
                } else {
                    face.w = uniform_range(rng, 0.40, 0.60);
                    face.h = uniform_range(rng, 0.40, 0.60);
                }
                face.x = uniform_range(rng, 0.0, 1.0 - face.w);
                face.y = uniform_range(rng, 0.0, 1.0 - face.h);

                if (sampled && give_embeddings) {
                    const bool wrong_person = planted == PlantedClass::IdentityInconsistency &&
                                              ordinal % 2 == 1;
                    const auto& base = wrong_person ? foreign : bases[ident];
                    auto emb = make_embedding(base, cfg.embedding_noise, cfg.dim, rng);
                    face.embedding_row = corpus.embeddings.rows;
                    corpus.embeddings.data.insert(corpus.embeddings.data.end(), emb.begin(),
                                                  emb.end());
                    corpus.embeddings.rows += 1;
                    corpus.identity_of_row.push_back(ident);
                }
                corpus.faces.push_back(std::move(face));

                if (sampled && ordinal == bad_ordinal && !drop_face) {
                    FaceObservation extra = corpus.faces.back();
                    extra.w = 0.2;
                    extra.h = 0.2;
                    extra.x = 0.02;
                    extra.y = 0.02;
                    if (give_embeddings) {
                        auto emb = make_embedding(bases[ident], cfg.embedding_noise, cfg.dim, rng);
                        extra.embedding_row = corpus.embeddings.rows;
                        corpus.embeddings.data.insert(corpus.embeddings.data.end(), emb.begin(),
                                                      emb.end());
                        corpus.embeddings.rows += 1;
                        corpus.identity_of_row.push_back(ident);
                    }
                    corpus.faces.push_back(std::move(extra));
                }
            }

            TruthRecord truth;
            truth.clip_id = clip.clip_id;
            truth.reasons = expected_reasons(planted);
            truth.accepted = truth.reasons.empty();
            truth.identity = ident;
            truth.planted = planted;
            corpus.truth.push_back(std::move(truth));
            corpus.clips.push_back(std::move(clip));
        }
    }
    return corpus;
}

void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_clip_manifest(corpus.clips, dir / "clips.jsonl");
    write_face_manifest(corpus.faces, dir / "faces.jsonl");
    write_embedding_store(corpus.embeddings, dir / "embeddings.bin");

    std::ofstream out(dir / "truth.jsonl", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open truth.jsonl for writing");
    for (const auto& t : corpus.truth) {
        nlohmann::json reasons = nlohmann::json::array();
        for (auto r : t.reasons) reasons.push_back(to_string(r));
        nlohmann::json j{{"clip_id", t.clip_id},
                         {"accepted", t.accepted},
                         {"reasons", reasons},
                         {"identity", t.identity}};
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failure on truth.jsonl");
}

std::vector<TruthRecord> parse_truth(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<TruthRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        TruthRecord t;
        t.clip_id = j.at("clip_id").get<std::string>();
        t.accepted = j.at("accepted").get<bool>();
        for (const auto& r : j.at("reasons")) {
            t.reasons.push_back(reject_reason_from_string(r.get<std::string>()));
        }
        t.identity = j.at("identity").get<std::uint32_t>();
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace lfa
