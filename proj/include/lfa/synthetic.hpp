#pragma once

// Seeded synthetic-corpus generator. Violations are planted with wide
// numeric margins and the expected filter verdict is derived from the
// construction itself, so generated ground truth serves as an oracle for
// the whole filter stage without ever invoking it.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lfa/embedding_store.hpp"
#include "lfa/manifest.hpp"

namespace lfa {

enum class PlantedClass {
    Clean,
    FaceCountViolation,     // one sampled frame gets 0 or 2 faces
    LowProportion,          // tiny bboxes on every frame
    LowVariation,           // near-constant pose
    IdentityInconsistency,  // sampled frames alternate between two identities
    MissingEmbeddings,      // no embedding rows at all
    LowProportionAndVariation,
};

struct GenConfig {
    std::uint32_t identities = 3;
    std::uint32_t clips_per_identity = 20;
    std::uint32_t dim = 512;
    int frames_min = 9;
    int frames_max = 27;
    int sample_stride = 3;
    // Per-clip probabilities of each planted violation; remainder is clean.
    double rate_face_count = 0.0;
    double rate_low_proportion = 0.0;
    double rate_low_variation = 0.0;
    double rate_identity = 0.0;
    double rate_missing = 0.0;
    double rate_multi = 0.0;
    double embedding_noise = 0.2;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TruthRecord {
    std::string clip_id;
    bool accepted = false;
    std::vector<RejectReason> reasons;
    std::uint32_t identity = 0;
    PlantedClass planted = PlantedClass::Clean;
};

struct SyntheticCorpus {
    std::vector<ClipRecord> clips;
    std::vector<FaceObservation> faces;
    EmbeddingStore embeddings;
    std::vector<TruthRecord> truth;            // one per clip, clip order
    std::vector<std::uint32_t> identity_of_row;  // embedding row -> identity
};

SyntheticCorpus generate_corpus(const GenConfig& cfg);

// clips.jsonl, faces.jsonl, embeddings.bin, truth.jsonl under dir.
void write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

std::vector<TruthRecord> parse_truth(const std::filesystem::path& path);

}  // namespace lfa
