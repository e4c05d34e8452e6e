#pragma once

// Stage composition used by the CLI: facial constraints followed by the
// identity-consistency gate per clip, plus corpus statistics. Clips are
// evaluated in parallel and the decisions merged in clip_id order, so the
// output is independent of scheduling.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lfa/clustering.hpp"
#include "lfa/consistency.hpp"
#include "lfa/constraints.hpp"
#include "lfa/manifest.hpp"

namespace lfa {

struct FilterConfig {
    ConstraintConfig constraints;
    double identity_threshold = 0.6;
};

// Full per-clip decision: constraint reasons, then IDENTITY_CONSISTENCY or
// MISSING_DATA from the gate. The gate scores the embeddings of sampled
// single-face frames; fewer than two of those means the clip cannot be
// scored and is rejected with MISSING_DATA.
FilterDecision evaluate_clip_full(const ClipRecord& clip,
                                  std::span<const FaceObservation> observations,
                                  const EmbeddingStore& store, const FilterConfig& cfg);

std::vector<FilterDecision> run_filter(const std::vector<ClipRecord>& clips,
                                       const std::vector<FaceObservation>& faces,
                                       const EmbeddingStore& store, const FilterConfig& cfg);

struct CorpusStats {
    std::uint64_t n_clips_in = 0;
    std::uint64_t n_clips_out = 0;
    // Rejected clips keyed by their first (highest-priority) reason, so the
    // counts plus n_clips_out add back up to n_clips_in.
    std::map<std::string, std::uint64_t> rejections_by_first_reason;
    // Angle variation bucketed per 10 degrees (key = bucket lower bound);
    // covers every clip whose variation was evaluated.
    std::map<int, std::uint64_t> angle_variation_hist;
    // Cluster size -> number of clusters of that size.
    std::map<std::uint64_t, std::uint64_t> cluster_size_hist;
};

CorpusStats compute_stats(const std::vector<FilterDecision>& decisions,
                          const ClusterAssignment* clusters = nullptr);

// Mean of the clip's frame embeddings (sampled single-face frames),
// renormalized; used for the default one-vector-per-clip clustering input.
struct ClipEmbeddingTable {
    EmbeddingStore store;                 // one row per entry in clip_ids
    std::vector<std::string> clip_ids;    // row -> clip
};

ClipEmbeddingTable per_clip_embeddings(const std::vector<ClipRecord>& clips,
                                       const std::vector<FaceObservation>& faces,
                                       const EmbeddingStore& store,
                                       const std::vector<std::string>& accepted_clip_ids,
                                       int sample_stride);

}  // namespace lfa
