#include "lfa/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace lfa {

FilterDecision evaluate_clip_full(const ClipRecord& clip,
                                  std::span<const FaceObservation> observations,
                                  const EmbeddingStore& store, const FilterConfig& cfg) {
    FilterDecision d = evaluate_clip(clip, observations, cfg.constraints);

    // Identity gate over sampled single-face frames that carry embeddings.
    ClipFaceTrack track = sample_frames(clip, observations, cfg.constraints.sample_stride);
    std::vector<std::uint64_t> rows;
    std::size_t skipped = 0;
    for (const auto& frame : track.frames) {
        if (frame.faces.size() != 1) continue;
        if (frame.faces.front().embedding_row) {
            rows.push_back(*frame.faces.front().embedding_row);
        } else {
            ++skipped;
        }
    }
    ConsistencyReport gate =
        consistency_gate(clip.clip_id, rows, store, cfg.identity_threshold, skipped);
    if (gate.mean_similarity) {
        d.mean_similarity = gate.mean_similarity;
        if (!gate.retained) d.reasons.push_back(RejectReason::IdentityConsistency);
    } else {
        d.reasons.push_back(RejectReason::MissingData);
    }
    d.accepted = d.reasons.empty();
    return d;
}

std::vector<FilterDecision> run_filter(const std::vector<ClipRecord>& clips,
                                       const std::vector<FaceObservation>& faces,
                                       const EmbeddingStore& store, const FilterConfig& cfg) {
    std::unordered_map<std::string, std::vector<FaceObservation>> by_clip;
    for (const auto& f : faces) by_clip[f.clip_id].push_back(f);

    static const std::vector<FaceObservation> kNone;
    std::vector<FilterDecision> decisions(clips.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < clips.size(); ++i) {
        auto it = by_clip.find(clips[i].clip_id);
        const auto& obs = it == by_clip.end() ? kNone : it->second;
        decisions[i] = evaluate_clip_full(clips[i], obs, store, cfg);
    }
    std::sort(decisions.begin(), decisions.end(),
              [](const FilterDecision& a, const FilterDecision& b) { return a.clip_id < b.clip_id; });
    return decisions;
}

CorpusStats compute_stats(const std::vector<FilterDecision>& decisions,
                          const ClusterAssignment* clusters) {
    CorpusStats stats;
    stats.n_clips_in = decisions.size();
    for (const auto& d : decisions) {
        if (d.accepted) {
            ++stats.n_clips_out;
        } else {
            ++stats.rejections_by_first_reason[to_string(d.reasons.front())];
        }
        if (d.angle_variation_deg) {
            int bucket = static_cast<int>(std::floor(*d.angle_variation_deg / 10.0)) * 10;
            ++stats.angle_variation_hist[bucket];
        }
    }
    if (clusters) {
        std::unordered_map<std::uint32_t, std::uint64_t> sizes;
        for (auto c : clusters->labels) ++sizes[c];
        for (const auto& [c, size] : sizes) ++stats.cluster_size_hist[size];
    }
    return stats;
}

ClipEmbeddingTable per_clip_embeddings(const std::vector<ClipRecord>& clips,
                                       const std::vector<FaceObservation>& faces,
                                       const EmbeddingStore& store,
                                       const std::vector<std::string>& accepted_clip_ids,
                                       int sample_stride) {
    std::unordered_set<std::string> accepted(accepted_clip_ids.begin(), accepted_clip_ids.end());
    std::unordered_map<std::string, std::vector<FaceObservation>> by_clip;
    for (const auto& f : faces) by_clip[f.clip_id].push_back(f);

    ClipEmbeddingTable table;
    table.store.dim = store.dim;

    // Clip order follows the clip manifest for reproducible row numbering.
    for (const auto& clip : clips) {
        if (!accepted.contains(clip.clip_id)) continue;
        auto it = by_clip.find(clip.clip_id);
        if (it == by_clip.end()) continue;
        ClipFaceTrack track = sample_frames(clip, it->second, sample_stride);
        std::vector<double> mean(store.dim, 0.0);
        std::uint64_t count = 0;
        for (const auto& frame : track.frames) {
            if (frame.faces.size() != 1 || !frame.faces.front().embedding_row) continue;
            std::uint64_t row = *frame.faces.front().embedding_row;
            if (row >= store.rows) {
                throw ValidationError("clip '" + clip.clip_id + "': embedding row " +
                                      std::to_string(row) + " out of range");
            }
            auto x = store.row(row);
            for (std::uint32_t d = 0; d < store.dim; ++d) mean[d] += x[d];
            ++count;
        }
        if (count == 0) continue;
        double sq = 0.0;
        for (double v : mean) sq += v * v;
        if (sq <= 0.0) {
            throw ValidationError("clip '" + clip.clip_id + "': zero-norm mean embedding");
        }
        double inv = 1.0 / std::sqrt(sq);
        for (std::uint32_t d = 0; d < store.dim; ++d) {
            table.store.data.push_back(static_cast<float>(mean[d] * inv));
        }
        table.store.rows += 1;
        table.clip_ids.push_back(clip.clip_id);
    }
    return table;
}

}  // namespace lfa
