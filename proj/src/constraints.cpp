#include "lfa/constraints.hpp"

#include <algorithm>
#include <limits>
#include <map>

namespace lfa {

void ConstraintConfig::validate() const {
    if (sample_stride < 1) throw ValidationError("sample_stride must be >= 1");
    if (!(min_face_proportion > 0.0 && min_face_proportion < 1.0)) {
        throw ValidationError("min_face_proportion must be in (0, 1)");
    }
    if (min_angle_variation < 0.0) throw ValidationError("min_angle_variation must be >= 0");
}

ClipFaceTrack sample_frames(const ClipRecord& clip, std::span<const FaceObservation> observations,
                            int stride) {
    if (stride < 1) throw ValidationError("sample stride must be >= 1");
    ClipFaceTrack track;
    track.clip_id = clip.clip_id;
    std::map<int, std::vector<FaceObservation>> by_frame;
    for (const auto& obs : observations) {
        if (obs.clip_id != clip.clip_id) {
            throw ValidationError("observation for clip '" + obs.clip_id +
                                  "' passed to sample_frames of clip '" + clip.clip_id + "'");
        }
        if (obs.frame_index % stride == 0) by_frame[obs.frame_index].push_back(obs);
    }
    for (int f = 0; f < clip.frame_count; f += stride) {
        SampledFrame frame;
        frame.frame_index = f;
        if (auto it = by_frame.find(f); it != by_frame.end()) frame.faces = std::move(it->second);
        track.frames.push_back(std::move(frame));
    }
    return track;
}

bool check_face_count(const ClipFaceTrack& track) {
    return std::all_of(track.frames.begin(), track.frames.end(),
                       [](const SampledFrame& f) { return f.faces.size() == 1; });
}

double face_proportion(const ClipFaceTrack& track) {
    if (track.frames.empty()) throw ValidationError("face_proportion on empty track");
    double sum = 0.0;
    for (const auto& f : track.frames) {
        if (f.faces.size() != 1) {
            throw ValidationError("face_proportion requires exactly one face per sampled frame");
        }
        sum += f.faces.front().area();
    }
    return sum / static_cast<double>(track.frames.size());
}

double angle_variation(const ClipFaceTrack& track) {
    if (track.frames.empty()) throw ValidationError("angle_variation on empty track");
    double lo[3], hi[3];
    std::fill_n(lo, 3, std::numeric_limits<double>::infinity());
    std::fill_n(hi, 3, -std::numeric_limits<double>::infinity());
    for (const auto& f : track.frames) {
        if (f.faces.size() != 1) {
            throw ValidationError("angle_variation requires exactly one face per sampled frame");
        }
        const auto& face = f.faces.front();
        const double angles[3] = {face.pitch, face.yaw, face.roll};
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], angles[a]);
            hi[a] = std::max(hi[a], angles[a]);
        }
    }
    double best = 0.0;
    for (int a = 0; a < 3; ++a) best = std::max(best, hi[a] - lo[a]);
    return best;
}

FilterDecision evaluate_clip(const ClipRecord& clip, std::span<const FaceObservation> observations,
                             const ConstraintConfig& cfg) {
    cfg.validate();
    FilterDecision d;
    d.clip_id = clip.clip_id;

    ClipFaceTrack track = sample_frames(clip, observations, cfg.sample_stride);
    if (!check_face_count(track)) {
        d.reasons.push_back(RejectReason::FaceCount);
    } else {
        double prop = face_proportion(track);
        d.mean_face_proportion = prop;
        if (prop < cfg.min_face_proportion) d.reasons.push_back(RejectReason::FaceProportion);

        double variation = angle_variation(track);
        d.angle_variation_deg = variation;
        if (variation < cfg.min_angle_variation) d.reasons.push_back(RejectReason::PoseDiversity);
    }
    d.accepted = d.reasons.empty();
    return d;
}

}  // namespace lfa
