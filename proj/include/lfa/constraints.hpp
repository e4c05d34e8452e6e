#pragma once

// Facial constraints filtering: frame subsampling plus the face-count,
// face-proportion and pose-diversity checks on the sampled frames.

#include <span>
#include <string>
#include <vector>

#include "lfa/manifest.hpp"

namespace lfa {

struct ConstraintConfig {
    int sample_stride = 3;
    double min_face_proportion = 0.10;  // keep if mean bbox area >= this
    double min_angle_variation = 30.0;  // degrees, keep if variation >= this

    void validate() const;
};

struct SampledFrame {
    int frame_index = 0;
    std::vector<FaceObservation> faces;
};

struct ClipFaceTrack {
    std::string clip_id;
    std::vector<SampledFrame> frames;  // frame_index strictly increasing
};

// Keeps frames with frame_index == 0 (mod stride). A sampled frame with
// no observations appears with an empty face list.
ClipFaceTrack sample_frames(const ClipRecord& clip, std::span<const FaceObservation> observations,
                            int stride);

// True iff every sampled frame contains exactly one face.
bool check_face_count(const ClipFaceTrack& track);

// Mean over sampled frames of bbox area (w*h). Requires one face per frame.
double face_proportion(const ClipFaceTrack& track);

// Per-axis range (max - min) over sampled frames, maximized across
// pitch/yaw/roll. Requires one face per frame.
double angle_variation(const ClipFaceTrack& track);

// Applies count -> proportion -> pose-diversity. Proportion and diversity
// are evaluated (and their metrics reported) only when the count check
// passes, since both are defined over single-face frames; when evaluated,
// each can contribute its own reason, so a decision may carry several.
FilterDecision evaluate_clip(const ClipRecord& clip, std::span<const FaceObservation> observations,
                             const ConstraintConfig& cfg);

}  // namespace lfa
