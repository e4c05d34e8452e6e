#pragma once

// Clip/face manifest parsing and filter-report writing. Manifests are
// JSON Lines, one object per line; unknown fields are ignored, missing
// required fields are hard errors with the offending line number.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lfa/errors.hpp"

namespace lfa {

struct ClipRecord {
    std::string clip_id;
    int width = 0;
    int height = 0;
    int frame_count = 0;
    double fps = 0.0;
};

struct FaceObservation {
    std::string clip_id;
    int frame_index = 0;
    // Bounding box as fractions of the frame dimensions, all in [0,1].
    double x = 0.0, y = 0.0, w = 0.0, h = 0.0;
    // Head pose in degrees, each in [-180, 180].
    double pitch = 0.0, yaw = 0.0, roll = 0.0;
    std::optional<std::uint64_t> embedding_row;

    double area() const { return w * h; }
};

enum class RejectReason {
    FaceCount,
    FaceProportion,
    PoseDiversity,
    IdentityConsistency,
    MissingData,
};

const char* to_string(RejectReason r);
RejectReason reject_reason_from_string(const std::string& s);

struct FilterDecision {
    std::string clip_id;
    bool accepted = false;
    std::vector<RejectReason> reasons;  // canonical enum order, empty iff accepted
    std::optional<double> mean_face_proportion;
    std::optional<double> angle_variation_deg;
    std::optional<double> mean_similarity;
};

std::vector<ClipRecord> parse_clip_manifest(const std::filesystem::path& path);

// Requires the owning clip manifest so clip_id / frame_index references
// can be checked. Returns observations in file order.
std::vector<FaceObservation> parse_face_manifest(const std::filesystem::path& path,
                                                 const std::vector<ClipRecord>& clips);

// One decision per line, sorted ascending by clip_id. Byte-identical
// output for identical input.
void write_report(std::vector<FilterDecision> decisions, const std::filesystem::path& path);
std::string report_to_jsonl(std::vector<FilterDecision> decisions);

std::vector<FilterDecision> parse_report(const std::filesystem::path& path);

void write_clip_manifest(const std::vector<ClipRecord>& clips, const std::filesystem::path& path);
void write_face_manifest(const std::vector<FaceObservation>& faces,
                         const std::filesystem::path& path);

}  // namespace lfa
