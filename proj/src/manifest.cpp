#include "lfa/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace lfa {

using nlohmann::json;

const char* to_string(RejectReason r) {
    switch (r) {
        case RejectReason::FaceCount: return "FACE_COUNT";
        case RejectReason::FaceProportion: return "FACE_PROPORTION";
        case RejectReason::PoseDiversity: return "POSE_DIVERSITY";
        case RejectReason::IdentityConsistency: return "IDENTITY_CONSISTENCY";
        case RejectReason::MissingData: return "MISSING_DATA";
    }
    return "UNKNOWN";
}

RejectReason reject_reason_from_string(const std::string& s) {
    if (s == "FACE_COUNT") return RejectReason::FaceCount;
    if (s == "FACE_PROPORTION") return RejectReason::FaceProportion;
    if (s == "POSE_DIVERSITY") return RejectReason::PoseDiversity;
    if (s == "IDENTITY_CONSISTENCY") return RejectReason::IdentityConsistency;
    if (s == "MISSING_DATA") return RejectReason::MissingData;
    throw ValidationError("unknown reason code '" + s + "'");
}

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& msg) {
    throw ValidationError(path.string() + ":" + std::to_string(line) + ": " + msg);
}

json parse_line(const std::filesystem::path& path, std::size_t line_no, const std::string& line) {
    try {
        return json::parse(line);
    } catch (const json::parse_error& e) {
        fail(path, line_no, std::string("malformed JSON: ") + e.what());
    }
}

const json& require_field(const json& j, const char* key, const std::filesystem::path& path,
                          std::size_t line_no) {
    auto it = j.find(key);
    if (it == j.end()) fail(path, line_no, std::string("missing field '") + key + "'");
    return *it;
}

template <typename T>
T field_as(const json& j, const char* key, const std::filesystem::path& path, std::size_t line_no) {
    const json& v = require_field(j, key, path, line_no);
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        fail(path, line_no, std::string("field '") + key + "' has wrong type");
    }
}

double finite_field(const json& j, const char* key, const std::filesystem::path& path,
                    std::size_t line_no) {
    double v = field_as<double>(j, key, path, line_no);
    if (!std::isfinite(v)) fail(path, line_no, std::string("field '") + key + "' is not finite");
    return v;
}

// Templated line loop shared by all JSONL readers.
template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        fn(line_no, line);
    }
    if (in.bad()) throw IoError("read failure on " + path.string());
}

}  // namespace

std::vector<ClipRecord> parse_clip_manifest(const std::filesystem::path& path) {
    std::vector<ClipRecord> clips;
    std::unordered_set<std::string> seen;
    for_each_line(path, [&](std::size_t line_no, const std::string& line) {
        json j = parse_line(path, line_no, line);
        ClipRecord c;
        c.clip_id = field_as<std::string>(j, "clip_id", path, line_no);
        c.width = field_as<int>(j, "width", path, line_no);
        c.height = field_as<int>(j, "height", path, line_no);
        c.frame_count = field_as<int>(j, "frame_count", path, line_no);
        c.fps = finite_field(j, "fps", path, line_no);
        if (c.clip_id.empty()) fail(path, line_no, "field 'clip_id' is empty");
        if (c.width <= 0) fail(path, line_no, "field 'width' must be > 0");
        if (c.height <= 0) fail(path, line_no, "field 'height' must be > 0");
        if (c.frame_count < 1) fail(path, line_no, "field 'frame_count' must be >= 1");
        if (c.fps <= 0) fail(path, line_no, "field 'fps' must be > 0");
        if (!seen.insert(c.clip_id).second) fail(path, line_no, "duplicate clip_id '" + c.clip_id + "'");
        clips.push_back(std::move(c));
    });
    return clips;
}

std::vector<FaceObservation> parse_face_manifest(const std::filesystem::path& path,
                                                 const std::vector<ClipRecord>& clips) {
    std::unordered_map<std::string, int> frame_counts;
    for (const auto& c : clips) frame_counts.emplace(c.clip_id, c.frame_count);

    std::vector<FaceObservation> faces;
    for_each_line(path, [&](std::size_t line_no, const std::string& line) {
        json j = parse_line(path, line_no, line);
        FaceObservation f;
        f.clip_id = field_as<std::string>(j, "clip_id", path, line_no);
        auto it = frame_counts.find(f.clip_id);
        if (it == frame_counts.end()) fail(path, line_no, "unknown clip '" + f.clip_id + "'");
        f.frame_index = field_as<int>(j, "frame_index", path, line_no);
        if (f.frame_index < 0 || f.frame_index >= it->second) {
            fail(path, line_no, "frame_index " + std::to_string(f.frame_index) +
                                    " out of range for clip '" + f.clip_id + "' (frame_count " +
                                    std::to_string(it->second) + ")");
        }
        const json& bbox = require_field(j, "bbox", path, line_no);
        if (!bbox.is_array() || bbox.size() != 4) fail(path, line_no, "field 'bbox' must be [x,y,w,h]");
        double v[4];
        for (int i = 0; i < 4; ++i) {
            if (!bbox[i].is_number()) fail(path, line_no, "field 'bbox' must be numeric");
            v[i] = bbox[i].get<double>();
            if (!std::isfinite(v[i])) fail(path, line_no, "field 'bbox' is not finite");
        }
        f.x = v[0]; f.y = v[1]; f.w = v[2]; f.h = v[3];
        if (f.x < 0 || f.y < 0 || f.w <= 0 || f.h <= 0 || f.x + f.w > 1.0 || f.y + f.h > 1.0) {
            fail(path, line_no, "bbox outside the unit frame");
        }
        f.pitch = finite_field(j, "pitch", path, line_no);
        f.yaw = finite_field(j, "yaw", path, line_no);
        f.roll = finite_field(j, "roll", path, line_no);
        for (double a : {f.pitch, f.yaw, f.roll}) {
            if (a < -180.0 || a > 180.0) fail(path, line_no, "pose angle outside [-180, 180]");
        }
        if (auto e = j.find("embedding_row"); e != j.end() && !e->is_null()) {
            if (!e->is_number_unsigned()) fail(path, line_no, "field 'embedding_row' must be unsigned");
            f.embedding_row = e->get<std::uint64_t>();
        }
        faces.push_back(std::move(f));
    });
    return faces;
}

namespace {

json decision_to_json(const FilterDecision& d) {
    json reasons = json::array();
    for (auto r : d.reasons) reasons.push_back(to_string(r));
    json metrics = json::object();
    if (d.mean_face_proportion) metrics["mean_face_proportion"] = *d.mean_face_proportion;
    if (d.angle_variation_deg) metrics["angle_variation_deg"] = *d.angle_variation_deg;
    if (d.mean_similarity) metrics["mean_similarity"] = *d.mean_similarity;
    return json{{"clip_id", d.clip_id},
                {"accepted", d.accepted},
                {"reasons", reasons},
                {"metrics", metrics}};
}

}  // namespace

std::string report_to_jsonl(std::vector<FilterDecision> decisions) {
    std::sort(decisions.begin(), decisions.end(),
              [](const FilterDecision& a, const FilterDecision& b) { return a.clip_id < b.clip_id; });
    std::string out;
    for (const auto& d : decisions) {
        out += decision_to_json(d).dump();
        out += '\n';
    }
    return out;
}

void write_report(std::vector<FilterDecision> decisions, const std::filesystem::path& path) {
    std::string body = report_to_jsonl(std::move(decisions));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw IoError("write failure on " + path.string());
}

std::vector<FilterDecision> parse_report(const std::filesystem::path& path) {
    std::vector<FilterDecision> decisions;
    for_each_line(path, [&](std::size_t line_no, const std::string& line) {
        json j = parse_line(path, line_no, line);
        FilterDecision d;
        d.clip_id = field_as<std::string>(j, "clip_id", path, line_no);
        d.accepted = field_as<bool>(j, "accepted", path, line_no);
        const json& reasons = require_field(j, "reasons", path, line_no);
        if (!reasons.is_array()) fail(path, line_no, "field 'reasons' must be an array");
        for (const auto& r : reasons) d.reasons.push_back(reject_reason_from_string(r.get<std::string>()));
        if (d.accepted != d.reasons.empty()) {
            fail(path, line_no, "accepted flag inconsistent with reasons");
        }
        if (auto m = j.find("metrics"); m != j.end() && m->is_object()) {
            if (auto v = m->find("mean_face_proportion"); v != m->end()) d.mean_face_proportion = v->get<double>();
            if (auto v = m->find("angle_variation_deg"); v != m->end()) d.angle_variation_deg = v->get<double>();
            if (auto v = m->find("mean_similarity"); v != m->end()) d.mean_similarity = v->get<double>();
        }
        decisions.push_back(std::move(d));
    });
    return decisions;
}

void write_clip_manifest(const std::vector<ClipRecord>& clips, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& c : clips) {
        json j{{"clip_id", c.clip_id},
               {"width", c.width},
               {"height", c.height},
               {"frame_count", c.frame_count},
               {"fps", c.fps}};
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failure on " + path.string());
}

void write_face_manifest(const std::vector<FaceObservation>& faces,
                         const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& f : faces) {
        json j{{"clip_id", f.clip_id},
               {"frame_index", f.frame_index},
               {"bbox", {f.x, f.y, f.w, f.h}},
               {"pitch", f.pitch},
               {"yaw", f.yaw},
               {"roll", f.roll}};
        if (f.embedding_row) j["embedding_row"] = *f.embedding_row;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace lfa
