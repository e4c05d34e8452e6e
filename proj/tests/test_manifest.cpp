#include <doctest.h>

#include "lfa/embedding_store.hpp"
#include "lfa/manifest.hpp"
#include "test_util.hpp"

using namespace lfa;
using test::TempDir;
using test::read_text;
using test::write_text;

TEST_SUITE_BEGIN("manifest");

TEST_CASE("clip manifest parses valid lines in order") {
    TempDir dir("clips");
    write_text(dir / "clips.jsonl",
               R"({"clip_id":"a","width":1280,"height":720,"frame_count":30,"fps":24.0})"
               "\n"
               R"({"clip_id":"b","width":640,"height":480,"frame_count":9,"fps":30.0})"
               "\n");
    auto clips = parse_clip_manifest(dir / "clips.jsonl");
    REQUIRE(clips.size() == 2);
    CHECK(clips[0].clip_id == "a");
    CHECK(clips[1].clip_id == "b");
    CHECK(clips[1].frame_count == 9);
}

TEST_CASE("empty clip manifest yields empty list") {
    TempDir dir("clips");
    write_text(dir / "clips.jsonl", "");
    CHECK(parse_clip_manifest(dir / "clips.jsonl").empty());
}

TEST_CASE("zero width names line and field") {
    TempDir dir("clips");
    write_text(dir / "clips.jsonl",
               R"({"clip_id":"a","width":0,"height":720,"frame_count":30,"fps":24.0})"
               "\n");
    try {
        parse_clip_manifest(dir / "clips.jsonl");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find(":1:") != std::string::npos);
        CHECK(msg.find("width") != std::string::npos);
    }
}

TEST_CASE("duplicate clip_id and malformed JSON rejected") {
    TempDir dir("clips");
    write_text(dir / "clips.jsonl",
               R"({"clip_id":"a","width":1,"height":1,"frame_count":1,"fps":1.0})"
               "\n"
               R"({"clip_id":"a","width":1,"height":1,"frame_count":1,"fps":1.0})"
               "\n");
    CHECK_THROWS_AS(parse_clip_manifest(dir / "clips.jsonl"), ValidationError);

    write_text(dir / "bad.jsonl", "{not json\n");
    CHECK_THROWS_AS(parse_clip_manifest(dir / "bad.jsonl"), ValidationError);

    CHECK_THROWS_AS(parse_clip_manifest(dir / "missing.jsonl"), IoError);
}

TEST_CASE("unknown extra fields are ignored, missing required are errors") {
    TempDir dir("clips");
    write_text(dir / "clips.jsonl",
               R"({"clip_id":"a","width":1,"height":1,"frame_count":1,"fps":1.0,"extra":"x"})"
               "\n");
    CHECK(parse_clip_manifest(dir / "clips.jsonl").size() == 1);

    write_text(dir / "clips2.jsonl", R"({"clip_id":"a","width":1,"height":1,"fps":1.0})" "\n");
    CHECK_THROWS_WITH_AS(parse_clip_manifest(dir / "clips2.jsonl"),
                         doctest::Contains("frame_count"), ValidationError);
}

namespace {

std::vector<ClipRecord> one_clip(int frames = 30) {
    return {{"a", 1280, 720, frames, 24.0}};
}

}  // namespace

TEST_CASE("face manifest validates references and bounds") {
    TempDir dir("faces");
    auto clips = one_clip();

    SUBCASE("unknown clip") {
        write_text(dir / "f.jsonl",
                   R"({"clip_id":"zz","frame_index":0,"bbox":[0.1,0.1,0.2,0.2],"pitch":0,"yaw":0,"roll":0})"
                   "\n");
        CHECK_THROWS_WITH_AS(parse_face_manifest(dir / "f.jsonl", clips),
                             doctest::Contains("unknown clip"), ValidationError);
    }
    SUBCASE("bbox inside bounds accepted") {
        write_text(dir / "f.jsonl",
                   R"({"clip_id":"a","frame_index":0,"bbox":[0.4,0.4,0.2,0.2],"pitch":1,"yaw":2,"roll":3,"embedding_row":5})"
                   "\n");
        auto faces = parse_face_manifest(dir / "f.jsonl", clips);
        REQUIRE(faces.size() == 1);
        CHECK(faces[0].embedding_row == 5);
        CHECK(faces[0].area() == doctest::Approx(0.04));
    }
    SUBCASE("bbox overflowing the frame rejected") {
        write_text(dir / "f.jsonl",
                   R"({"clip_id":"a","frame_index":0,"bbox":[0.85,0.1,0.2,0.2],"pitch":0,"yaw":0,"roll":0})"
                   "\n");
        CHECK_THROWS_WITH_AS(parse_face_manifest(dir / "f.jsonl", clips),
                             doctest::Contains("bbox"), ValidationError);
    }
    SUBCASE("frame_index past frame_count rejected") {
        write_text(dir / "f.jsonl",
                   R"({"clip_id":"a","frame_index":30,"bbox":[0.1,0.1,0.2,0.2],"pitch":0,"yaw":0,"roll":0})"
                   "\n");
        CHECK_THROWS_WITH_AS(parse_face_manifest(dir / "f.jsonl", clips),
                             doctest::Contains("frame_index"), ValidationError);
    }
    SUBCASE("angle outside [-180,180] rejected") {
        write_text(dir / "f.jsonl",
                   R"({"clip_id":"a","frame_index":0,"bbox":[0.1,0.1,0.2,0.2],"pitch":181,"yaw":0,"roll":0})"
                   "\n");
        CHECK_THROWS_AS(parse_face_manifest(dir / "f.jsonl", clips), ValidationError);
    }
}

TEST_CASE("report is sorted by clip_id and byte-stable") {
    std::vector<FilterDecision> decisions(2);
    decisions[0].clip_id = "b";
    decisions[0].accepted = true;
    decisions[1].clip_id = "a";
    decisions[1].accepted = false;
    decisions[1].reasons = {RejectReason::FaceCount};
    decisions[1].angle_variation_deg = 12.5;

    TempDir dir("report");
    write_report(decisions, dir / "r1.jsonl");
    write_report(decisions, dir / "r2.jsonl");
    std::string r1 = read_text(dir / "r1.jsonl");
    CHECK(r1 == read_text(dir / "r2.jsonl"));
    CHECK(r1.find("\"a\"") < r1.find("\"b\""));

    auto parsed = parse_report(dir / "r1.jsonl");
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].clip_id == "a");
    CHECK(parsed[0].reasons == std::vector<RejectReason>{RejectReason::FaceCount});
    CHECK(parsed[0].angle_variation_deg == doctest::Approx(12.5));
    CHECK(parsed[1].accepted);
}

TEST_CASE("empty report round-trips") {
    TempDir dir("report");
    write_report({}, dir / "r.jsonl");
    CHECK(read_text(dir / "r.jsonl").empty());
    CHECK(parse_report(dir / "r.jsonl").empty());
}

TEST_CASE("clip and face manifests round-trip through their writers") {
    TempDir dir("roundtrip");
    std::vector<ClipRecord> clips{{"x", 640, 360, 12, 25.0}, {"y", 1920, 1080, 48, 24.0}};
    write_clip_manifest(clips, dir / "clips.jsonl");
    auto clips2 = parse_clip_manifest(dir / "clips.jsonl");
    REQUIRE(clips2.size() == 2);
    CHECK(clips2[1].width == 1920);

    std::vector<FaceObservation> faces(1);
    faces[0].clip_id = "x";
    faces[0].frame_index = 3;
    faces[0].x = 0.25;
    faces[0].y = 0.25;
    faces[0].w = 0.5;
    faces[0].h = 0.5;
    faces[0].pitch = -10.0;
    faces[0].yaw = 35.5;
    faces[0].roll = 0.0;
    write_face_manifest(faces, dir / "faces.jsonl");
    auto faces2 = parse_face_manifest(dir / "faces.jsonl", clips2);
    REQUIRE(faces2.size() == 1);
    CHECK(faces2[0].yaw == doctest::Approx(35.5));
    CHECK(!faces2[0].embedding_row.has_value());
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("embedding_store");

TEST_CASE("store round-trip is byte-identical") {
    auto store = test::random_store(3, 4, 99);
    TempDir dir("store");
    write_embedding_store(store, dir / "e.bin");
    auto loaded = load_embedding_store(dir / "e.bin");
    CHECK(loaded.rows == 3);
    CHECK(loaded.dim == 4);
    CHECK(loaded.data == store.data);

    write_embedding_store(loaded, dir / "e2.bin");
    CHECK(read_text(dir / "e.bin") == read_text(dir / "e2.bin"));
}

TEST_CASE("truncated payload reports truncation") {
    auto store = test::random_store(3, 4, 1);
    auto bytes = serialize_embedding_store(store);
    bytes.pop_back();
    CHECK_THROWS_WITH_AS(parse_embedding_store(bytes, "t"), doctest::Contains("truncated"),
                         IoError);
}

TEST_CASE("trailing bytes rejected") {
    auto bytes = serialize_embedding_store(test::random_store(2, 4, 1));
    bytes.push_back(0);
    CHECK_THROWS_WITH_AS(parse_embedding_store(bytes, "t"), doctest::Contains("trailing"),
                         IoError);
}

TEST_CASE("bad magic rejected") {
    auto bytes = serialize_embedding_store(test::random_store(2, 4, 1));
    bytes[0] = 'X';
    CHECK_THROWS_WITH_AS(parse_embedding_store(bytes, "t"), doctest::Contains("magic"),
                         ValidationError);
}

TEST_CASE("NaN payload rejected") {
    auto store = test::random_store(2, 4, 1);
    store.data[5] = std::numeric_limits<float>::quiet_NaN();
    auto bytes = serialize_embedding_store(store);
    CHECK_THROWS_WITH_AS(parse_embedding_store(bytes, "t"), doctest::Contains("non-finite"),
                         ValidationError);
}

TEST_CASE("dim below 2 rejected") {
    EmbeddingStore s;
    s.dim = 1;
    s.rows = 1;
    s.data = {1.0f};
    auto bytes = serialize_embedding_store(s);
    CHECK_THROWS_AS(parse_embedding_store(bytes, "t"), ValidationError);
}

TEST_CASE("normalize_rows") {
    EmbeddingStore s;
    s.dim = 2;
    s.rows = 2;
    s.data = {3.0f, 4.0f, 0.6f, 0.8f};
    auto n = normalize_rows(s);
    CHECK(n.data[0] == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(n.data[1] == doctest::Approx(0.8).epsilon(1e-7));
    // already-unit row unchanged
    CHECK(n.data[2] == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(n.data[3] == doctest::Approx(0.8).epsilon(1e-7));

    s.data = {0.0f, 0.0f, 1.0f, 0.0f};
    CHECK_THROWS_WITH_AS(normalize_rows(s), doctest::Contains("row 0"), ValidationError);
}

TEST_CASE("empty store (N=0) round-trips") {
    EmbeddingStore s;
    s.dim = 8;
    s.rows = 0;
    TempDir dir("store");
    write_embedding_store(s, dir / "e.bin");
    auto loaded = load_embedding_store(dir / "e.bin");
    CHECK(loaded.rows == 0);
    CHECK(loaded.dim == 8);
}

TEST_SUITE_END();
