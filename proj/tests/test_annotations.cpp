#include <gtest/gtest.h>

#include <cmath>

#include "avr/annotations.hpp"
#include "avr/rng.hpp"

using namespace avr;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected avr::Error";
    return ErrorKind::io;
}

}  // namespace

TEST(YoloBoxes, SingleBoxMapsFields) {
    const auto boxes = parse_yolo_boxes("0 0.5 0.5 0.2 0.3");
    ASSERT_EQ(boxes.size(), 1u);
    EXPECT_EQ(boxes[0], (BoundingBox{ObjectClass::penguin, 0.5, 0.5, 0.2, 0.3}));
}

TEST(YoloBoxes, EmptyFileIsEmptyFrame) {
    EXPECT_TRUE(parse_yolo_boxes("").empty());
    EXPECT_TRUE(parse_yolo_boxes("\n\n").empty());
}

TEST(YoloBoxes, OrderPreservedAndRoundTripIsByteIdentical) {
    const std::string text = "1 0.1 0.1 0.05 0.05\n2 0.9 0.9 0.1 0.1";
    const auto boxes = parse_yolo_boxes(text);
    ASSERT_EQ(boxes.size(), 2u);
    EXPECT_EQ(boxes[0].cls, ObjectClass::fish);
    EXPECT_EQ(boxes[1].cls, ObjectClass::bubble);
    EXPECT_EQ(serialize_yolo_boxes(boxes), text);
}

TEST(YoloBoxes, MalformedLineReportsLineNumber) {
    try {
        parse_yolo_boxes("0 0.5 0.5 0.2 0.3\n1 0.5 0.5 0.2");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_EQ(kind_of([] { parse_yolo_boxes("x 0.5 0.5 0.2 0.3"); }), ErrorKind::parse);
    EXPECT_EQ(kind_of([] { parse_yolo_boxes("0 0,5 0.5 0.2 0.3"); }), ErrorKind::parse);
}

TEST(YoloBoxes, UnknownClassAndRangeErrors) {
    EXPECT_EQ(kind_of([] { parse_yolo_boxes("3 0.5 0.5 0.2 0.3"); }), ErrorKind::unknown_class);
    EXPECT_EQ(kind_of([] { parse_yolo_boxes("0 1.2 0.5 0.2 0.3"); }), ErrorKind::range);
    EXPECT_EQ(kind_of([] { parse_yolo_boxes("0 0.95 0.5 0.2 0.3"); }), ErrorKind::range);
    EXPECT_EQ(kind_of([] { parse_yolo_boxes("0 0.5 0.5 0 0.3"); }), ErrorKind::range);
    // Within the 1e-6 slack.
    EXPECT_NO_THROW(parse_yolo_boxes("0 0.9000005 0.5 0.2 0.3"));
}

TEST(YoloBoxes, ClassMapRemapsIds) {
    ClassMap remap;
    remap.external_id = {2, 0, 1};
    const auto boxes = parse_yolo_boxes("2 0.5 0.5 0.2 0.2\n0 0.5 0.5 0.2 0.2", remap);
    EXPECT_EQ(boxes[0].cls, ObjectClass::penguin);
    EXPECT_EQ(boxes[1].cls, ObjectClass::fish);
    EXPECT_EQ(serialize_yolo_boxes(boxes, remap), "2 0.5 0.5 0.2 0.2\n0 0.5 0.5 0.2 0.2");
}

TEST(YoloBoxes, PropertyRoundTripOfCanonicalText) {
    Rng rng(7);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<BoundingBox> boxes;
        const auto n = rng.uniform_index(6);
        for (std::uint64_t i = 0; i < n; ++i) {
            BoundingBox b;
            b.cls = kObjectClasses[rng.uniform_index(3)];
            b.w = rng.uniform(0.01, 0.5);
            b.h = rng.uniform(0.01, 0.5);
            b.cx = rng.uniform(b.w / 2, 1 - b.w / 2);
            b.cy = rng.uniform(b.h / 2, 1 - b.h / 2);
            boxes.push_back(b);
        }
        const auto text = serialize_yolo_boxes(boxes);
        const auto parsed = parse_yolo_boxes(text);
        EXPECT_EQ(parsed, boxes);
        EXPECT_EQ(serialize_yolo_boxes(parsed), text);
    }
}

TEST(Events, SingleInterval) {
    const auto set = parse_events(R"({"v1": [{"start_ms":1000,"end_ms":1400}]})");
    ASSERT_EQ(set.videos.size(), 1u);
    const auto& ev = set.videos.at("v1").events;
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(ev[0].start_ms, 1000);
    EXPECT_EQ(ev[0].end_ms, 1400);
}

TEST(Events, OverlapsAndAbutmentsMerge) {
    auto set = parse_events(R"({"v1": [{"start_ms":1300,"end_ms":1600},{"start_ms":1000,"end_ms":1400}]})");
    auto ev = set.videos.at("v1").events;
    ASSERT_EQ(ev.size(), 1u);
    EXPECT_EQ(ev[0].start_ms, 1000);
    EXPECT_EQ(ev[0].end_ms, 1600);

    set = parse_events(R"({"v1": [{"start_ms":0,"end_ms":100},{"start_ms":100,"end_ms":200},{"start_ms":300,"end_ms":400}]})");
    ev = set.videos.at("v1").events;
    ASSERT_EQ(ev.size(), 2u);
    EXPECT_EQ(ev[0].end_ms, 200);
    EXPECT_EQ(set.total_events(), 2u);
}

TEST(Events, NormativeSchemaCarriesMeta) {
    const auto set = parse_events(R"({"videos": [
        {"video_id": "a", "fps": 30, "frame_count": 60, "events": [{"start_ms": 10, "end_ms": 20}]},
        {"video_id": "b", "fps": 29.97, "frame_count": 5, "events": []}]})");
    EXPECT_EQ(set.videos.at("a").frame_count, 60);
    EXPECT_EQ(set.videos.at("a").fps, (FrameRate{30, 1}));
    EXPECT_EQ(set.videos.at("b").fps, (FrameRate{2997, 100}));
    EXPECT_EQ(FrameRate::from_double(30000.0 / 1001.0), (FrameRate{30000, 1001}));
    EXPECT_EQ(set.total_events(), 1u);
}

TEST(Events, Errors) {
    EXPECT_EQ(kind_of([] { parse_events(R"({"v1": [{"start_ms":1400,"end_ms":1400}]})"); }), ErrorKind::interval);
    EXPECT_EQ(kind_of([] { parse_events(R"({"v1": [{"start_ms":1400}]})"); }), ErrorKind::schema);
    EXPECT_EQ(kind_of([] { parse_events(R"({"videos": [{"fps": 30, "events": []}]})"); }), ErrorKind::schema);
    EXPECT_EQ(kind_of([] { parse_events("not json"); }), ErrorKind::schema);
}

TEST(Events, PropertyMergeIsIdempotentThroughSerialization) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        nlohmann::json doc;
        nlohmann::json videos = nlohmann::json::array();
        for (int v = 0; v < 3; ++v) {
            nlohmann::json events = nlohmann::json::array();
            for (std::uint64_t k = 0, n = rng.uniform_index(8); k < n; ++k) {
                const auto s = static_cast<std::int64_t>(rng.uniform_index(5000));
                const auto len = 1 + static_cast<std::int64_t>(rng.uniform_index(800));
                events.push_back({{"start_ms", s}, {"end_ms", s + len}});
            }
            videos.push_back({{"video_id", "vid" + std::to_string(v)}, {"fps", 30}, {"frame_count", 200},
                              {"events", events}});
        }
        doc["videos"] = videos;
        const auto once = parse_events(doc.dump());
        const auto twice = parse_events(serialize_events(once));
        EXPECT_EQ(once, twice);
        for (const auto& [id, v] : once.videos)
            for (std::size_t i = 1; i < v.events.size(); ++i)
                EXPECT_LT(v.events[i - 1].end_ms, v.events[i].start_ms);
    }
}

TEST(MsToFrame, Examples) {
    EXPECT_EQ(ms_to_frame(0, 30.0), 0);
    EXPECT_EQ(ms_to_frame(1000, 30.0), 30);
    EXPECT_EQ(ms_to_frame(1033, 30.0), 30);
    EXPECT_EQ(ms_to_frame(1034, 30.0), 31);
    EXPECT_EQ(ms_to_frame(1001, FrameRate{30000, 1001}), 30);
    EXPECT_EQ(kind_of([] { ms_to_frame(-1, 30.0); }), ErrorKind::domain);
}

TEST(MsToFrame, PropertyMonotone) {
    const FrameRate rates[] = {{30, 1}, {25, 1}, {30000, 1001}, {24000, 1001}};
    for (auto fps : rates) {
        std::int64_t prev = 0;
        for (std::int64_t t = 0; t < 20000; ++t) {
            const auto f = ms_to_frame(t, fps);
            EXPECT_GE(f, prev);
            prev = f;
        }
    }
}

namespace {

// Floating-point midpoint oracle, written independently of the integer path.
std::vector<Behavior> midpoint_oracle(const std::vector<EventAnnotation>& events, double fps, int frame_count) {
    std::vector<Behavior> out(frame_count, Behavior::swimming);
    for (int f = 0; f < frame_count; ++f) {
        const double mid = (f + 0.5) / fps * 1000.0;
        for (const auto& e : events)
            if (mid >= static_cast<double>(e.start_ms) && mid < static_cast<double>(e.end_ms))
                out[f] = Behavior::feeding;
    }
    return out;
}

}  // namespace

TEST(LabelFrames, NoEventsAllSwimming) {
    const auto labels = label_frames({}, VideoMeta{"v", {30, 1}, 10, 0, 0});
    EXPECT_EQ(labels, std::vector<Behavior>(10, Behavior::swimming));
}

TEST(LabelFrames, IntervalMapsToFrames30Through41) {
    const std::vector<EventAnnotation> ev{{"v", 1000, 1400}};
    const auto labels = label_frames(ev, VideoMeta{"v", {30, 1}, 60, 0, 0});
    EXPECT_EQ(labels, midpoint_oracle(ev, 30.0, 60));
    for (int f = 0; f < 60; ++f)
        EXPECT_EQ(labels[f], (f >= 30 && f <= 41) ? Behavior::feeding : Behavior::swimming) << f;
}

TEST(LabelFrames, WholeVideoEvent) {
    const auto labels = label_frames({{"v", 0, 2000}}, VideoMeta{"v", {30, 1}, 60, 0, 0});
    EXPECT_EQ(labels, std::vector<Behavior>(60, Behavior::feeding));
}

TEST(LabelFrames, EventBeyondDurationIsRejected) {
    // 60 frames at 30 fps = 2000 ms; one frame of tolerance allows up to 2033 ms.
    EXPECT_NO_THROW(label_frames({{"v", 1900, 2033}}, VideoMeta{"v", {30, 1}, 60, 0, 0}));
    try {
        label_frames({{"v", 1900, 2100}}, VideoMeta{"v", {30, 1}, 60, 0, 0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::out_of_range);
        EXPECT_NE(std::string(e.what()).find("[1900, 2100]"), std::string::npos);
    }
}

TEST(LabelFrames, PropertyFeedingCountMatchesIntervalMidpointCount) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const int frames = 20 + static_cast<int>(rng.uniform_index(200));
        const double fps = 30.0;
        std::vector<EventAnnotation> ev;
        for (std::uint64_t k = 0, n = rng.uniform_index(5); k < n; ++k) {
            const auto s = static_cast<std::int64_t>(rng.uniform_index(frames * 1000 / 30));
            ev.push_back({"v", s, s + 1 + static_cast<std::int64_t>(rng.uniform_index(700))});
        }
        const auto duration = static_cast<std::int64_t>(frames * 1000 / 30);
        for (auto& e : ev) e.end_ms = std::min(e.end_ms, duration);
        std::erase_if(ev, [](const auto& e) { return e.start_ms >= e.end_ms; });
        const auto labels = label_frames(ev, VideoMeta{"v", {30, 1}, frames, 0, 0});
        ASSERT_EQ(labels.size(), static_cast<std::size_t>(frames));

        std::size_t expected = 0;
        for (const auto& e : merge_events(ev))
            for (int f = 0; f < frames; ++f) {
                const double mid = (f + 0.5) * 1000.0 / fps;
                expected += (mid >= e.start_ms && mid < e.end_ms);
            }
        EXPECT_EQ(static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Behavior::feeding)), expected);
    }
}

TEST(Splits, DisjointAndOverlapping) {
    const auto ok = validate_split({"a", "b"}, {"c"});
    EXPECT_TRUE(ok.passed());
    EXPECT_EQ(ok.train_count, 2u);
    const auto bad = validate_split({"a"}, {"a"});
    EXPECT_FALSE(bad.passed());
    EXPECT_EQ(bad.intersection, std::vector<std::string>{"a"});
}

TEST(Splits, ManifestCounts) {
    std::string train, test;
    for (int i = 0; i < 418; ++i) train += "img" + std::to_string(i) + "\n";
    for (int i = 418; i < 602; ++i) test += "img" + std::to_string(i) + "\r\n";
    const auto r = validate_split(parse_manifest(train), parse_manifest(test));
    EXPECT_EQ(r.train_count, 418u);
    EXPECT_EQ(r.test_count, 184u);
    EXPECT_TRUE(r.passed());
}

TEST(FrameLabels, ParsesCsv) {
    const auto labels = parse_frame_labels("image_id,has_fish\na,1\nb,nofish\nc,fish\n");
    ASSERT_EQ(labels.size(), 3u);
    EXPECT_TRUE(labels[0].has_fish);
    EXPECT_FALSE(labels[1].has_fish);
    EXPECT_EQ(kind_of([] { parse_frame_labels("a,1\na,0"); }), ErrorKind::parse);
    EXPECT_EQ(kind_of([] { parse_frame_labels("a,maybe"); }), ErrorKind::parse);
}
