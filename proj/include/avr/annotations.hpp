#pragma once

// Data-view parsers: YOLO-style box files, fish-presence frame labels,
// millisecond event JSON, and split manifests. Everything here is a pure
// function over text.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "avr/binary_io.hpp"
#include "avr/error.hpp"

namespace avr {

enum class ObjectClass : std::uint8_t { penguin = 0, fish = 1, bubble = 2 };

inline constexpr std::size_t kNumObjectClasses = 3;
inline constexpr std::array<ObjectClass, kNumObjectClasses> kObjectClasses{
    ObjectClass::penguin, ObjectClass::fish, ObjectClass::bubble};

constexpr std::string_view class_name(ObjectClass c) {
    switch (c) {
    case ObjectClass::penguin: return "Penguin";
    case ObjectClass::fish: return "Fish";
    case ObjectClass::bubble: return "Bubble";
    }
    return "?";
}

constexpr std::size_t class_index(ObjectClass c) { return static_cast<std::size_t>(c); }

/// Maps the integer ids written in a dataset's label files onto the internal
/// classes. The default is penguin=0, fish=1, bubble=2.
struct ClassMap {
    std::array<int, kNumObjectClasses> external_id{0, 1, 2};

    std::optional<ObjectClass> from_external(long id) const {
        for (auto c : kObjectClasses)
            if (external_id[class_index(c)] == id) return c;
        return std::nullopt;
    }

    int to_external(ObjectClass c) const { return external_id[class_index(c)]; }

    bool operator==(const ClassMap&) const = default;
};

inline constexpr double kBoxSlack = 1e-6;

/// Axis-aligned box in normalized image coordinates (center + size).
struct BoundingBox {
    ObjectClass cls = ObjectClass::penguin;
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    double x0() const { return cx - w / 2; }
    double x1() const { return cx + w / 2; }
    double y0() const { return cy - h / 2; }
    double y1() const { return cy + h / 2; }

    bool operator==(const BoundingBox&) const = default;
};

/// Returns an empty string when the box satisfies the coordinate invariants,
/// otherwise a description of the first violation.
inline std::string box_violation(const BoundingBox& b) {
    auto out = [](double v, double lo, double hi) { return !(v >= lo - kBoxSlack && v <= hi + kBoxSlack); };
    if (out(b.cx, 0, 1)) return "cx=" + format_number(b.cx) + " outside [0,1]";
    if (out(b.cy, 0, 1)) return "cy=" + format_number(b.cy) + " outside [0,1]";
    if (!(b.w > 0) || b.w > 1 + kBoxSlack) return "w=" + format_number(b.w) + " outside (0,1]";
    if (!(b.h > 0) || b.h > 1 + kBoxSlack) return "h=" + format_number(b.h) + " outside (0,1]";
    if (b.x0() < -kBoxSlack || b.x1() > 1 + kBoxSlack) return "horizontal extent leaves the image";
    if (b.y0() < -kBoxSlack || b.y1() > 1 + kBoxSlack) return "vertical extent leaves the image";
    return {};
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n";
    const auto first = s.find_first_not_of(ws);
    if (first == std::string_view::npos) return {};
    return s.substr(first, s.find_last_not_of(ws) - first + 1);
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        if (end == text.size()) break;
        start = end + 1;
    }
    return lines;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        if (i == line.size()) break;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        fields.push_back(line.substr(i, j - i));
        i = j;
    }
    return fields;
}

template <typename T>
std::optional<T> parse_full(std::string_view token) {
    T value{};
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size()) return std::nullopt;
    return value;
}

}  // namespace detail

/// Parses a YOLO-style label file: one `class cx cy w h` record per nonempty
/// line. An empty file is a frame without objects.
inline std::vector<BoundingBox> parse_yolo_boxes(std::string_view text, const ClassMap& classes = {}) {
    std::vector<BoundingBox> boxes;
    const auto lines = detail::split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const auto line = detail::trim(lines[n]);
        if (line.empty()) continue;
        const auto fields = detail::split_fields(line);
        if (fields.size() != 5)
            throw ParseError(n + 1, "expected 5 fields, found " + std::to_string(fields.size()));
        const auto id = detail::parse_full<long>(fields[0]);
        if (!id) throw ParseError(n + 1, "class id is not an integer: " + std::string(fields[0]));
        std::array<double, 4> coords{};
        for (std::size_t k = 0; k < 4; ++k) {
            const auto v = detail::parse_full<double>(fields[k + 1]);
            if (!v || !std::isfinite(*v))
                throw ParseError(n + 1, "not a decimal number: " + std::string(fields[k + 1]));
            coords[k] = *v;
        }
        const auto cls = classes.from_external(*id);
        if (!cls)
            throw Error(ErrorKind::unknown_class,
                        "line " + std::to_string(n + 1) + ": unknown class id " + std::to_string(*id));
        BoundingBox box{*cls, coords[0], coords[1], coords[2], coords[3]};
        if (auto why = box_violation(box); !why.empty())
            throw Error(ErrorKind::range, "line " + std::to_string(n + 1) + ": " + why);
        boxes.push_back(box);
    }
    return boxes;
}

/// Canonical text form: single spaces, shortest round-trip decimals, lines
/// joined by '\n' without a trailing newline.
inline std::string serialize_yolo_boxes(const std::vector<BoundingBox>& boxes, const ClassMap& classes = {}) {
    std::string out;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& b = boxes[i];
        if (i) out += '\n';
        out += std::to_string(classes.to_external(b.cls));
        for (double v : {b.cx, b.cy, b.w, b.h}) {
            out += ' ';
            out += format_number(v);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Frame timing

/// Exact rational frame rate (e.g. 30/1 or 30000/1001).
struct FrameRate {
    std::int64_t num = 30;
    std::int64_t den = 1;

    static FrameRate from_double(double fps) {
        if (!(fps > 0) || !std::isfinite(fps)) throw Error(ErrorKind::domain, "fps must be positive");
        for (std::int64_t den : {std::int64_t{1}, std::int64_t{1001}, std::int64_t{1000000}}) {
            const double scaled = fps * static_cast<double>(den);
            const double rounded = std::round(scaled);
            if (den == 1000000 || std::abs(scaled - rounded) < 1e-6 * static_cast<double>(den)) {
                FrameRate r{static_cast<std::int64_t>(rounded), den};
                const auto g = std::gcd(r.num, r.den);
                return {r.num / g, r.den / g};
            }
        }
        return {};
    }

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }

    bool operator==(const FrameRate&) const = default;
};

/// Frame index containing millisecond `t_ms`: floor(t_ms * fps / 1000).
inline std::int64_t ms_to_frame(std::int64_t t_ms, FrameRate fps) {
    if (t_ms < 0) throw Error(ErrorKind::domain, "negative timestamp " + std::to_string(t_ms) + " ms");
    if (fps.num <= 0 || fps.den <= 0) throw Error(ErrorKind::domain, "fps must be positive");
    return (t_ms * fps.num) / (1000 * fps.den);
}

inline std::int64_t ms_to_frame(std::int64_t t_ms, double fps) {
    return ms_to_frame(t_ms, FrameRate::from_double(fps));
}

struct VideoMeta {
    std::string video_id;
    FrameRate fps{};
    std::int64_t frame_count = 1;
    int width = 0;
    int height = 0;
};

struct EventAnnotation {
    std::string video_id;
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;

    bool operator==(const EventAnnotation&) const = default;
};

struct VideoEvents {
    std::string video_id;
    FrameRate fps{};
    std::optional<std::int64_t> frame_count;
    std::vector<EventAnnotation> events;  // sorted, disjoint

    VideoMeta meta(std::int64_t fallback_frame_count = 1) const {
        return {video_id, fps, frame_count.value_or(fallback_frame_count), 0, 0};
    }

    bool operator==(const VideoEvents&) const = default;
};

struct EventSet {
    std::map<std::string, VideoEvents> videos;

    std::size_t total_events() const {
        std::size_t n = 0;
        for (const auto& [id, v] : videos) n += v.events.size();
        return n;
    }

    bool operator==(const EventSet&) const = default;
};

/// Sorts by start and merges overlapping or abutting intervals.
inline std::vector<EventAnnotation> merge_events(std::vector<EventAnnotation> events) {
    std::sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
        return std::tie(a.start_ms, a.end_ms) < std::tie(b.start_ms, b.end_ms);
    });
    std::vector<EventAnnotation> merged;
    for (auto& e : events) {
        if (!merged.empty() && e.start_ms <= merged.back().end_ms)
            merged.back().end_ms = std::max(merged.back().end_ms, e.end_ms);
        else
            merged.push_back(std::move(e));
    }
    return merged;
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key))
        throw Error(ErrorKind::schema, where + ": missing required key \"" + key + "\"");
    return obj.at(key);
}

inline std::int64_t require_int(const nlohmann::json& obj, const char* key, const std::string& where) {
    const auto& v = require(obj, key, where);
    if (!v.is_number_integer())
        throw Error(ErrorKind::schema, where + ": \"" + key + "\" must be an integer");
    return v.get<std::int64_t>();
}

inline EventAnnotation parse_interval(const nlohmann::json& item, const std::string& video_id, std::size_t k) {
    const std::string where = video_id + " event " + std::to_string(k);
    EventAnnotation e{video_id, 0, 0};
    if (item.is_array()) {
        if (item.size() != 2 || !item[0].is_number_integer() || !item[1].is_number_integer())
            throw Error(ErrorKind::schema, where + ": expected [start_ms, end_ms]");
        e.start_ms = item[0].get<std::int64_t>();
        e.end_ms = item[1].get<std::int64_t>();
    } else {
        e.start_ms = require_int(item, "start_ms", where);
        e.end_ms = require_int(item, "end_ms", where);
    }
    if (e.start_ms < 0 || e.start_ms >= e.end_ms)
        throw Error(ErrorKind::interval, where + ": invalid interval [" + std::to_string(e.start_ms) + ", " +
                                             std::to_string(e.end_ms) + "]");
    return e;
}

inline std::vector<EventAnnotation> parse_interval_list(const nlohmann::json& list, const std::string& video_id) {
    if (!list.is_array()) throw Error(ErrorKind::schema, video_id + ": events must be an array");
    std::vector<EventAnnotation> events;
    for (std::size_t k = 0; k < list.size(); ++k) events.push_back(parse_interval(list[k], video_id, k));
    return merge_events(std::move(events));
}

}  // namespace detail

/// Parses the event JSON. The normative layout is
/// `{"videos": [{"video_id", "fps", "frame_count", "events": [{"start_ms", "end_ms"}]}]}`;
/// a shorthand `{"<video_id>": [{"start_ms", "end_ms"}, ...]}` is also accepted.
/// Events come back sorted with overlapping/abutting intervals merged.
inline EventSet parse_events(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::schema, std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorKind::schema, "event file must be a JSON object");

    EventSet set;
    auto insert = [&](VideoEvents v) {
        if (set.videos.contains(v.video_id))
            throw Error(ErrorKind::schema, "duplicate video_id " + v.video_id);
        set.videos.emplace(v.video_id, std::move(v));
    };

    if (doc.contains("videos") && doc.at("videos").is_array()) {
        const auto& videos = doc.at("videos");
        for (std::size_t i = 0; i < videos.size(); ++i) {
            const auto& entry = videos[i];
            const std::string where = "videos[" + std::to_string(i) + "]";
            const auto& id = detail::require(entry, "video_id", where);
            if (!id.is_string()) throw Error(ErrorKind::schema, where + ": video_id must be a string");
            VideoEvents v;
            v.video_id = id.get<std::string>();
            if (entry.contains("fps")) {
                if (!entry.at("fps").is_number()) throw Error(ErrorKind::schema, where + ": fps must be a number");
                v.fps = FrameRate::from_double(entry.at("fps").get<double>());
            }
            if (entry.contains("frame_count")) {
                v.frame_count = detail::require_int(entry, "frame_count", where);
                if (*v.frame_count < 1) throw Error(ErrorKind::schema, where + ": frame_count must be >= 1");
            }
            v.events = detail::parse_interval_list(detail::require(entry, "events", where), v.video_id);
            insert(std::move(v));
        }
    } else {
        for (const auto& [id, list] : doc.items()) {
            VideoEvents v;
            v.video_id = id;
            v.events = detail::parse_interval_list(list, id);
            insert(std::move(v));
        }
    }
    return set;
}

/// Writes the normative layout; videos are emitted in id order.
inline std::string serialize_events(const EventSet& set) {
    nlohmann::json videos = nlohmann::json::array();
    for (const auto& [id, v] : set.videos) {
        nlohmann::json entry;
        entry["video_id"] = id;
        if (v.fps.den == 1)
            entry["fps"] = v.fps.num;
        else
            entry["fps"] = v.fps.value();
        if (v.frame_count) entry["frame_count"] = *v.frame_count;
        nlohmann::json events = nlohmann::json::array();
        for (const auto& e : v.events) events.push_back({{"start_ms", e.start_ms}, {"end_ms", e.end_ms}});
        entry["events"] = std::move(events);
        videos.push_back(std::move(entry));
    }
    return nlohmann::json{{"videos", std::move(videos)}}.dump(2);
}

// ---------------------------------------------------------------------------
// Behaviour labels

enum class Behavior : std::uint8_t { feeding = 0, swimming = 1 };

constexpr std::string_view behavior_name(Behavior b) { return b == Behavior::feeding ? "Feeding" : "Swimming"; }

/// Labels frame f as feeding iff its midpoint timestamp (f + 0.5) / fps lies
/// in some event interval [start_ms, end_ms). Comparisons are exact integer
/// arithmetic on the rational frame rate.
inline std::vector<Behavior> label_frames(const std::vector<EventAnnotation>& events, const VideoMeta& meta) {
    const auto fps = meta.fps;
    if (fps.num <= 0 || fps.den <= 0) throw Error(ErrorKind::domain, "fps must be positive");
    if (meta.frame_count < 1) throw Error(ErrorKind::domain, "frame_count must be >= 1");

    // One frame period of tolerance past the last frame.
    std::string offending;
    for (const auto& e : events) {
        if (e.start_ms < 0 || e.start_ms >= e.end_ms)
            throw Error(ErrorKind::interval, meta.video_id + ": invalid interval");
        if (e.end_ms * fps.num > (meta.frame_count + 1) * 1000 * fps.den) {
            if (!offending.empty()) offending += ", ";
            offending += "[" + std::to_string(e.start_ms) + ", " + std::to_string(e.end_ms) + "]";
        }
    }
    if (!offending.empty())
        throw Error(ErrorKind::out_of_range, meta.video_id + ": events beyond video duration: " + offending);

    const auto merged = merge_events(events);
    std::vector<Behavior> labels(static_cast<std::size_t>(meta.frame_count), Behavior::swimming);
    for (std::int64_t f = 0; f < meta.frame_count; ++f) {
        // midpoint_ms = (2f + 1) * 1000 * den / (2 * num)
        const std::int64_t mid_scaled = (2 * f + 1) * 1000 * fps.den;
        for (const auto& e : merged) {
            if (2 * fps.num * e.start_ms <= mid_scaled && mid_scaled < 2 * fps.num * e.end_ms) {
                labels[static_cast<std::size_t>(f)] = Behavior::feeding;
                break;
            }
        }
    }
    return labels;
}

// ---------------------------------------------------------------------------
// Frame labels and splits

struct FrameLabel {
    std::string image_id;
    bool has_fish = false;
};

/// CSV with one `image_id,label` record per line; label is one of
/// 1/0/fish/nofish. An optional `image_id,has_fish` header line is skipped.
inline std::vector<FrameLabel> parse_frame_labels(std::string_view text) {
    std::vector<FrameLabel> labels;
    std::set<std::string, std::less<>> seen;
    const auto lines = detail::split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const auto line = detail::trim(lines[n]);
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string_view::npos) throw ParseError(n + 1, "expected image_id,label");
        const auto id = detail::trim(line.substr(0, comma));
        const auto value = detail::trim(line.substr(comma + 1));
        if (n == 0 && id == "image_id") continue;
        bool fish = false;
        if (value == "1" || value == "fish")
            fish = true;
        else if (value == "0" || value == "nofish")
            fish = false;
        else
            throw ParseError(n + 1, "unknown label " + std::string(value));
        if (id.empty()) throw ParseError(n + 1, "empty image id");
        if (!seen.emplace(id).second) throw ParseError(n + 1, "duplicate image id " + std::string(id));
        labels.push_back({std::string(id), fish});
    }
    return labels;
}

/// Newline-separated id list; blank lines ignored.
inline std::vector<std::string> parse_manifest(std::string_view text) {
    std::vector<std::string> ids;
    for (auto line : detail::split_lines(text)) {
        line = detail::trim(line);
        if (!line.empty()) ids.emplace_back(line);
    }
    return ids;
}

struct SplitReport {
    std::size_t train_count = 0;
    std::size_t test_count = 0;
    std::vector<std::string> intersection;  // sorted

    bool passed() const { return intersection.empty(); }
};

inline SplitReport validate_split(const std::vector<std::string>& train_ids, const std::vector<std::string>& test_ids) {
    std::set<std::string> train(train_ids.begin(), train_ids.end());
    std::set<std::string> test(test_ids.begin(), test_ids.end());
    SplitReport r{train_ids.size(), test_ids.size(), {}};
    std::set_intersection(train.begin(), train.end(), test.begin(), test.end(), std::back_inserter(r.intersection));
    return r;
}

}  // namespace avr
