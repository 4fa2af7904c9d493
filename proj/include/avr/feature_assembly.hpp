#pragma once

// Per-frame dual-stream feature vectors, 11-frame snippets with behavior
// labels, balanced negative sampling, and the PFEA feature file.
//
// Frame vector layout (default grid 32, width 2104):
//   [0, 54)        detections: class-major, 3 slots x (presence, conf, cx, cy, w, h)
//   [54, 56)       fish-presence probabilities (p_fish, p_nofish)
//   [56, 56+g*g)   horizontal flow channel, g x g row-major
//   [.., +g*g)     vertical flow channel

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "avr/annotations.hpp"
#include "avr/binary_io.hpp"
#include "avr/detection_eval.hpp"
#include "avr/error.hpp"
#include "avr/optical_flow.hpp"
#include "avr/rng.hpp"

namespace avr {

inline constexpr int kSnippetLength = 11;
inline constexpr int kSnippetCenter = 5;
inline constexpr int kDetectionsPerClass = 3;
inline constexpr int kDetectionSlotWidth = 6;
inline constexpr int kDetectionWidth = static_cast<int>(kNumObjectClasses) * kDetectionsPerClass * kDetectionSlotWidth;
inline constexpr int kFishProbWidth = 2;

struct FeatureLayout {
    int flow_grid = 32;

    int det_offset() const { return 0; }
    int probs_offset() const { return kDetectionWidth; }
    int flow_offset() const { return kDetectionWidth + kFishProbWidth; }
    int flow_width() const { return 2 * flow_grid * flow_grid; }
    int width() const { return flow_offset() + flow_width(); }

    /// Inverse of width(); nullopt when no grid produces `width`.
    static std::optional<FeatureLayout> from_width(long width) {
        const long rest = width - kDetectionWidth - kFishProbWidth;
        if (rest <= 0 || rest % 2) return std::nullopt;
        const long g = std::lround(std::sqrt(static_cast<double>(rest / 2)));
        if (g * g * 2 != rest) return std::nullopt;
        return FeatureLayout{static_cast<int>(g)};
    }

    nlohmann::json describe() const {
        const int g2 = flow_grid * flow_grid;
        return {{"width", width()},
                {"flow_grid", flow_grid},
                {"det", {det_offset(), probs_offset()}},
                {"fish_probs", {probs_offset(), flow_offset()}},
                {"flow_horizontal", {flow_offset(), flow_offset() + g2}},
                {"flow_vertical", {flow_offset() + g2, width()}}};
    }

    bool operator==(const FeatureLayout&) const = default;
};

/// Canonical image id of a frame: "<video_id>/<frame, 6 digits>".
inline std::string frame_image_id(std::string_view video_id, std::int64_t frame) {
    char digits[24];
    std::snprintf(digits, sizeof digits, "%06lld", static_cast<long long>(frame));
    return std::string(video_id) + "/" + digits;
}

// ---------------------------------------------------------------------------
// Component encoders

/// Per class, the three most confident detections in descending confidence
/// as (1, conf, cx, cy, w, h); empty slots stay zero. Equal confidences keep
/// input order.
inline std::vector<float> encode_detections(std::span<const Detection> dets) {
    std::vector<float> out(kDetectionWidth, 0.0f);
    std::vector<double> conf(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) conf[i] = dets[i].confidence;
    int filled[kNumObjectClasses] = {0, 0, 0};
    for (std::size_t i : confidence_order(conf)) {
        const auto& d = dets[i];
        const auto c = class_index(d.box.cls);
        if (filled[c] == kDetectionsPerClass) continue;
        float* slot = out.data() + (c * kDetectionsPerClass + filled[c]++) * kDetectionSlotWidth;
        slot[0] = 1.0f;
        slot[1] = static_cast<float>(d.confidence);
        slot[2] = static_cast<float>(d.box.cx);
        slot[3] = static_cast<float>(d.box.cy);
        slot[4] = static_cast<float>(d.box.w);
        slot[5] = static_cast<float>(d.box.h);
    }
    return out;
}

namespace feature_detail {

/// Exact area weights for n source samples onto g cells: cell i spans
/// [i*n/g, (i+1)*n/g). Scaled by g so overlaps are integers; each cell's
/// weights sum to n.
struct AxisWeights {
    std::vector<int> first;                  // first source sample per cell
    std::vector<std::vector<long>> overlap;  // overlap per covered sample
};

inline AxisWeights axis_weights(int n, int g) {
    AxisWeights w;
    for (int i = 0; i < g; ++i) {
        const long lo = static_cast<long>(i) * n, hi = static_cast<long>(i + 1) * n;
        const int p0 = static_cast<int>(lo / g), p1 = static_cast<int>((hi + g - 1) / g);
        w.first.push_back(p0);
        std::vector<long> ov;
        for (int p = p0; p < p1; ++p)
            ov.push_back(std::min(hi, static_cast<long>(p + 1) * g) - std::max(lo, static_cast<long>(p) * g));
        w.overlap.push_back(std::move(ov));
    }
    return w;
}

inline void area_average(const ChannelImage& img, int g, float* out) {
    const auto wx = axis_weights(img.width, g), wy = axis_weights(img.height, g);
    std::vector<double> rows(static_cast<std::size_t>(img.height) * g);
    for (int y = 0; y < img.height; ++y)
        for (int i = 0; i < g; ++i) {
            double s = 0;
            for (std::size_t k = 0; k < wx.overlap[i].size(); ++k)
                s += static_cast<double>(wx.overlap[i][k]) * img(wx.first[i] + static_cast<int>(k), y);
            rows[static_cast<std::size_t>(y) * g + i] = s / img.width;
        }
    for (int j = 0; j < g; ++j)
        for (int i = 0; i < g; ++i) {
            double s = 0;
            for (std::size_t k = 0; k < wy.overlap[j].size(); ++k)
                s += static_cast<double>(wy.overlap[j][k]) * rows[(wy.first[j] + k) * g + i];
            out[static_cast<std::size_t>(j) * g + i] = static_cast<float>(s / img.height);
        }
}

}  // namespace feature_detail

/// Area-averages both normalized channels onto a g x g grid; horizontal
/// channel first, each row-major.
inline std::vector<float> encode_flow(const FlowChannels& ch, int grid = 32) {
    const auto& h = ch.horizontal;
    if (!ch.vertical.same_shape(h.width, h.height)) throw Error(ErrorKind::shape, "flow channels differ in size");
    if (h.width < grid || h.height < grid)
        throw Error(ErrorKind::size, "flow image " + std::to_string(h.width) + "x" + std::to_string(h.height) +
                                         " is smaller than the " + std::to_string(grid) + "x" +
                                         std::to_string(grid) + " grid");
    std::vector<float> out(static_cast<std::size_t>(2) * grid * grid);
    feature_detail::area_average(h, grid, out.data());
    feature_detail::area_average(ch.vertical, grid, out.data() + static_cast<std::size_t>(grid) * grid);
    return out;
}

/// Flow component for a frame with no predecessor: zero motion everywhere.
inline std::vector<float> zero_motion_flow(const FeatureLayout& layout = {}) {
    return std::vector<float>(static_cast<std::size_t>(layout.flow_width()), 0.5f);
}

struct FishProbs {
    double p_fish = 0.5;
    double p_nofish = 0.5;
};

struct FrameFeature {
    std::string video_id;
    std::int64_t frame_index = 0;
    std::vector<float> values;

    bool operator==(const FrameFeature&) const = default;
};

inline FrameFeature assemble_frame_feature(std::span<const float> det_vec, const FishProbs& probs,
                                           std::span<const float> flow_vec, std::string video_id,
                                           std::int64_t frame_index, const FeatureLayout& layout = {}) {
    auto mismatch = [](const char* what, std::size_t got, long want) {
        return Error(ErrorKind::shape, std::string(what) + " has width " + std::to_string(got) + ", expected " +
                                           std::to_string(want));
    };
    if (det_vec.size() != kDetectionWidth) throw mismatch("detection vector", det_vec.size(), kDetectionWidth);
    if (flow_vec.size() != static_cast<std::size_t>(layout.flow_width()))
        throw mismatch("flow vector", flow_vec.size(), layout.flow_width());
    FrameFeature f{std::move(video_id), frame_index, {}};
    f.values.reserve(static_cast<std::size_t>(layout.width()));
    f.values.insert(f.values.end(), det_vec.begin(), det_vec.end());
    f.values.push_back(static_cast<float>(probs.p_fish));
    f.values.push_back(static_cast<float>(probs.p_nofish));
    f.values.insert(f.values.end(), flow_vec.begin(), flow_vec.end());
    for (std::size_t i = 0; i < f.values.size(); ++i)
        if (!(f.values[i] >= 0.0f && f.values[i] <= 1.0f))
            throw Error(ErrorKind::range, frame_image_id(f.video_id, frame_index) + ": feature " +
                                              std::to_string(i) + " = " + format_number(f.values[i]) +
                                              " outside [0,1]");
    return f;
}

// ---------------------------------------------------------------------------
// Per-video storage and snippets

/// Gapless run of frame features for one video, stored row-major.
struct VideoFeatures {
    std::string video_id;
    FeatureLayout layout;
    std::int64_t first_frame = 0;
    std::vector<float> data;

    std::int64_t frame_count() const { return static_cast<std::int64_t>(data.size()) / layout.width(); }

    std::span<const float> row(std::int64_t i) const {
        return {data.data() + i * layout.width(), static_cast<std::size_t>(layout.width())};
    }

    /// Appends the next consecutive frame.
    void append(const FrameFeature& f) {
        if (f.video_id != video_id) throw Error(ErrorKind::state, "feature of " + f.video_id + " added to " + video_id);
        if (f.values.size() != static_cast<std::size_t>(layout.width()))
            throw Error(ErrorKind::shape, "feature width " + std::to_string(f.values.size()) + " != " +
                                              std::to_string(layout.width()));
        if (data.empty()) first_frame = f.frame_index;
        else if (f.frame_index != first_frame + frame_count())
            throw Error(ErrorKind::gap, video_id + ": expected frame " + std::to_string(first_frame + frame_count()) +
                                            ", got " + std::to_string(f.frame_index));
        data.insert(data.end(), f.values.begin(), f.values.end());
    }

    bool operator==(const VideoFeatures&) const = default;
};

/// Eleven consecutive frames of one video. Shares the video's storage.
struct Snippet {
    std::shared_ptr<const VideoFeatures> video;
    std::int64_t start = 0;  // row offset of the first frame
    Behavior label = Behavior::swimming;

    std::int64_t first_frame() const { return video->first_frame + start; }
    std::int64_t center_frame() const { return first_frame() + kSnippetCenter; }
    std::span<const float> frame(int k) const { return video->row(start + k); }
    int width() const { return video->layout.width(); }
};

/// Sliding windows fully inside the video; each takes its center frame's
/// label. `labels[i]` is the label of row i. Videos shorter than a snippet
/// yield nothing and append a warning.
inline std::vector<Snippet> window_snippets(const std::shared_ptr<const VideoFeatures>& video,
                                            std::span<const Behavior> labels, int stride,
                                            std::vector<std::string>* warnings = nullptr) {
    if (stride < 1) throw Error(ErrorKind::config, "snippet stride must be >= 1");
    const auto n = video->frame_count();
    if (static_cast<std::int64_t>(labels.size()) != n)
        throw Error(ErrorKind::shape, video->video_id + ": " + std::to_string(labels.size()) + " labels for " +
                                          std::to_string(n) + " frames");
    std::vector<Snippet> out;
    if (n < kSnippetLength) {
        if (warnings)
            warnings->push_back(video->video_id + ": " + std::to_string(n) + " frames, shorter than a snippet; skipped");
        return out;
    }
    for (std::int64_t s = 0; s + kSnippetLength <= n; s += stride)
        out.push_back({video, s, labels[static_cast<std::size_t>(s + kSnippetCenter)]});
    return out;
}

/// All feeding snippets plus an equal number of swimming snippets drawn
/// without replacement, shuffled; both draws come from one stream seeded by
/// `seed`. A swimming window is eligible only if it shares no frame with any
/// feeding window of the same video.
inline std::vector<Snippet> balanced_sample(std::span<const Snippet> snippets, std::uint64_t seed) {
    std::vector<Snippet> feeding;
    std::map<const VideoFeatures*, std::vector<std::int64_t>> feeding_starts;
    for (const auto& s : snippets)
        if (s.label == Behavior::feeding) {
            feeding.push_back(s);
            feeding_starts[s.video.get()].push_back(s.start);
        }
    if (feeding.empty()) throw Error(ErrorKind::balance, "no feeding snippets to balance against");
    for (auto& [v, starts] : feeding_starts) std::sort(starts.begin(), starts.end());

    std::vector<Snippet> eligible;
    std::size_t swimming = 0;
    for (const auto& s : snippets) {
        if (s.label != Behavior::swimming) continue;
        ++swimming;
        bool clear = true;
        if (auto it = feeding_starts.find(s.video.get()); it != feeding_starts.end()) {
            // Windows [a, a+L) and [b, b+L) intersect iff |a - b| < L.
            const auto& starts = it->second;
            auto lo = std::lower_bound(starts.begin(), starts.end(), s.start - kSnippetLength + 1);
            clear = lo == starts.end() || *lo >= s.start + kSnippetLength;
        }
        if (clear) eligible.push_back(s);
    }
    if (eligible.size() < feeding.size())
        throw Error(ErrorKind::balance, std::to_string(feeding.size()) + " feeding snippets but only " +
                                            std::to_string(eligible.size()) + " eligible swimming snippets (" +
                                            std::to_string(swimming) + " swimming in total)");

    Rng rng(seed);
    // Partial Fisher-Yates: the first feeding.size() entries are the draw.
    for (std::size_t i = 0; i < feeding.size(); ++i)
        std::swap(eligible[i], eligible[i + rng.uniform_index(eligible.size() - i)]);
    std::vector<Snippet> out = feeding;
    out.insert(out.end(), eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(feeding.size()));
    rng.shuffle(out);
    return out;
}

// ---------------------------------------------------------------------------
// PFEA feature file: "PFEA", u32 version, u32 frame_count, u32 width, then
// frame_count x width float32 row-major, all little-endian. The JSON sidecar
// carries the video id, frame range and component offsets.

inline constexpr std::uint32_t kFeatureFileVersion = 1;

inline Bytes encode_feature_file(const VideoFeatures& v) {
    ByteWriter w;
    w.magic("PFEA");
    w.u32(kFeatureFileVersion);
    w.u32(static_cast<std::uint32_t>(v.frame_count()));
    w.u32(static_cast<std::uint32_t>(v.layout.width()));
    for (float x : v.data) w.f32(x);
    return std::move(w).bytes();
}

inline nlohmann::json feature_sidecar(const VideoFeatures& v) {
    return {{"format", "PFEA"},
            {"version", kFeatureFileVersion},
            {"video_id", v.video_id},
            {"first_frame", v.first_frame},
            {"last_frame", v.first_frame + v.frame_count() - 1},
            {"frame_count", v.frame_count()},
            {"layout", v.layout.describe()}};
}

/// Decodes a feature file; the sidecar, when given, supplies the video id and
/// first frame and must agree with the header.
inline VideoFeatures decode_feature_file(std::span<const std::uint8_t> bytes,
                                         const nlohmann::json* sidecar = nullptr) {
    ByteReader r(bytes);
    r.expect_magic("PFEA");
    if (const auto version = r.u32(); version != kFeatureFileVersion)
        throw Error(ErrorKind::version, "feature file version " + std::to_string(version) + ", expected " +
                                            std::to_string(kFeatureFileVersion));
    const auto frames = r.u32();
    const auto width = r.u32();
    const auto layout = FeatureLayout::from_width(width);
    if (!layout) throw Error(ErrorKind::version, "feature width " + std::to_string(width) + " matches no layout");
    if (r.remaining() / 4 / width < frames) throw Error(ErrorKind::parse, "truncated feature data");
    VideoFeatures v;
    v.layout = *layout;
    v.data.resize(static_cast<std::size_t>(frames) * width);
    for (auto& x : v.data) x = r.f32();
    r.expect_end();
    if (sidecar) {
        try {
            v.video_id = sidecar->at("video_id").get<std::string>();
            v.first_frame = sidecar->at("first_frame").get<std::int64_t>();
            if (sidecar->at("frame_count").get<std::int64_t>() != frames ||
                sidecar->at("layout").at("width").get<long>() != static_cast<long>(width))
                throw Error(ErrorKind::version, "feature sidecar disagrees with file header");
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::schema, std::string("feature sidecar: ") + e.what());
        }
    }
    return v;
}

// ---------------------------------------------------------------------------
// Fish-probability ingest: {"frames": [{"image_id", "p_fish", "p_nofish"}]}

inline constexpr double kProbSumTolerance = 1e-6;

inline std::map<std::string, FishProbs> parse_fish_probs_json(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::schema, std::string("invalid fish-probs JSON: ") + e.what());
    }
    const auto& frames = detail::require(doc, "frames", "fish-probs");
    if (!frames.is_array()) throw Error(ErrorKind::schema, "fish-probs: frames must be an array");
    std::map<std::string, FishProbs> out;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const std::string where = "frames[" + std::to_string(i) + "]";
        const auto& id = detail::require(frames[i], "image_id", where);
        if (!id.is_string()) throw Error(ErrorKind::schema, where + ": image_id must be a string");
        auto number = [&](const char* key) {
            const auto& v = detail::require(frames[i], key, where);
            if (!v.is_number()) throw Error(ErrorKind::schema, where + ": " + key + " must be a number");
            return v.get<double>();
        };
        const FishProbs p{number("p_fish"), number("p_nofish")};
        if (!(p.p_fish >= 0 && p.p_fish <= 1 && p.p_nofish >= 0 && p.p_nofish <= 1) ||
            !(std::abs(p.p_fish + p.p_nofish - 1.0) <= kProbSumTolerance))
            throw Error(ErrorKind::range, where + ": probabilities must lie in [0,1] and sum to 1");
        if (!out.emplace(id.get<std::string>(), p).second)
            throw Error(ErrorKind::schema, "duplicate image_id " + id.get<std::string>());
    }
    return out;
}

inline std::string serialize_fish_probs_json(const std::map<std::string, FishProbs>& probs) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& [id, p] : probs) frames.push_back({{"image_id", id}, {"p_fish", p.p_fish}, {"p_nofish", p.p_nofish}});
    return nlohmann::json{{"frames", std::move(frames)}}.dump(2);
}

}  // namespace avr
