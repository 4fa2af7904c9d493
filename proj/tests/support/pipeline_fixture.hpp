#pragma once

// A small on-disk dataset for pipeline tests: textured PNG frames drifting
// sideways, per-frame detections and fish probabilities, and one feeding
// event per video. Feeding frames carry a confident fish box, p_fish = 0.9,
// and a faster drift.

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "avr/config.hpp"
#include "avr/detection_eval.hpp"
#include "avr/feature_assembly.hpp"
#include "avr/png_io.hpp"

namespace avr::testing {

namespace fs = std::filesystem;

/// Fresh empty directory under the system temp dir.
inline fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("avr_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct MockVideo {
    std::string id;
    int frames = 90;
    int event_begin = 40;  // feeding frames [event_begin, event_end)
    int event_end = 46;

    bool feeding(int f) const { return f >= event_begin && f < event_end; }
};

inline std::vector<MockVideo> default_videos(int count = 4) {
    std::vector<MockVideo> out;
    for (int i = 0; i < count; ++i) out.push_back({"vid" + std::to_string(i)});
    return out;
}

/// Smooth texture sampled at (x - dx, y).
inline GrayImage textured_frame(int w, int h, double dx, int seed) {
    GrayImage img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = x - dx;
            img(x, y) = static_cast<float>(0.5 + 0.2 * std::sin(0.7 * u + seed) * std::cos(0.5 * y) +
                                           0.15 * std::sin(0.31 * u + 0.43 * y + 2.0 * seed));
        }
    return img;
}

inline double drift(const MockVideo& v, int f) {
    double dx = 0;
    for (int k = 1; k <= f; ++k) dx += v.feeding(k) ? 2.0 : 0.5;
    return dx;
}

struct MockDataset {
    fs::path root;
    PipelineConfig config;
    std::vector<MockVideo> videos;
};

inline void write_frames(const fs::path& frames_dir, const MockVideo& v, int seed, int w = 32, int h = 24) {
    for (int f = 0; f < v.frames; ++f) {
        const auto id = frame_image_id(v.id, f);
        write_png_gray(frames_dir / (id + ".png"), textured_frame(w, h, drift(v, f), seed));
    }
}

/// Writes frames, detections, fish probabilities, events and manifests, and
/// returns a config pointing at them with fast flow and a tiny model.
inline MockDataset make_dataset(const fs::path& root, std::vector<MockVideo> videos = default_videos()) {
    MockDataset ds{root, {}, videos};
    auto& c = ds.config;
    c.paths.frames_dir = (root / "frames").string();
    c.paths.detections = (root / "detections.json").string();
    c.paths.fish_probs = (root / "fish_probs.json").string();
    c.paths.events = (root / "events.json").string();
    c.paths.output_dir = (root / "out").string();
    c.flow.n_scales = 2;
    c.flow.n_warps = 2;
    c.flow.max_iters = 40;
    c.features.flow_grid = 4;
    c.model.num_layers = 1;
    c.model.hidden_size = 8;
    c.train.epochs = 2;
    c.train.learning_rate = 0.01;
    c.train.seed = 3;

    DetectionSet dets;
    std::map<std::string, FishProbs> probs;
    EventSet events;
    for (std::size_t i = 0; i < videos.size(); ++i) {
        const auto& v = videos[i];
        write_frames(root / "frames", v, static_cast<int>(i));
        for (int f = 0; f < v.frames; ++f) {
            const auto id = frame_image_id(v.id, f);
            std::vector<Detection> d{{id, {ObjectClass::penguin, 0.5, 0.5, 0.3, 0.4}, 0.95}};
            if (v.feeding(f)) d.push_back({id, {ObjectClass::fish, 0.45, 0.4, 0.1, 0.05}, 0.9});
            dets.image_ids.push_back(id);
            dets.by_image[id] = d;
            probs[id] = v.feeding(f) ? FishProbs{0.9, 0.1} : FishProbs{0.1, 0.9};
        }
        // Millisecond bounds whose frame midpoints select exactly [begin, end).
        events.videos[v.id] = {v.id, FrameRate{30, 1}, v.frames,
                               {{v.id, v.event_begin * 1000 / 30, v.event_end * 1000 / 30}}};
    }
    write_text_file(c.paths.detections, serialize_detections_json(dets));
    write_text_file(c.paths.fish_probs, serialize_fish_probs_json(probs));
    write_text_file(c.paths.events, serialize_events(events));
    return ds;
}

}  // namespace avr::testing
