#pragma once

// Batch pipeline subcommands. Each command reads its inputs from the config,
// writes its artifacts under paths.output_dir, and returns a JSON summary.
// Outputs depend only on inputs and config, so reruns are byte-identical.
//
// Output tree:
//   flow/<video>/<frame>.pflw     flow from frame-1 to frame
//   flow/manifest.json
//   features/<video>.pfea (+ .json sidecar)
//   models/lstm_<L>x<H>.plsm (+ _history.csv), layout_comparison.{csv,json}
//   reports/behavior_eval.{csv,json}, detection_eval.{csv,json},
//           fish_classifier.{csv,json}

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "avr/annotations.hpp"
#include "avr/binary_io.hpp"
#include "avr/config.hpp"
#include "avr/detection_eval.hpp"
#include "avr/error.hpp"
#include "avr/feature_assembly.hpp"
#include "avr/lstm.hpp"
#include "avr/optical_flow.hpp"
#include "avr/png_io.hpp"
#include "avr/rng.hpp"

namespace avr {

namespace fs = std::filesystem;
using nlohmann::json;

/// Reads a config file, applies AVR_* environment overrides, and resolves
/// relative paths against the file's directory.
inline PipelineConfig load_config(const fs::path& path,
                                  const std::function<const char*(const char*)>& getenv = [](const char* n) {
                                      return std::getenv(n);
                                  }) {
    auto c = parse_config(read_text_file(path));
    apply_env_overrides(c, getenv);
    const auto base = path.parent_path();
    visit_fields(c, [&](const std::string& key, auto& field) {
        if constexpr (std::is_same_v<std::decay_t<decltype(field)>, std::string>) {
            if (key.starts_with("paths.") && !field.empty() && fs::path(field).is_relative())
                field = (base / field).lexically_normal().string();
        }
    });
    return c;
}

struct RunOptions {
    bool force = false;
    std::vector<std::string>* warnings = nullptr;

    void warn(std::string message) const {
        if (warnings) warnings->push_back(std::move(message));
    }
};

namespace pipeline_detail {

inline fs::path out_dir(const PipelineConfig& c, const char* sub) { return fs::path(c.paths.output_dir) / sub; }

inline std::string frame_name(std::int64_t frame) {
    const auto id = frame_image_id("", frame);
    return id.substr(id.find('/') + 1);
}

inline void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path, ErrorKind kind) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw Error(kind, path.string() + ": " + e.what());
    }
}

/// "a, b, c" with at most `limit` items named.
inline std::string id_list(const std::vector<std::string>& ids, std::size_t limit = 20) {
    std::string out;
    for (std::size_t i = 0; i < ids.size() && i < limit; ++i) out += (i ? ", " : "") + ids[i];
    if (ids.size() > limit) out += " (+" + std::to_string(ids.size() - limit) + " more)";
    return out;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The error of the
/// lowest failing index is rethrown, so failures are reported
/// deterministically.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct FrameSequence {
    std::string video_id;
    std::vector<fs::path> frames;  // frames[i] is frame i
};

/// Per-video frame lists from <frames_dir>/<video>/<6-digit index>.png.
/// Indices must run 0..n-1 without holes.
inline std::vector<FrameSequence> scan_frames(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::io, "frames directory not found: " + dir.string());
    static const std::regex name(R"(\d{6}\.png)");
    std::vector<FrameSequence> out;
    std::vector<fs::path> videos;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) videos.push_back(e.path());
    std::sort(videos.begin(), videos.end());
    for (const auto& v : videos) {
        std::map<std::int64_t, fs::path> by_index;
        for (const auto& e : fs::directory_iterator(v)) {
            const auto file = e.path().filename().string();
            if (e.is_regular_file() && std::regex_match(file, name)) by_index.emplace(std::stoll(file.substr(0, 6)), e.path());
        }
        if (by_index.empty()) continue;
        FrameSequence seq{v.filename().string(), {}};
        for (const auto& [index, path] : by_index) {
            const auto expected = static_cast<std::int64_t>(seq.frames.size());
            if (index != expected)
                throw Error(ErrorKind::gap, "video " + seq.video_id + ": missing frame " + std::to_string(expected) +
                                                " (" + (v / (frame_name(expected) + ".png")).string() + ")");
            seq.frames.push_back(path);
        }
        out.push_back(std::move(seq));
    }
    return out;
}

inline json flow_params_json(const TvL1Params& p) {
    return {{"lambda", p.lambda}, {"theta", p.theta},       {"tau", p.tau},           {"n_scales", p.n_scales},
            {"zoom", p.zoom},     {"n_warps", p.n_warps},   {"max_iters", p.max_iters}, {"stop_eps", p.stop_eps}};
}

inline GrayImage read_gray(const fs::path& path) { return to_gray(read_png(path)); }

/// Splits "<video>/<6 digits>" into its parts.
inline std::optional<std::pair<std::string, std::int64_t>> split_image_id(std::string_view id) {
    const auto slash = id.rfind('/');
    if (slash == std::string_view::npos || slash == 0 || id.size() - slash != 7) return std::nullopt;
    std::int64_t frame = 0;
    for (char ch : id.substr(slash + 1)) {
        if (ch < '0' || ch > '9') return std::nullopt;
        frame = frame * 10 + (ch - '0');
    }
    return std::pair{std::string(id.substr(0, slash)), frame};
}

inline std::shared_ptr<const VideoFeatures> load_features(const fs::path& dir, const std::string& video_id) {
    const auto bin = dir / (video_id + ".pfea");
    const auto side = dir / (video_id + ".json");
    if (!fs::exists(bin)) throw Error(ErrorKind::coverage, "no feature file for video " + video_id + " (" + bin.string() + ")");
    const auto sidecar = read_json(side, ErrorKind::schema);
    auto v = std::make_shared<VideoFeatures>(decode_feature_file(read_file(bin), &sidecar));
    if (v->video_id != video_id)
        throw Error(ErrorKind::schema, side.string() + ": video_id " + v->video_id + " != " + video_id);
    return v;
}

/// Ids of every video with a feature file, sorted.
inline std::vector<std::string> feature_videos(const fs::path& dir) {
    std::vector<std::string> ids;
    if (fs::is_directory(dir))
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".pfea") ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
    return ids;
}

inline std::vector<std::string> read_manifest(const std::string& path) { return parse_manifest(read_text_file(path)); }

/// Per-row behaviour labels of a feature run. Videos absent from the event
/// file have no feeding events.
inline std::vector<Behavior> feature_labels(const VideoFeatures& v, const EventSet& events, const RunOptions& opt) {
    const auto end_frame = v.first_frame + v.frame_count();
    VideoEvents ev{v.video_id, {}, std::nullopt, {}};
    if (auto it = events.videos.find(v.video_id); it != events.videos.end()) ev = it->second;
    else opt.warn("video " + v.video_id + " has no event entry; all frames labelled Swimming");
    const auto meta = ev.meta(end_frame);
    if (meta.frame_count < end_frame)
        throw Error(ErrorKind::coverage, "video " + v.video_id + ": features reach frame " + std::to_string(end_frame - 1) +
                                             " but frame_count is " + std::to_string(meta.frame_count));
    const auto all = label_frames(ev.events, meta);
    return {all.begin() + v.first_frame, all.begin() + end_frame};
}

inline std::string model_stem(const LstmLayout& l) {
    return "lstm_" + std::to_string(l.num_layers) + "x" + std::to_string(l.hidden_size);
}

inline json accuracy_json(const BehaviorAccuracy& a) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"feeding", opt(a.feeding)}, {"swimming", opt(a.swimming)}, {"average", a.average}};
}

inline std::vector<std::string> sorted_keys(const auto& map) {
    std::vector<std::string> out;
    for (const auto& [k, v] : map) out.push_back(k);
    return out;
}

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------
// extract-flow

inline constexpr const char* kFlowManifest = "manifest.json";

/// TV-L1 flow for every adjacent frame pair. Existing flow files are kept
/// unless `force` is set or the recorded flow parameters differ.
inline json cmd_extract_flow(const PipelineConfig& c, const RunOptions& opt = {}) {
    using namespace pipeline_detail;
    c.flow.validate();
    const auto videos = scan_frames(c.paths.frames_dir);
    const auto flow_dir = out_dir(c, "flow");
    const auto manifest_path = flow_dir / kFlowManifest;
    const auto params = flow_params_json(c.flow);

    bool reuse = !opt.force;
    if (reuse && fs::exists(manifest_path)) {
        const auto previous = read_json(manifest_path, ErrorKind::schema);
        if (!previous.contains("params") || previous.at("params") != params) {
            opt.warn("flow parameters changed since the last run; recomputing all pairs");
            reuse = false;
        }
    }

    struct Pair {
        std::size_t video;
        std::size_t frame;  // target frame, >= 1
    };
    std::vector<Pair> todo;
    std::size_t pairs = 0;
    for (std::size_t v = 0; v < videos.size(); ++v)
        for (std::size_t f = 1; f < videos[v].frames.size(); ++f) {
            ++pairs;
            const auto out = flow_dir / videos[v].video_id / (frame_name(static_cast<std::int64_t>(f)) + ".pflw");
            if (!reuse || !fs::exists(out)) todo.push_back({v, f});
        }

    parallel_for(todo.size(), c.jobs, [&](std::size_t i) {
        const auto& seq = videos[todo[i].video];
        const auto f = todo[i].frame;
        const auto prev = read_gray(seq.frames[f - 1]);
        const auto next = read_gray(seq.frames[f]);
        if (!prev.same_shape(next.width, next.height))
            throw Error(ErrorKind::shape, seq.frames[f].string() + ": frame size differs from the previous frame");
        const auto flow = tvl1_flow(prev, next, c.flow);
        write_file(flow_dir / seq.video_id / (frame_name(static_cast<std::int64_t>(f)) + ".pflw"), encode_flow_file(flow));
    });

    json entries = json::array();
    for (const auto& seq : videos) {
        const auto first = read_gray(seq.frames.front());
        entries.push_back({{"video_id", seq.video_id},
                           {"frame_count", seq.frames.size()},
                           {"width", first.width},
                           {"height", first.height}});
    }
    write_json(manifest_path, {{"format", "PFLW"}, {"params", params}, {"videos", entries}});
    return {{"command", "extract-flow"},
            {"videos", videos.size()},
            {"pairs", pairs},
            {"computed", todo.size()},
            {"skipped", pairs - todo.size()},
            {"manifest", manifest_path.string()}};
}

// ---------------------------------------------------------------------------
// assemble

/// Joins detections, fish probabilities and flow per frame into one feature
/// file per video. Every frame named by any input must be present in all of
/// them. Frame 0 of each video gets zero-motion flow.
inline json cmd_assemble(const PipelineConfig& c, const RunOptions& = {}) {
    using namespace pipeline_detail;
    const auto flow_dir = out_dir(c, "flow");
    const auto manifest_path = flow_dir / kFlowManifest;
    if (!fs::exists(manifest_path))
        throw Error(ErrorKind::coverage, "flow manifest not found: " + manifest_path.string() + " (run extract-flow)");
    const auto manifest = read_json(manifest_path, ErrorKind::schema);
    const auto dets = parse_detections_json(read_text_file(c.paths.detections), c.classes);
    const auto probs = parse_fish_probs_json(read_text_file(c.paths.fish_probs));
    const FeatureLayout layout = c.feature_layout();

    std::vector<std::pair<std::string, std::int64_t>> videos;
    std::set<std::string> frame_ids;
    try {
        for (const auto& v : manifest.at("videos")) {
            videos.emplace_back(v.at("video_id").get<std::string>(), v.at("frame_count").get<std::int64_t>());
            for (std::int64_t f = 0; f < videos.back().second; ++f) frame_ids.insert(frame_image_id(videos.back().first, f));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::schema, manifest_path.string() + ": " + e.what());
    }

    std::vector<std::string> problems;
    auto compare = [&](const std::set<std::string>& have, const char* name) {
        std::vector<std::string> missing, extra;
        std::set_difference(frame_ids.begin(), frame_ids.end(), have.begin(), have.end(), std::back_inserter(missing));
        std::set_difference(have.begin(), have.end(), frame_ids.begin(), frame_ids.end(), std::back_inserter(extra));
        if (!missing.empty()) problems.push_back(std::string(name) + " missing: " + id_list(missing));
        if (!extra.empty()) problems.push_back(std::string(name) + " without frames: " + id_list(extra));
    };
    compare({dets.image_ids.begin(), dets.image_ids.end()}, "detections");
    const auto prob_ids = sorted_keys(probs);
    compare({prob_ids.begin(), prob_ids.end()}, "fish-probs");
    if (!problems.empty()) {
        std::string msg;
        for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
        throw Error(ErrorKind::join, msg);
    }

    const auto feature_dir = out_dir(c, "features");
    std::vector<std::int64_t> counts(videos.size());
    parallel_for(videos.size(), c.jobs, [&](std::size_t i) {
        const auto& [video_id, frame_count] = videos[i];
        VideoFeatures vf{video_id, layout, 0, {}};
        vf.data.reserve(static_cast<std::size_t>(frame_count * layout.width()));
        for (std::int64_t f = 0; f < frame_count; ++f) {
            const auto id = frame_image_id(video_id, f);
            const auto det_vec = encode_detections(dets.by_image.at(id));
            const auto flow_vec =
                f == 0 ? zero_motion_flow(layout)
                       : encode_flow(normalize_flow(decode_flow_file(read_file(flow_dir / video_id / (frame_name(f) + ".pflw"))),
                                                    c.features.max_disp),
                                     layout.flow_grid);
            vf.append(assemble_frame_feature(det_vec, probs.at(id), flow_vec, video_id, f, layout));
        }
        write_file(feature_dir / (video_id + ".pfea"), encode_feature_file(vf));
        write_json(feature_dir / (video_id + ".json"), feature_sidecar(vf));
        counts[i] = vf.frame_count();
    });

    json list = json::array();
    std::int64_t total = 0;
    for (std::size_t i = 0; i < videos.size(); ++i) {
        list.push_back({{"video_id", videos[i].first}, {"frame_count", counts[i]}});
        total += counts[i];
    }
    return {{"command", "assemble"}, {"videos", list}, {"frames", total}, {"width", layout.width()}};
}

// ---------------------------------------------------------------------------
// train

inline const std::vector<LstmLayout>& sweep_layouts() {
    static const std::vector<LstmLayout> layouts{{1, 512}, {2, 512}, {2, 256}, {2, 128}};
    return layouts;
}

struct TrainOptions {
    bool sweep = false;
};

/// Labels frames, windows snippets (every feeding window; swimming windows
/// whose start is a multiple of features.negative_stride), balances, and
/// trains. A seeded share of the training videos is held out for the pocket
/// rule. All randomness derives from train.seed.
inline json cmd_train(const PipelineConfig& c, const RunOptions& opt = {}, const TrainOptions& topt = {}) {
    using namespace pipeline_detail;
    c.validate();
    const auto feature_dir = out_dir(c, "features");
    const auto events = parse_events(read_text_file(c.paths.events));

    std::vector<std::string> ids;
    if (!c.paths.train_videos.empty()) {
        ids = read_manifest(c.paths.train_videos);
    } else {
        std::set<std::string> test;
        if (!c.paths.test_videos.empty())
            for (auto& id : read_manifest(c.paths.test_videos)) test.insert(id);
        for (auto& id : feature_videos(feature_dir))
            if (!test.contains(id)) ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.empty()) throw Error(ErrorKind::coverage, "no training videos");

    Rng rng(c.train.seed);
    std::vector<std::string> order = ids;
    rng.shuffle(order);
    std::size_t n_val = 0;
    if (order.size() >= 2)
        n_val = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::lround(c.model.validation_fraction * static_cast<double>(order.size()))), 1,
            order.size() - 1);
    else
        opt.warn("single training video; validation uses its own windows");
    const std::set<std::string> val_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));

    std::vector<Snippet> pool, validation;
    std::vector<std::string> warnings;
    int width = -1;
    for (const auto& id : ids) {
        const auto v = load_features(feature_dir, id);
        if (width < 0) width = v->layout.width();
        if (v->layout.width() != width)
            throw Error(ErrorKind::shape, "video " + id + ": feature width " + std::to_string(v->layout.width()) +
                                              " differs from " + std::to_string(width));
        const auto labels = feature_labels(*v, events, opt);
        const bool held_out = val_ids.contains(id);
        for (const auto& s : window_snippets(v, labels, 1, &warnings)) {
            if (held_out || n_val == 0) {
                if (s.start % c.features.eval_stride == 0) validation.push_back(s);
                if (held_out) continue;
            }
            if (s.label == Behavior::feeding || s.start % c.features.negative_stride == 0) pool.push_back(s);
        }
    }
    for (auto& w : warnings) opt.warn(std::move(w));
    const auto balanced = balanced_sample(pool, rng.next_u64());
    TrainConfig cfg = c.train;
    cfg.seed = rng.next_u64();

    std::vector<LstmLayout> layouts;
    if (topt.sweep) layouts = sweep_layouts();
    else layouts = {c.lstm_layout()};
    for (auto& l : layouts) l.input_width = width;

    const auto model_dir = out_dir(c, "models");
    std::vector<std::pair<LstmLayout, BehaviorAccuracy>> rows;
    json runs = json::array();
    for (const auto& layout : layouts) {
        const auto result = train(layout, cfg, balanced, validation);
        const auto stem = model_stem(layout);
        write_file(model_dir / (stem + ".plsm"), encode_checkpoint(result.model));
        write_text_file(model_dir / (stem + "_history.csv"), history_csv(result.history));
        const auto best = result.history.at(static_cast<std::size_t>(result.best_epoch - 1)).validation;
        rows.emplace_back(layout, best);
        runs.push_back({{"layout", layout.name()},
                        {"num_layers", layout.num_layers},
                        {"hidden_size", layout.hidden_size},
                        {"checkpoint", (model_dir / (stem + ".plsm")).string()},
                        {"best_epoch", result.best_epoch},
                        {"epochs_run", result.history.size()},
                        {"validation", accuracy_json(best)}});
    }
    if (topt.sweep) {
        write_text_file(model_dir / "layout_comparison.csv", layout_comparison_csv(rows));
        write_json(model_dir / "layout_comparison.json", runs);
    }
    std::size_t feeding = 0;
    for (const auto& s : balanced) feeding += s.label == Behavior::feeding;
    return {{"command", "train"},
            {"train_videos", ids.size() - n_val},
            {"validation_videos", n_val},
            {"train_snippets", balanced.size()},
            {"train_feeding", feeding},
            {"validation_snippets", validation.size()},
            {"runs", runs}};
}

// ---------------------------------------------------------------------------
// eval

/// Behaviour accuracy of a checkpoint on the test videos (paths.test_videos,
/// or every featured video when unset), over windows at features.eval_stride.
inline json cmd_eval(const PipelineConfig& c, const fs::path& checkpoint, const RunOptions& opt = {}) {
    using namespace pipeline_detail;
    const auto model = decode_checkpoint(read_file(checkpoint));
    const auto feature_dir = out_dir(c, "features");
    const auto events = parse_events(read_text_file(c.paths.events));
    std::vector<std::string> ids;
    if (!c.paths.test_videos.empty()) {
        ids = read_manifest(c.paths.test_videos);
    } else {
        ids = feature_videos(feature_dir);
        opt.warn("paths.test_videos unset; evaluating on every featured video");
    }
    if (ids.empty()) throw Error(ErrorKind::coverage, "no test videos");

    std::vector<Snippet> snippets;
    std::vector<std::string> warnings;
    for (const auto& id : ids) {
        const auto v = load_features(feature_dir, id);
        if (v->layout.width() != model.layout.input_width)
            throw Error(ErrorKind::version, "video " + id + ": feature width " + std::to_string(v->layout.width()) +
                                                " != checkpoint input width " + std::to_string(model.layout.input_width));
        for (const auto& s : window_snippets(v, feature_labels(*v, events, opt), c.features.eval_stride, &warnings))
            snippets.push_back(s);
    }
    if (snippets.empty()) throw Error(ErrorKind::coverage, "test videos yield no snippets");
    const auto acc = evaluate_behavior(model, snippets, &warnings);
    for (auto& w : warnings) opt.warn(std::move(w));

    const auto reports = out_dir(c, "reports");
    write_text_file(reports / "behavior_eval.csv", layout_comparison_csv({{model.layout, acc}}));
    json report = {{"layout", model.layout.name()},
                   {"num_layers", model.layout.num_layers},
                   {"hidden_size", model.layout.hidden_size},
                   {"snippets", snippets.size()},
                   {"videos", ids},
                   {"accuracy", accuracy_json(acc)}};
    write_json(reports / "behavior_eval.json", report);
    report["command"] = "eval";
    return report;
}

// ---------------------------------------------------------------------------
// eval-detections

/// Detection metrics against YOLO label files for the images of
/// paths.box_test_manifest (every label file when unset). An image without a
/// label file has no objects. When paths.frame_labels_test is set the
/// whole-frame classifier (argmax of the fish probabilities) is scored too.
inline json cmd_eval_detections(const PipelineConfig& c, const RunOptions& opt = {}) {
    using namespace pipeline_detail;
    const fs::path labels_dir = c.paths.box_labels_dir;
    std::vector<std::string> ids;
    if (!c.paths.box_test_manifest.empty()) {
        ids = read_manifest(c.paths.box_test_manifest);
    } else {
        if (!fs::is_directory(labels_dir)) throw Error(ErrorKind::io, "label directory not found: " + labels_dir.string());
        for (const auto& e : fs::recursive_directory_iterator(labels_dir))
            if (e.is_regular_file() && e.path().extension() == ".txt") {
                auto rel = fs::relative(e.path(), labels_dir);
                rel.replace_extension();
                ids.push_back(rel.generic_string());
            }
        std::sort(ids.begin(), ids.end());
    }

    GroundTruth gts;
    for (const auto& id : ids) {
        const auto file = labels_dir / (id + ".txt");
        auto& boxes = gts[id];
        if (!fs::exists(file)) continue;
        try {
            boxes = parse_yolo_boxes(read_text_file(file), c.classes);
        } catch (const Error& e) {
            throw Error(e.kind(), file.string() + ": " + e.what());
        }
    }

    const auto set = parse_detections_json(read_text_file(c.paths.detections), c.classes);
    std::vector<std::string> missing;
    std::vector<Detection> dets;
    for (const auto& id : ids) {
        auto it = set.by_image.find(id);
        if (it == set.by_image.end()) missing.push_back(id);
        else dets.insert(dets.end(), it->second.begin(), it->second.end());
    }
    if (!missing.empty()) throw Error(ErrorKind::coverage, "no detections entry for: " + id_list(missing));
    if (set.by_image.size() > ids.size())
        opt.warn(std::to_string(set.by_image.size() - ids.size()) + " detection frames outside the evaluated images ignored");

    const auto report = summarize_map(dets, gts);
    const auto reports = out_dir(c, "reports");
    write_text_file(reports / "detection_eval.csv", eval_report_csv(report));
    auto j = eval_report_json(report);
    j["images"] = ids.size();
    write_json(reports / "detection_eval.json", j);
    json summary = {{"command", "eval-detections"}, {"images", ids.size()}, {"detections", j}};

    if (!c.paths.frame_labels_test.empty()) {
        const auto labels = parse_frame_labels(read_text_file(c.paths.frame_labels_test));
        std::map<std::string, bool> predictions;
        for (const auto& [id, p] : parse_fish_probs_json(read_text_file(c.paths.fish_probs)))
            predictions.emplace(id, p.p_fish > p.p_nofish);
        const auto r = classifier_accuracy(predictions, labels);
        write_text_file(reports / "fish_classifier.csv", classifier_report_csv(r, "classifier"));
        write_json(reports / "fish_classifier.json", classifier_report_json(r));
        summary["fish_classifier"] = classifier_report_json(r);
    }
    return summary;
}

// ---------------------------------------------------------------------------
// dataset-stats

/// Counts whatever annotation inputs are configured; unset or absent inputs
/// report null. Unreadable files are reported as warnings, not errors.
inline json cmd_dataset_stats(const PipelineConfig& c, const RunOptions& opt = {}) {
    auto guarded = [&](const char* what, auto&& fn) -> json {
        try {
            return fn();
        } catch (const Error& e) {
            opt.warn(std::string(what) + ": " + e.what());
            return nullptr;
        }
    };
    auto present = [](const std::string& p) { return !p.empty() && fs::exists(p); };

    json boxes = nullptr;
    if (present(c.paths.box_train_manifest) && present(c.paths.box_test_manifest)) {
        boxes = guarded("box annotations", [&]() -> json {
            const auto train = pipeline_detail::read_manifest(c.paths.box_train_manifest);
            const auto test = pipeline_detail::read_manifest(c.paths.box_test_manifest);
            const auto split = validate_split(train, test);
            std::set<std::string> images(train.begin(), train.end());
            images.insert(test.begin(), test.end());
            json per_class = json::object();
            for (auto cls : kObjectClasses) per_class[std::string(class_name(cls))] = 0;
            std::size_t labelled = 0;
            if (!c.paths.box_labels_dir.empty())
                for (const auto& id : images) {
                    const auto file = fs::path(c.paths.box_labels_dir) / (id + ".txt");
                    if (!fs::exists(file)) continue;
                    ++labelled;
                    for (const auto& b : parse_yolo_boxes(read_text_file(file), c.classes))
                        per_class[std::string(class_name(b.cls))] = per_class[std::string(class_name(b.cls))].get<int>() + 1;
                }
            return {{"images", images.size()},
                    {"train", split.train_count},
                    {"test", split.test_count},
                    {"overlap", split.intersection.size()},
                    {"label_files", labelled},
                    {"boxes_per_class", per_class}};
        });
    }

    json frames = nullptr;
    if (present(c.paths.frame_labels_train) && present(c.paths.frame_labels_test)) {
        frames = guarded("frame labels", [&]() -> json {
            const auto train = parse_frame_labels(read_text_file(c.paths.frame_labels_train));
            const auto test = parse_frame_labels(read_text_file(c.paths.frame_labels_test));
            std::size_t fish = 0, total = 0;
            std::vector<std::string> train_ids, test_ids;
            for (const auto& l : train) fish += l.has_fish, ++total, train_ids.push_back(l.image_id);
            for (const auto& l : test) fish += l.has_fish, ++total, test_ids.push_back(l.image_id);
            return {{"have_fish", fish},
                    {"no_fish", total - fish},
                    {"train", train.size()},
                    {"test", test.size()},
                    {"overlap", validate_split(train_ids, test_ids).intersection.size()}};
        });
    }

    json behaviour = nullptr;
    if (present(c.paths.events)) {
        behaviour = guarded("events", [&]() -> json {
            const auto events = parse_events(read_text_file(c.paths.events));
            json j = {{"videos", events.videos.size()}, {"events", events.total_events()}};
            if (present(c.paths.train_videos) && present(c.paths.test_videos)) {
                const auto split = validate_split(pipeline_detail::read_manifest(c.paths.train_videos),
                                                  pipeline_detail::read_manifest(c.paths.test_videos));
                j["train_videos"] = split.train_count;
                j["test_videos"] = split.test_count;
                j["overlap"] = split.intersection.size();
            }
            return j;
        });
    }
    return {{"command", "dataset-stats"}, {"boxes", boxes}, {"frame_labels", frames}, {"events", behaviour}};
}

}  // namespace avr
