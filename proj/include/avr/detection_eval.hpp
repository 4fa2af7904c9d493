#pragma once

// Detection and frame-classifier scoring: IoU, greedy matching, all-point
// interpolated AP, per-class mAP50 / mAP50-95 summaries and per-class
// accuracy for binary frame classifiers.

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "avr/annotations.hpp"
#include "avr/error.hpp"

namespace avr {

struct Detection {
    std::string image_id;
    BoundingBox box;
    double confidence = 0.0;
};

inline double box_area(const BoundingBox& b) { return b.w * b.h; }

/// Intersection over union in normalized coordinates.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
    if (!(box_area(a) > 0) || !(box_area(b) > 0)) throw Error(ErrorKind::domain, "IoU of a zero-area box");
    const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
    const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
    if (iw <= 0 || ih <= 0) return 0.0;
    // Areas from the same edges as the overlap, so iou(a, a) == 1 exactly.
    const double area_a = (a.x1() - a.x0()) * (a.y1() - a.y0());
    const double area_b = (b.x1() - b.x0()) * (b.y1() - b.y0());
    const double inter = iw * ih;
    return inter / (area_a + area_b - inter);
}

/// Indices of `dets` ordered by descending confidence; equal confidences keep
/// input order.
inline std::vector<std::size_t> confidence_order(std::span<const double> confidences) {
    std::vector<std::size_t> order(confidences.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return confidences[a] > confidences[b]; });
    return order;
}

/// Greedy TP/FP assignment for one image and class. Detections are visited in
/// descending confidence; each takes the unmatched ground truth with the
/// highest IoU >= iou_thresh (ties to the lowest index). Flags are returned in
/// input order.
inline std::vector<bool> match_greedy(std::span<const Detection> dets, std::span<const BoundingBox> gts,
                                      double iou_thresh) {
    std::vector<double> conf(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) conf[i] = dets[i].confidence;
    std::vector<bool> flags(dets.size(), false);
    std::vector<bool> taken(gts.size(), false);
    for (std::size_t d : confidence_order(conf)) {
        double best = -1;
        std::size_t best_gt = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g]) continue;
            const double o = iou(dets[d].box, gts[g]);
            if (o >= iou_thresh && o > best) {
                best = o;
                best_gt = g;
            }
        }
        if (best_gt < gts.size()) {
            taken[best_gt] = true;
            flags[d] = true;
        }
    }
    return flags;
}

/// All-point interpolated area under the precision/recall curve, using the
/// monotone (non-increasing) precision envelope. Undefined (nullopt) when
/// there is neither ground truth nor a detection.
inline std::optional<double> average_precision(const std::vector<bool>& flags, std::span<const double> confidences,
                                               std::size_t n_gt) {
    if (flags.size() != confidences.size()) throw Error(ErrorKind::shape, "flags and confidences differ in length");
    if (n_gt == 0) return flags.empty() ? std::nullopt : std::optional<double>(0.0);
    const auto order = confidence_order(confidences);
    const std::size_t n = order.size();
    std::vector<double> precision(n), recall(n);
    std::size_t tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        tp += flags[order[k]] ? 1 : 0;
        precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        recall[k] = static_cast<double>(tp) / static_cast<double>(n_gt);
    }
    for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double ap = 0, prev_recall = 0;
    for (std::size_t k = 0; k < n; ++k) {
        ap += (recall[k] - prev_recall) * precision[k];
        prev_recall = recall[k];
    }
    return ap;
}

struct ClassMetrics {
    double precision = 0;
    double recall = 0;
    double ap50 = 0;
    double ap50_95 = 0;
    double threshold = 0;  // confidence at the max-F1 operating point
    std::size_t n_gt = 0;
    std::size_t n_det = 0;
};

struct EvalReport {
    std::map<ObjectClass, ClassMetrics> per_class;  // classes present in ground truth
    ClassMetrics all_row;                           // unweighted mean of per_class
};

inline constexpr std::string_view kOperatingPointNote = "precision/recall at per-class max-F1 confidence threshold";

using GroundTruth = std::map<std::string, std::vector<BoundingBox>>;

namespace eval_detail {

struct Pooled {
    std::vector<bool> flags;
    std::vector<double> confidences;
};

inline Pooled pool_matches(std::span<const Detection> dets, const GroundTruth& gts, ObjectClass cls, double thresh) {
    std::map<std::string, std::vector<Detection>> by_image;
    for (const auto& d : dets)
        if (d.box.cls == cls) by_image[d.image_id].push_back(d);
    Pooled out;
    for (const auto& [image, image_dets] : by_image) {
        std::vector<BoundingBox> image_gts;
        if (auto it = gts.find(image); it != gts.end())
            for (const auto& b : it->second)
                if (b.cls == cls) image_gts.push_back(b);
        const auto flags = match_greedy(image_dets, image_gts, thresh);
        for (std::size_t i = 0; i < flags.size(); ++i) {
            out.flags.push_back(flags[i]);
            out.confidences.push_back(image_dets[i].confidence);
        }
    }
    return out;
}

}  // namespace eval_detail

inline constexpr std::array<double, 10> kCocoIouThresholds{0.50, 0.55, 0.60, 0.65, 0.70,
                                                           0.75, 0.80, 0.85, 0.90, 0.95};

/// Per-class AP at IoU 0.5, AP averaged over IoU 0.50:0.05:0.95, and
/// precision/recall at the confidence threshold maximizing F1. Classes without
/// ground truth are left out of the report and of the ALL row.
inline EvalReport summarize_map(std::span<const Detection> dets, const GroundTruth& gts,
                                std::span<const ObjectClass> classes = kObjectClasses) {
    EvalReport report;
    for (ObjectClass cls : classes) {
        std::size_t n_gt = 0;
        for (const auto& [image, boxes] : gts)
            n_gt += static_cast<std::size_t>(std::count_if(boxes.begin(), boxes.end(),
                                                           [&](const BoundingBox& b) { return b.cls == cls; }));
        if (n_gt == 0) continue;

        ClassMetrics m;
        m.n_gt = n_gt;
        double ap_sum = 0;
        for (double t : kCocoIouThresholds) {
            const auto pooled = eval_detail::pool_matches(dets, gts, cls, t);
            const double ap = average_precision(pooled.flags, pooled.confidences, n_gt).value_or(0.0);
            ap_sum += ap;
            if (t == 0.50) {
                m.ap50 = ap;
                m.n_det = pooled.flags.size();
                // Sweep thresholds at distinct confidence values.
                const auto order = confidence_order(pooled.confidences);
                std::size_t tp = 0;
                double best_f1 = -1;
                for (std::size_t k = 0; k < order.size(); ++k) {
                    tp += pooled.flags[order[k]] ? 1 : 0;
                    const bool boundary = k + 1 == order.size() ||
                                          pooled.confidences[order[k + 1]] < pooled.confidences[order[k]];
                    if (!boundary) continue;
                    const double p = static_cast<double>(tp) / static_cast<double>(k + 1);
                    const double r = static_cast<double>(tp) / static_cast<double>(n_gt);
                    const double f1 = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
                    if (f1 > best_f1) {
                        best_f1 = f1;
                        m.precision = p;
                        m.recall = r;
                        m.threshold = pooled.confidences[order[k]];
                    }
                }
            }
        }
        m.ap50_95 = ap_sum / static_cast<double>(kCocoIouThresholds.size());
        report.per_class.emplace(cls, m);
    }
    if (report.per_class.empty()) throw Error(ErrorKind::report, "ground truth is empty for every class");

    const double k = static_cast<double>(report.per_class.size());
    for (const auto& [cls, m] : report.per_class) {
        report.all_row.precision += m.precision / k;
        report.all_row.recall += m.recall / k;
        report.all_row.ap50 += m.ap50 / k;
        report.all_row.ap50_95 += m.ap50_95 / k;
        report.all_row.n_gt += m.n_gt;
        report.all_row.n_det += m.n_det;
    }
    return report;
}

namespace eval_detail {

inline std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace eval_detail

/// Rows ALL, Penguin, Fish, Bubble; columns Precision, Recall, mAP50,
/// mAP50-95. Classes absent from ground truth print "-".
inline std::string eval_report_csv(const EvalReport& r) {
    using eval_detail::fixed;
    std::string out = "# " + std::string(kOperatingPointNote) + "\n";
    out += "Class,Precision,Recall,mAP50,mAP50-95\n";
    auto row = [&](std::string_view name, const ClassMetrics* m) {
        out += name;
        if (m)
            out += "," + fixed(m->precision) + "," + fixed(m->recall) + "," + fixed(m->ap50) + "," + fixed(m->ap50_95);
        else
            out += ",-,-,-,-";
        out += "\n";
    };
    row("ALL", &r.all_row);
    for (ObjectClass c : kObjectClasses) {
        auto it = r.per_class.find(c);
        row(class_name(c), it == r.per_class.end() ? nullptr : &it->second);
    }
    return out;
}

inline nlohmann::json eval_report_json(const EvalReport& r) {
    auto metrics = [](const ClassMetrics& m) {
        return nlohmann::json{{"precision", m.precision}, {"recall", m.recall},   {"mAP50", m.ap50},
                              {"mAP50-95", m.ap50_95},    {"n_gt", m.n_gt},       {"n_det", m.n_det}};
    };
    nlohmann::json classes = nlohmann::json::object();
    for (const auto& [c, m] : r.per_class) {
        auto j = metrics(m);
        j["f1_threshold"] = m.threshold;
        classes[std::string(class_name(c))] = std::move(j);
    }
    return {{"operating_point", "max_f1"},
            {"note", std::string(kOperatingPointNote)},
            {"all", metrics(r.all_row)},
            {"classes", std::move(classes)}};
}

// ---------------------------------------------------------------------------
// Whole-frame fish classifier

struct ClassifierReport {
    std::optional<double> acc_fish;
    std::optional<double> acc_nofish;
    double average = 0;  // unweighted mean of the present class accuracies
};

inline ClassifierReport classifier_accuracy(const std::map<std::string, bool>& predictions,
                                            std::span<const FrameLabel> labels) {
    std::string missing;
    std::size_t correct[2] = {0, 0}, total[2] = {0, 0};
    for (const auto& l : labels) {
        auto it = predictions.find(l.image_id);
        if (it == predictions.end()) {
            missing += (missing.empty() ? "" : ", ") + l.image_id;
            continue;
        }
        const int k = l.has_fish ? 0 : 1;
        ++total[k];
        correct[k] += it->second == l.has_fish ? 1 : 0;
    }
    if (!missing.empty()) throw Error(ErrorKind::coverage, "no prediction for: " + missing);

    ClassifierReport r;
    double sum = 0;
    int present = 0;
    if (total[0]) {
        r.acc_fish = static_cast<double>(correct[0]) / static_cast<double>(total[0]);
        sum += *r.acc_fish;
        ++present;
    }
    if (total[1]) {
        r.acc_nofish = static_cast<double>(correct[1]) / static_cast<double>(total[1]);
        sum += *r.acc_nofish;
        ++present;
    }
    r.average = present ? sum / present : 0.0;
    return r;
}

inline std::string classifier_report_csv(const ClassifierReport& r, std::string_view model_name) {
    using eval_detail::fixed;
    auto opt = [](const std::optional<double>& v) { return v ? fixed(*v) : std::string("-"); };
    return "Model,Class Fish,Class NoFish,Average\n" + std::string(model_name) + "," + opt(r.acc_fish) + "," +
           opt(r.acc_nofish) + "," + fixed(r.average) + "\n";
}

inline nlohmann::json classifier_report_json(const ClassifierReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"Class Fish", opt(r.acc_fish)}, {"Class NoFish", opt(r.acc_nofish)}, {"Average", r.average}};
}

// ---------------------------------------------------------------------------
// Detections JSON:
// {"frames": [{"image_id": str, "detections": [{"class_id", "conf", "cx", "cy", "w", "h"}]}]}

struct DetectionSet {
    std::vector<std::string> image_ids;  // file order
    std::map<std::string, std::vector<Detection>> by_image;

    std::vector<Detection> all() const {
        std::vector<Detection> out;
        for (const auto& id : image_ids) {
            const auto& d = by_image.at(id);
            out.insert(out.end(), d.begin(), d.end());
        }
        return out;
    }
};

inline DetectionSet parse_detections_json(std::string_view text, const ClassMap& classes = {}) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::schema, std::string("invalid detections JSON: ") + e.what());
    }
    const auto& frames = detail::require(doc, "frames", "detections");
    if (!frames.is_array()) throw Error(ErrorKind::schema, "detections: frames must be an array");
    DetectionSet set;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const std::string where = "frames[" + std::to_string(i) + "]";
        const auto& id = detail::require(frames[i], "image_id", where);
        if (!id.is_string()) throw Error(ErrorKind::schema, where + ": image_id must be a string");
        const auto image_id = id.get<std::string>();
        if (set.by_image.contains(image_id)) throw Error(ErrorKind::schema, "duplicate image_id " + image_id);
        const auto& list = detail::require(frames[i], "detections", where);
        if (!list.is_array()) throw Error(ErrorKind::schema, where + ": detections must be an array");
        std::vector<Detection> dets;
        for (std::size_t k = 0; k < list.size(); ++k) {
            const std::string at = where + ".detections[" + std::to_string(k) + "]";
            const auto cls_id = detail::require_int(list[k], "class_id", at);
            auto number = [&](const char* key) {
                const auto& v = detail::require(list[k], key, at);
                if (!v.is_number()) throw Error(ErrorKind::schema, at + ": " + key + " must be a number");
                return v.get<double>();
            };
            const auto cls = classes.from_external(cls_id);
            if (!cls) throw Error(ErrorKind::unknown_class, at + ": unknown class id " + std::to_string(cls_id));
            Detection d{image_id, {*cls, number("cx"), number("cy"), number("w"), number("h")}, number("conf")};
            if (!(d.confidence >= 0 && d.confidence <= 1))
                throw Error(ErrorKind::range, at + ": confidence outside [0,1]");
            if (auto why = box_violation(d.box); !why.empty()) throw Error(ErrorKind::range, at + ": " + why);
            dets.push_back(std::move(d));
        }
        set.image_ids.push_back(image_id);
        set.by_image.emplace(image_id, std::move(dets));
    }
    return set;
}

inline std::string serialize_detections_json(const DetectionSet& set, const ClassMap& classes = {}) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& id : set.image_ids) {
        nlohmann::json dets = nlohmann::json::array();
        for (const auto& d : set.by_image.at(id))
            dets.push_back({{"class_id", classes.to_external(d.box.cls)},
                            {"conf", d.confidence},
                            {"cx", d.box.cx},
                            {"cy", d.box.cy},
                            {"w", d.box.w},
                            {"h", d.box.h}});
        frames.push_back({{"image_id", id}, {"detections", std::move(dets)}});
    }
    return nlohmann::json{{"frames", std::move(frames)}}.dump(2);
}

}  // namespace avr
