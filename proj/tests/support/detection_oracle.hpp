#pragma once

// Brute-force references for detection scoring. Deliberately structured
// differently from the library: matching enumerates every injective
// assignment, AP uses the per-TP rank formula.

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <vector>

#include "avr/detection_eval.hpp"
#include "avr/rng.hpp"

namespace avr::testing {

/// IoU by counting sample points of a res x res lattice over [0,1]^2.
inline double raster_iou(const BoundingBox& a, const BoundingBox& b, int res = 2000) {
    long inter = 0, uni = 0;
    for (int j = 0; j < res; ++j) {
        const double y = (j + 0.5) / res;
        for (int i = 0; i < res; ++i) {
            const double x = (i + 0.5) / res;
            const bool in_a = x >= a.x0() && x < a.x1() && y >= a.y0() && y < a.y1();
            const bool in_b = x >= b.x0() && x < b.x1() && y >= b.y0() && y < b.y1();
            inter += in_a && in_b;
            uni += in_a || in_b;
        }
    }
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

/// Exact IoU by cell decomposition: the edges of both boxes split the plane
/// into a grid; each cell is wholly inside or outside either box.
inline double cell_iou(const BoundingBox& a, const BoundingBox& b) {
    std::vector<double> xs{a.x0(), a.x1(), b.x0(), b.x1()}, ys{a.y0(), a.y1(), b.y0(), b.y1()};
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    double inter = 0, uni = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double mx = (xs[i] + xs[i + 1]) / 2, my = (ys[j] + ys[j + 1]) / 2;
            const double cell = (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
            const bool in_a = mx > a.x0() && mx < a.x1() && my > a.y0() && my < a.y1();
            const bool in_b = mx > b.x0() && mx < b.x1() && my > b.y0() && my < b.y1();
            if (in_a && in_b) inter += cell;
            if (in_a || in_b) uni += cell;
        }
    return uni > 0 ? inter / uni : 0.0;
}

/// Enumerates every injective partial assignment of detections to ground
/// truths (IoU >= thresh) and keeps the lexicographically best one under the
/// greedy preference: detections by descending confidence (stable), each
/// preferring higher IoU, then lower GT index, over staying unmatched.
inline std::vector<bool> enumerate_matches(const std::vector<Detection>& dets, const std::vector<BoundingBox>& gts,
                                           double thresh) {
    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return dets[a].confidence > dets[b].confidence; });

    using Key = std::vector<std::pair<double, long>>;
    Key best_key;
    std::vector<long> best_assign, assign(dets.size(), -1);
    std::vector<bool> used(gts.size(), false);
    bool have_best = false;

    std::function<void(std::size_t, Key&)> rec = [&](std::size_t pos, Key& key) {
        if (pos == order.size()) {
            if (!have_best || key > best_key) {
                best_key = key;
                best_assign = assign;
                have_best = true;
            }
            return;
        }
        const auto d = order[pos];
        key.push_back({-std::numeric_limits<double>::infinity(), 0});
        assign[d] = -1;
        rec(pos + 1, key);
        key.pop_back();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            const double o = iou(dets[d].box, gts[g]);
            if (o < thresh) continue;
            used[g] = true;
            assign[d] = static_cast<long>(g);
            key.push_back({o, -static_cast<long>(g)});
            rec(pos + 1, key);
            key.pop_back();
            used[g] = false;
        }
        assign[d] = -1;
    };
    Key key;
    rec(0, key);
    std::vector<bool> flags(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) flags[i] = best_assign[i] >= 0;
    return flags;
}

/// AP = (1/n_gt) * sum over true positives at rank k of max_{j >= k} precision(j).
inline double rank_formula_ap(std::vector<std::pair<double, bool>> scored, std::size_t n_gt) {
    if (n_gt == 0) return scored.empty() ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    std::stable_sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first > b.first; });
    std::vector<double> prec(scored.size());
    double tp = 0;
    for (std::size_t k = 0; k < scored.size(); ++k) {
        tp += scored[k].second;
        prec[k] = tp / static_cast<double>(k + 1);
    }
    double sum = 0;
    for (std::size_t k = 0; k < scored.size(); ++k) {
        if (!scored[k].second) continue;
        double m = 0;
        for (std::size_t j = k; j < scored.size(); ++j) m = std::max(m, prec[j]);
        sum += m;
    }
    return sum / static_cast<double>(n_gt);
}

/// Per-class AP at one IoU threshold composed from the brute-force pieces.
inline std::map<ObjectClass, double> oracle_ap(const std::vector<Detection>& dets, const GroundTruth& gts,
                                               double thresh) {
    std::map<ObjectClass, double> out;
    for (ObjectClass cls : kObjectClasses) {
        std::size_t n_gt = 0;
        for (auto& [img, boxes] : gts)
            for (auto& b : boxes) n_gt += b.cls == cls;
        if (n_gt == 0) continue;
        std::map<std::string, std::vector<Detection>> per_image;
        for (auto& d : dets)
            if (d.box.cls == cls) per_image[d.image_id].push_back(d);
        std::vector<std::pair<double, bool>> scored;
        for (auto& [img, ds] : per_image) {
            std::vector<BoundingBox> g;
            if (gts.contains(img))
                for (auto& b : gts.at(img))
                    if (b.cls == cls) g.push_back(b);
            const auto flags = enumerate_matches(ds, g, thresh);
            for (std::size_t i = 0; i < ds.size(); ++i) scored.push_back({ds[i].confidence, flags[i]});
        }
        out[cls] = rank_formula_ap(scored, n_gt);
    }
    return out;
}

inline BoundingBox random_box(Rng& rng, ObjectClass cls) {
    BoundingBox b;
    b.cls = cls;
    b.w = rng.uniform(0.05, 0.4);
    b.h = rng.uniform(0.05, 0.4);
    b.cx = rng.uniform(b.w / 2, 1 - b.w / 2);
    b.cy = rng.uniform(b.h / 2, 1 - b.h / 2);
    return b;
}

/// Detection near `gt`: jittered so IoU spans the whole 0.5..0.95 range.
inline BoundingBox jitter(Rng& rng, const BoundingBox& gt, double amount) {
    BoundingBox b = gt;
    b.w = std::clamp(gt.w * (1 + rng.uniform(-amount, amount)), 0.02, 0.9);
    b.h = std::clamp(gt.h * (1 + rng.uniform(-amount, amount)), 0.02, 0.9);
    b.cx = std::clamp(gt.cx + rng.uniform(-amount, amount) * gt.w, b.w / 2, 1 - b.w / 2);
    b.cy = std::clamp(gt.cy + rng.uniform(-amount, amount) * gt.h, b.h / 2, 1 - b.h / 2);
    return b;
}

struct Scene {
    std::vector<Detection> dets;
    GroundTruth gts;
};

/// Up to `max_images` images with at most `max_boxes` boxes (GT + detections)
/// each. Confidences are continuous, so ties have probability zero.
inline Scene random_scene(Rng& rng, int max_images = 5, int max_boxes = 10) {
    Scene s;
    const int images = 1 + static_cast<int>(rng.uniform_index(max_images));
    for (int im = 0; im < images; ++im) {
        const std::string id = "img" + std::to_string(im);
        const int budget = static_cast<int>(rng.uniform_index(max_boxes + 1));
        const int n_gt = budget ? static_cast<int>(rng.uniform_index(budget + 1)) : 0;
        auto& gts = s.gts[id];
        for (int g = 0; g < n_gt; ++g) gts.push_back(random_box(rng, kObjectClasses[rng.uniform_index(3)]));
        for (int d = n_gt; d < budget; ++d) {
            BoundingBox b;
            if (!gts.empty() && rng.uniform() < 0.7)
                b = jitter(rng, gts[rng.uniform_index(gts.size())], rng.uniform(0.0, 0.4));
            else
                b = random_box(rng, kObjectClasses[rng.uniform_index(3)]);
            if (rng.uniform() < 0.1) b.cls = kObjectClasses[rng.uniform_index(3)];
            s.dets.push_back({id, b, rng.uniform()});
        }
    }
    return s;
}

}  // namespace avr::testing
