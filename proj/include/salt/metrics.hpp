#pragma once

#include <algorithm>
#include <map>
#include <vector>

#include "metrics_types.hpp"
#include "sampler.hpp"

namespace salt {

inline double iou(const BBox& a, const BBox& b) {
    a.validate();
    b.validate();
    double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    double inter = ix * iy;
    double uni = a.area() + b.area() - inter;
    return inter / uni;
}

// ---------------------------------------------------------------------------
// deterministic color-signature detector: per class, gaussian score on the
// color distance, threshold, 4-connected components, keep the best component
// of at least 4 px per class.
// ---------------------------------------------------------------------------

struct DetectorConfig {
    double sigma = 0.25;
    double threshold = 0.5;
    int min_pixels = 4;
};

template <typename S>
std::vector<Detection> detect(const Grid<S>& image, const std::vector<ClassDef>& classes,
                              const DetectorConfig& dc = {}) {
    int H = image.shape[1], W = image.shape[2];
    std::vector<Detection> out;
    std::vector<double> score(size_t(H) * W);
    std::vector<int> comp(size_t(H) * W);
    for (const ClassDef& cls : classes) {
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                double d2 = 0;
                for (int ch = 0; ch < 3; ++ch) {
                    double x = double(image.at(ch, r, c));
                    x = x < 0 ? 0 : (x > 1 ? 1 : x);
                    double d = x - cls.rgb[ch];
                    d2 += d * d;
                }
                score[size_t(r) * W + c] = std::exp(-d2 / (dc.sigma * dc.sigma));
            }
        // 4-connected components over thresholded score
        std::fill(comp.begin(), comp.end(), -1);
        Detection best;
        bool found = false;
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                size_t p = size_t(r) * W + c;
                if (comp[p] >= 0 || score[p] < dc.threshold) continue;
                // flood fill
                std::vector<size_t> stack{p}, members;
                comp[p] = 1;
                while (!stack.empty()) {
                    size_t q = stack.back();
                    stack.pop_back();
                    members.push_back(q);
                    int qr = int(q / W), qc = int(q % W);
                    const int dr[4] = {-1, 1, 0, 0}, dcol[4] = {0, 0, -1, 1};
                    for (int k = 0; k < 4; ++k) {
                        int nr = qr + dr[k], nc = qc + dcol[k];
                        if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
                        size_t np = size_t(nr) * W + nc;
                        if (comp[np] < 0 && score[np] >= dc.threshold) {
                            comp[np] = 1;
                            stack.push_back(np);
                        }
                    }
                }
                if (int(members.size()) < dc.min_pixels) continue;
                int rmin = H, rmax = -1, cmin = W, cmax = -1;
                double s = 0;
                for (size_t q : members) {
                    int qr = int(q / W), qc = int(q % W);
                    rmin = std::min(rmin, qr);
                    rmax = std::max(rmax, qr);
                    cmin = std::min(cmin, qc);
                    cmax = std::max(cmax, qc);
                    s += score[q];
                }
                Detection d{cls.name,
                            BBox{double(cmin) / W, double(rmin) / H, double(cmax + 1) / W,
                                 double(rmax + 1) / H},
                            s / double(members.size())};
                if (!found || d.score > best.score) {
                    best = d;
                    found = true;
                }
            }
        if (found) out.push_back(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// mAP@0.5, all-point (VOC-2010 style) interpolation, greedy matching by
// descending score within each class.
// ---------------------------------------------------------------------------

struct ImageDetections {
    std::vector<Detection> preds;
    std::vector<std::pair<std::string, BBox>> gts;
};

inline double average_precision(std::vector<std::pair<double, bool>> scored, int n_gt) {
    // scored: (score, is_tp), already matched
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (const auto& [s, is_tp] : scored) {
        (is_tp ? tp : fp)++;
        precision.push_back(double(tp) / (tp + fp));
        recall.push_back(double(tp) / n_gt);
    }
    // monotone envelope, integrate over recall increments
    double ap = 0, prev_recall = 0;
    for (size_t i = 0; i < precision.size(); ++i) {
        double pmax = 0;
        for (size_t j = i; j < precision.size(); ++j) pmax = std::max(pmax, precision[j]);
        ap += pmax * (recall[i] - prev_recall);
        prev_recall = recall[i];
    }
    return ap;
}

inline double map50(const std::vector<ImageDetections>& images, double iou_threshold = 0.5) {
    std::map<std::string, int> gt_count;
    for (const auto& img : images)
        for (const auto& [cls, box] : img.gts) gt_count[cls]++;

    double ap_sum = 0;
    int n_classes = 0;
    for (const auto& [cls, n_gt] : gt_count) {
        if (n_gt < 1) continue;
        std::vector<std::pair<double, bool>> scored;
        for (const auto& img : images) {
            // rank this image's predictions of the class by score
            std::vector<const Detection*> preds;
            for (const auto& d : img.preds)
                if (d.class_name == cls) preds.push_back(&d);
            std::stable_sort(preds.begin(), preds.end(),
                             [](const Detection* a, const Detection* b) { return a->score > b->score; });
            std::vector<bool> used(img.gts.size(), false);
            for (const Detection* d : preds) {
                bool tp = false;
                for (size_t g = 0; g < img.gts.size(); ++g) {
                    if (used[g] || img.gts[g].first != cls) continue;
                    if (iou(d->box, img.gts[g].second) >= iou_threshold) {
                        used[g] = true;
                        tp = true;
                        break;
                    }
                }
                scored.push_back({d->score, tp});
            }
        }
        ap_sum += average_precision(std::move(scored), n_gt);
        ++n_classes;
    }
    return n_classes ? ap_sum / n_classes : 0.0;
}

// Class-fidelity proxy: mean over prompted classes of the detector's top
// score for that class, 0 when undetected.
template <typename S>
double fidelity(const Grid<S>& image, const std::vector<std::string>& prompted_classes,
                const std::vector<ClassDef>& classes, const DetectorConfig& dc = {}) {
    if (prompted_classes.empty()) throw contract_error("fidelity: empty class list");
    std::vector<Detection> dets = detect(image, classes, dc);
    double total = 0;
    for (const auto& cls : prompted_classes) {
        double s = 0;
        for (const auto& d : dets)
            if (d.class_name == cls) s = std::max(s, d.score);
        total += s;
    }
    return total / double(prompted_classes.size());
}

// Fraction of map mass whose pixels fall inside the box (shared pixel rule).
template <typename S>
double attention_mass(const Tensor<S>& map, const BBox& box) {
    int H = map.shape[0], W = map.shape[1];
    PixelRect rect = box_to_pixels(box, H, W);
    double s_in = 0, s_tot = 0;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double v = double(map.v[size_t(r) * W + c]);
            if (v < 0) throw contract_error("attention_mass: negative map value");
            s_tot += v;
            if (pixel_in_box(r, c, rect)) s_in += v;
        }
    if (s_tot <= 0) throw contract_error("attention_mass: zero total mass");
    return s_in / s_tot;
}

// Mean L1 distance between consecutive L1-normalized token maps.
template <typename S>
double attention_drift(const Trajectory<S>& traj, const std::vector<int>& token_set) {
    std::vector<Tensor<S>> maps;
    for (const auto& pt : traj.points)
        if (pt.capture) maps.push_back(attention_map(*pt.capture, token_set));
    if (maps.size() < 2) throw contract_error("attention_drift: need >= 2 captured steps");
    auto normalize = [](Tensor<S>& m) {
        double s = 0;
        for (auto v : m.v) s += double(v);
        if (s > 0)
            for (auto& v : m.v) v = S(double(v) / s);
    };
    for (auto& m : maps) normalize(m);
    double total = 0;
    for (size_t i = 1; i < maps.size(); ++i) {
        double l1 = 0;
        for (size_t j = 0; j < maps[i].numel(); ++j)
            l1 += std::abs(double(maps[i].v[j]) - double(maps[i - 1].v[j]));
        total += l1;
    }
    return total / double(maps.size() - 1);
}

}  // namespace salt
