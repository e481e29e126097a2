#pragma once

// Detection evaluation: IoU matching, per-class AP (all-points envelope,
// optional 101-point mode), mAP@50 / mAP@50-95, micro P/R/F1 sweep.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace fcey {

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }
};

struct Detection {
    int image_id = 0;
    int class_id = 0;
    Box box;
    double score = 0;
};

struct GroundTruthBox {
    int image_id = 0;
    int class_id = 0;
    Box box;
};

inline double iou(const Box& a, const Box& b) {
    double ax = a.area(), bx = b.area();
    if (ax <= 0 || bx <= 0) return 0.0;  // degenerate box
    double ix1 = std::max(a.x1, b.x1), iy1 = std::max(a.y1, b.y1);
    double ix2 = std::min(a.x2, b.x2), iy2 = std::min(a.y2, b.y2);
    double iw = ix2 - ix1, ih = iy2 - iy1;
    if (iw <= 0 || ih <= 0) return 0.0;
    double inter = iw * ih;
    return inter / (ax + bx - inter);
}

// Per-detection TP flags under greedy highest-IoU matching. Detections are
// ranked by descending score within each (image, class); ties keep input
// order. Each ground truth matches at most once.
inline std::vector<bool> match_detections(const std::vector<Detection>& dets,
                                          const std::vector<GroundTruthBox>& gts,
                                          double iou_thr) {
    std::vector<bool> tp(dets.size(), false);
    std::map<std::pair<int, int>, std::vector<size_t>> det_groups, gt_groups;
    for (size_t i = 0; i < dets.size(); ++i)
        det_groups[{dets[i].image_id, dets[i].class_id}].push_back(i);
    for (size_t i = 0; i < gts.size(); ++i)
        gt_groups[{gts[i].image_id, gts[i].class_id}].push_back(i);
    for (auto& [key, dix] : det_groups) {
        std::stable_sort(dix.begin(), dix.end(),
                         [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
        auto git = gt_groups.find(key);
        if (git == gt_groups.end()) continue;
        std::vector<bool> used(git->second.size(), false);
        for (size_t di : dix) {
            double best = iou_thr;
            int best_g = -1;
            for (size_t gi = 0; gi < git->second.size(); ++gi) {
                if (used[gi]) continue;
                double v = iou(dets[di].box, gts[git->second[gi]].box);
                if (v >= best && (best_g < 0 || v > best)) {
                    best = v;
                    best_g = int(gi);
                }
            }
            if (best_g >= 0) {
                used[size_t(best_g)] = true;
                tp[di] = true;
            }
        }
    }
    return tp;
}

// AP over an ordered-by-score TP/FP sequence; all-points envelope area.
inline double average_precision(const std::vector<bool>& tp_flags,
                                const std::vector<double>& scores, int n_gt,
                                bool use_101_point = false) {
    if (n_gt < 1) throw std::invalid_argument("average_precision: n_gt must be >= 1");
    std::vector<size_t> order(tp_flags.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (size_t i : order) {
        if (tp_flags[i]) ++tp; else ++fp;
        precision.push_back(double(tp) / double(tp + fp));
        recall.push_back(double(tp) / double(n_gt));
    }
    if (precision.empty()) return 0.0;
    // monotone non-increasing envelope
    std::vector<double> env = precision;
    for (int i = int(env.size()) - 2; i >= 0; --i)
        env[size_t(i)] = std::max(env[size_t(i)], env[size_t(i) + 1]);
    if (use_101_point) {
        double acc = 0.0;
        for (int k = 0; k <= 100; ++k) {
            double r = k / 100.0;
            double p = 0.0;
            for (size_t i = 0; i < recall.size(); ++i)
                if (recall[i] >= r) { p = env[i]; break; }
            acc += p;
        }
        return acc / 101.0;
    }
    double area = 0.0, prev_r = 0.0;
    for (size_t i = 0; i < recall.size(); ++i) {
        if (recall[i] > prev_r) {
            area += (recall[i] - prev_r) * env[i];
            prev_r = recall[i];
        }
    }
    return area;
}

struct PrPoint {
    double recall = 0, precision = 0;
};

struct EvalReport {
    std::vector<int> classes;                 // classes with >= 1 ground truth
    std::map<int, double> ap50;               // per class
    std::map<int, double> ap50_95;
    double map50 = 0;
    double map50_95 = 0;
    double best_f1 = 0;
    double best_f1_threshold = 0;
    std::vector<std::pair<double, std::pair<double, double>>> f1_curve;  // thr -> (P, R)
    std::map<int, std::vector<PrPoint>> pr_curves;  // at IoU 0.5
    std::vector<int> empty_classes;           // classes seen only in detections
};

inline std::vector<double> map_thresholds_50_95() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
    return t;
}

inline EvalReport evaluate(const std::vector<Detection>& dets,
                           const std::vector<GroundTruthBox>& gts,
                           bool use_101_point = false) {
    if (gts.empty()) throw std::invalid_argument("evaluate: no ground truth");
    EvalReport rep;
    std::map<int, int> gt_count;
    for (const auto& g : gts) ++gt_count[g.class_id];
    std::set<int> det_classes;
    for (const auto& d : dets) det_classes.insert(d.class_id);
    for (int c : det_classes)
        if (!gt_count.count(c)) rep.empty_classes.push_back(c);
    for (auto& [c, n] : gt_count) rep.classes.push_back(c);

    auto thresholds = map_thresholds_50_95();
    for (double thr : thresholds) {
        auto tp = match_detections(dets, gts, thr);
        for (int c : rep.classes) {
            std::vector<bool> ctp;
            std::vector<double> cscores;
            for (size_t i = 0; i < dets.size(); ++i)
                if (dets[i].class_id == c) {
                    ctp.push_back(tp[i]);
                    cscores.push_back(dets[i].score);
                }
            double ap = average_precision(ctp, cscores, gt_count[c], use_101_point);
            rep.ap50_95[c] += ap / double(thresholds.size());
            if (thr == 0.50) {
                rep.ap50[c] = ap;
                // PR curve points at IoU 0.5
                std::vector<size_t> order(ctp.size());
                for (size_t i = 0; i < order.size(); ++i) order[i] = i;
                std::stable_sort(order.begin(), order.end(),
                                 [&](size_t a, size_t b) { return cscores[a] > cscores[b]; });
                int tpc = 0, fpc = 0;
                for (size_t i : order) {
                    if (ctp[i]) ++tpc; else ++fpc;
                    rep.pr_curves[c].push_back(
                        {double(tpc) / gt_count[c], double(tpc) / double(tpc + fpc)});
                }
            }
        }
    }
    for (int c : rep.classes) {
        rep.map50 += rep.ap50[c] / double(rep.classes.size());
        rep.map50_95 += rep.ap50_95[c] / double(rep.classes.size());
    }

    // micro-averaged F1 sweep over distinct confidence thresholds at IoU 0.5
    auto tp50 = match_detections(dets, gts, 0.5);
    std::set<double> score_set;
    for (const auto& d : dets) score_set.insert(d.score);
    const double n_gt_total = double(gts.size());
    for (double thr : score_set) {
        int tp = 0, n_det = 0;
        for (size_t i = 0; i < dets.size(); ++i) {
            if (dets[i].score < thr) continue;
            ++n_det;
            if (tp50[i]) ++tp;
        }
        double p = n_det > 0 ? double(tp) / n_det : 0.0;
        double r = double(tp) / n_gt_total;
        double f1 = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
        rep.f1_curve.push_back({thr, {p, r}});
        if (f1 > rep.best_f1) {
            rep.best_f1 = f1;
            rep.best_f1_threshold = thr;
        }
    }
    return rep;
}

// Convenience wrapper: mAP at an explicit
// threshold set, per-class AP averaged over thresholds first.
inline double map_at(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                     const std::vector<double>& thresholds) {
    if (thresholds.empty()) throw std::invalid_argument("map_at: thresholds empty");
    if (gts.empty()) throw std::invalid_argument("map_at: no ground truth");
    std::map<int, int> gt_count;
    for (const auto& g : gts) ++gt_count[g.class_id];
    double total = 0.0;
    for (auto& [c, ng] : gt_count) {
        double class_ap = 0.0;
        for (double thr : thresholds) {
            auto tp = match_detections(dets, gts, thr);
            std::vector<bool> ctp;
            std::vector<double> cscores;
            for (size_t i = 0; i < dets.size(); ++i)
                if (dets[i].class_id == c) {
                    ctp.push_back(tp[i]);
                    cscores.push_back(dets[i].score);
                }
            class_ap += average_precision(ctp, cscores, ng) / double(thresholds.size());
        }
        total += class_ap / double(gt_count.size());
    }
    return total;
}

}  // namespace fcey
