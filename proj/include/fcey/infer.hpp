#pragma once

// Raw head maps -> final detections: DFL expectation decode, confidence
// filtering, class-aware greedy NMS.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "fcey/eval.hpp"
#include "fcey/tensor.hpp"

namespace fcey {

struct DecodeConfig {
    int reg_max = 16;
    int num_classes = 9;
    double conf_threshold = 0.25;
    double nms_iou = 0.45;
    int max_detections = 300;
};

// Expected distance from reg_max softmax bins. Exposed for testing.
template <typename T>
double dfl_expectation(const T* bin_logits, int reg_max) {
    double mx = bin_logits[0];
    for (int i = 1; i < reg_max; ++i) mx = std::max(mx, double(bin_logits[i]));
    double denom = 0, num = 0;
    for (int i = 0; i < reg_max; ++i) {
        double e = std::exp(double(bin_logits[i]) - mx);
        denom += e;
        num += e * i;
    }
    return num / denom;
}

// raw maps are (N, 4*reg_max + nc, H, W) at the given strides
template <typename T>
std::vector<Detection> decode(const std::array<Tensor<T>, 3>& maps,
                              const std::array<int, 3>& strides, const DecodeConfig& cfg,
                              int image_w, int image_h, int image_id_base = 0) {
    std::vector<Detection> out;
    for (int s = 0; s < 3; ++s) {
        const Tensor<T>& m = maps[size_t(s)];
        if (m.dim(1) != 4 * cfg.reg_max + cfg.num_classes)
            throw std::invalid_argument("decode: map has " + std::to_string(m.dim(1)) +
                                        " channels, expected " +
                                        std::to_string(4 * cfg.reg_max + cfg.num_classes));
        const int N = m.dim(0), C = m.dim(1), H = m.dim(2), W = m.dim(3);
        const double stride = strides[size_t(s)];
        std::vector<T> cell(size_t(C), T(0));
        for (int n = 0; n < N; ++n)
            for (int gy = 0; gy < H; ++gy)
                for (int gx = 0; gx < W; ++gx) {
                    for (int c = 0; c < C; ++c)
                        cell[size_t(c)] =
                            m.data()[size_t(((std::int64_t(n) * C + c) * H + gy) * W + gx)];
                    double best_score = 0;
                    int best_cls = -1;
                    for (int c = 0; c < cfg.num_classes; ++c) {
                        double sc = 1.0 / (1.0 + std::exp(-double(cell[size_t(4 * cfg.reg_max + c)])));
                        if (sc > best_score) {
                            best_score = sc;
                            best_cls = c;
                        }
                    }
                    if (best_score < cfg.conf_threshold) continue;
                    double cx = (gx + 0.5) * stride, cy = (gy + 0.5) * stride;
                    double l = dfl_expectation(cell.data() + 0 * cfg.reg_max, cfg.reg_max) * stride;
                    double t = dfl_expectation(cell.data() + 1 * cfg.reg_max, cfg.reg_max) * stride;
                    double r = dfl_expectation(cell.data() + 2 * cfg.reg_max, cfg.reg_max) * stride;
                    double b = dfl_expectation(cell.data() + 3 * cfg.reg_max, cfg.reg_max) * stride;
                    Detection d;
                    d.image_id = image_id_base + n;
                    d.class_id = best_cls;
                    d.score = best_score;
                    d.box = {std::clamp(cx - l, 0.0, double(image_w)),
                             std::clamp(cy - t, 0.0, double(image_h)),
                             std::clamp(cx + r, 0.0, double(image_w)),
                             std::clamp(cy + b, 0.0, double(image_h))};
                    if (d.box.x2 > d.box.x1 && d.box.y2 > d.box.y1) out.push_back(d);
                }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    if (int(out.size()) > cfg.max_detections) out.resize(size_t(cfg.max_detections));
    return out;
}

inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thr,
                                  bool class_aware = true) {
    std::vector<size_t> order(dets.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
    std::vector<Detection> kept;
    for (size_t i : order) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (k.image_id != dets[i].image_id) continue;
            if (class_aware && k.class_id != dets[i].class_id) continue;
            if (iou(k.box, dets[i].box) > iou_thr) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(dets[i]);
    }
    return kept;
}

}  // namespace fcey
