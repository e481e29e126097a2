#pragma once

// Desk-scale training harness: simplified center-cell target assignment,
// a toy detection loss (BCE + IoU + L1 on decoded distances), and SGD
// with classic momentum and coupled weight decay.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcey/data.hpp"
#include "fcey/tensor.hpp"
#include "fcey/yolo.hpp"

namespace fcey {

// ---------------------------------------------------------------------------
// Target assignment: one positive cell per box, at the scale whose stride
// best matches the box size (largest stride with min box side >= 2*stride,
// falling back to stride 8).
// ---------------------------------------------------------------------------

struct CellTarget {
    int scale = 0;          // 0/1/2 for strides 8/16/32
    CellIndex cell;         // (image, grid y, grid x)
    Box box;                // pixels in network space
    int class_id = 0;
};

inline std::vector<CellTarget> assign_targets(
    const std::vector<std::vector<YoloLabel>>& batch_labels, int input_w, int input_h,
    const std::array<int, 3>& strides = {8, 16, 32}) {
    std::vector<CellTarget> out;
    for (size_t n = 0; n < batch_labels.size(); ++n)
        for (const auto& lab : batch_labels[n]) {
            double bw = lab.w * input_w, bh = lab.h * input_h;
            double side = std::min(bw, bh);
            int scale = 0;
            for (int s = 2; s >= 1; --s)
                if (side >= 2.0 * strides[size_t(s)]) { scale = s; break; }
            int stride = strides[size_t(scale)];
            int gw = input_w / stride, gh = input_h / stride;
            CellTarget t;
            t.scale = scale;
            t.class_id = lab.class_id;
            t.cell = {int(n), std::min(int(lab.cy * input_h / stride), gh - 1),
                      std::min(int(lab.cx * input_w / stride), gw - 1)};
            t.box = {(lab.cx - lab.w / 2) * input_w, (lab.cy - lab.h / 2) * input_h,
                     (lab.cx + lab.w / 2) * input_w, (lab.cy + lab.h / 2) * input_h};
            out.push_back(t);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Toy loss
// ---------------------------------------------------------------------------

struct LossWeights {
    double cls = 1.0;
    double iou = 2.0;
    double l1 = 0.5;
};

namespace detail {

// column c of a (P,4)-shaped tensor, as (P,1,1,1)
template <typename T>
Tensor<T> col4(const Tensor<T>& x, int c) {
    const int P = x.dim(0);
    return slice_channels(reshape(x, {P, 4, 1, 1}), c, c + 1);
}

}  // namespace detail

template <typename T>
Tensor<T> toy_loss(const std::array<Tensor<T>, 3>& maps, const std::vector<CellTarget>& targets,
                   int reg_max, int num_classes, const std::array<int, 3>& strides = {8, 16, 32},
                   const LossWeights& w = {}) {
    // classification: BCE over every cell of every scale
    Tensor<T> loss = Tensor<T>::zeros({1});
    for (int s = 0; s < 3; ++s) {
        const Tensor<T>& m = maps[size_t(s)];
        const int N = m.dim(0), H = m.dim(2), W = m.dim(3);
        Tensor<T> cls_logits = slice_channels(m, 4 * reg_max, 4 * reg_max + num_classes);
        Tensor<T> target_map({N, num_classes, H, W});
        for (const auto& t : targets)
            if (t.scale == s)
                target_map.data()[size_t(
                    ((std::int64_t(t.cell.n) * num_classes + t.class_id) * H + t.cell.y) * W +
                    t.cell.x)] = T(1);
        loss = add(loss, scale(bce_with_logits_mean(cls_logits, target_map), T(w.cls / 3.0)));
    }

    // box terms over positive cells, per scale
    for (int s = 0; s < 3; ++s) {
        std::vector<CellIndex> cells;
        std::vector<T> tgt_dist, tgt_corner;
        const double stride = strides[size_t(s)];
        for (const auto& t : targets) {
            if (t.scale != s) continue;
            cells.push_back(t.cell);
            double cx = (t.cell.x + 0.5) * stride, cy = (t.cell.y + 0.5) * stride;
            // distances in stride units, clamped into the DFL support
            double mx = double(reg_max) - 1.01;
            tgt_dist.push_back(T(std::clamp((cx - t.box.x1) / stride, 0.0, mx)));
            tgt_dist.push_back(T(std::clamp((cy - t.box.y1) / stride, 0.0, mx)));
            tgt_dist.push_back(T(std::clamp((t.box.x2 - cx) / stride, 0.0, mx)));
            tgt_dist.push_back(T(std::clamp((t.box.y2 - cy) / stride, 0.0, mx)));
            tgt_corner.push_back(T(t.box.x1));
            tgt_corner.push_back(T(t.box.y1));
            tgt_corner.push_back(T(t.box.x2));
            tgt_corner.push_back(T(t.box.y2));
        }
        if (cells.empty()) continue;
        const int P = int(cells.size());
        Tensor<T> gathered = gather_cells(maps[size_t(s)], cells);           // (P, C)
        Tensor<T> box_logits = slice_channels(
            reshape(gathered, {P, maps[size_t(s)].dim(1), 1, 1}), 0, 4 * reg_max);
        Tensor<T> bins = softmax(reshape(box_logits, {P, 4, reg_max}), 2);
        Tensor<T> iota({P, 4, reg_max});
        for (int p = 0; p < P; ++p)
            for (int k = 0; k < 4; ++k)
                for (int r = 0; r < reg_max; ++r)
                    iota.data()[size_t((std::int64_t(p) * 4 + k) * reg_max + r)] = T(r);
        Tensor<T> dist = sum_axis(mul(bins, iota), 2);                       // (P,4) in stride units

        // L1 on decoded distances
        Tensor<T> dist_target({P, 4}, tgt_dist);
        loss = add(loss, scale(mean(fcey::abs(sub(dist, dist_target))), T(w.l1)));

        // IoU of decoded box vs target box
        Tensor<T> anchors({P, 4}), signs({P, 4});
        for (int p = 0; p < P; ++p) {
            double cx = (cells[size_t(p)].x + 0.5) * stride, cy = (cells[size_t(p)].y + 0.5) * stride;
            anchors.data()[size_t(p * 4 + 0)] = T(cx);
            anchors.data()[size_t(p * 4 + 1)] = T(cy);
            anchors.data()[size_t(p * 4 + 2)] = T(cx);
            anchors.data()[size_t(p * 4 + 3)] = T(cy);
            signs.data()[size_t(p * 4 + 0)] = T(-stride);
            signs.data()[size_t(p * 4 + 1)] = T(-stride);
            signs.data()[size_t(p * 4 + 2)] = T(stride);
            signs.data()[size_t(p * 4 + 3)] = T(stride);
        }
        Tensor<T> pred = add(anchors, mul(signs, dist));                     // (P,4) x1 y1 x2 y2
        Tensor<T> tgt({P, 4}, tgt_corner);
        auto px1 = detail::col4(pred, 0), py1 = detail::col4(pred, 1);
        auto px2 = detail::col4(pred, 2), py2 = detail::col4(pred, 3);
        auto tx1 = detail::col4(tgt, 0), ty1 = detail::col4(tgt, 1);
        auto tx2 = detail::col4(tgt, 2), ty2 = detail::col4(tgt, 3);
        Tensor<T> iw = relu(sub(minimum(px2, tx2), maximum(px1, tx1)));
        Tensor<T> ih = relu(sub(minimum(py2, ty2), maximum(py1, ty1)));
        Tensor<T> inter = mul(iw, ih);
        Tensor<T> area_p = mul(sub(px2, px1), sub(py2, py1));
        Tensor<T> area_t = mul(sub(tx2, tx1), sub(ty2, ty1));
        Tensor<T> uni = sub(add(area_p, area_t), inter);
        Tensor<T> iou_v = div(inter, uni);
        loss = add(loss, scale(mean(add_scalar(neg(iou_v), T(1))), T(w.iou)));
    }
    return loss;
}

// ---------------------------------------------------------------------------
// SGD: v <- m*v + g + wd*w ; w <- w - lr*v
// ---------------------------------------------------------------------------

template <typename T>
struct OptimState {
    T lr = T(0.01);
    T momentum = T(0.937);
    T weight_decay = T(0.0005);
    std::vector<std::vector<T>> velocity;
};

template <typename T>
void sgd_step(NamedParams<T>& params, OptimState<T>& state) {
    if (state.velocity.empty()) {
        state.velocity.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i)
            state.velocity[i].assign(params[i].second->data().size(), T(0));
    }
    if (state.velocity.size() != params.size())
        throw std::invalid_argument("sgd_step: parameter count changed");
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i].second;
        auto& v = state.velocity[i];
        if (v.size() != p.data().size()) throw std::invalid_argument("sgd_step: shape changed");
        const auto& g = p.grad();
        for (size_t j = 0; j < v.size(); ++j) {
            v[j] = state.momentum * v[j] + g[j] + state.weight_decay * p.data()[j];
            p.data()[j] -= state.lr * v[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop over a synthetic dataset
// ---------------------------------------------------------------------------

struct TrainResult {
    std::vector<double> losses;
    std::vector<std::string> param_names;
    std::vector<bool> param_grad_seen;        // any element nonzero at least once
    std::vector<double> param_grad_coverage;  // fraction of elements touched
};

template <typename T>
Tensor<T> image_to_input(const std::vector<const Image*>& batch) {
    const int H = batch[0]->h, W = batch[0]->w;
    Tensor<T> x({int(batch.size()), 3, H, W});
    for (size_t n = 0; n < batch.size(); ++n) {
        const Image& im = *batch[n];
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx)
                    x.data()[size_t(((std::int64_t(n) * 3 + c) * H + y) * W + xx)] =
                        T(im.at(y, xx, im.channels == 3 ? c : 0)) / T(255);
    }
    return x;
}

template <typename T>
TrainResult train_loop(Model<T>& model, const std::vector<SynthSample>& dataset, int steps,
                       OptimState<T>& opt, int batch_size = 16) {
    if (dataset.empty()) throw std::invalid_argument("train_loop: dataset is empty");
    TrainResult result;
    auto params = model.params();
    for (auto& [name, t] : params) {
        result.param_names.push_back(name);
        result.param_grad_seen.push_back(false);
    }
    std::vector<std::vector<char>> touched(params.size());
    for (size_t i = 0; i < params.size(); ++i)
        touched[i].assign(params[i].second->data().size(), 0);

    const int reg_max = model.graph().cfg.reg_max;
    const int nc = model.graph().cfg.num_classes;
    size_t cursor = 0;
    for (int step = 0; step < steps; ++step) {
        std::vector<const Image*> images;
        std::vector<std::vector<YoloLabel>> labels;
        int bs = std::min<int>(batch_size, int(dataset.size()));
        for (int b = 0; b < bs; ++b) {
            const auto& s = dataset[cursor];
            images.push_back(&s.image);
            labels.push_back(s.labels);
            cursor = (cursor + 1) % dataset.size();
        }
        Tensor<T> x = image_to_input<T>(images);
        auto maps = model.forward(x, /*training=*/true);
        auto targets = assign_targets(labels, x.dim(3), x.dim(2));
        Tensor<T> loss = toy_loss(maps, targets, reg_max, nc);
        double lv = double(loss.item());
        if (!std::isfinite(lv))
            throw std::runtime_error("train_loop: loss diverged (non-finite) at step " +
                                     std::to_string(step));
        result.losses.push_back(lv);
        for (auto& [name, t] : params) t->zero_grad();
        backward(loss);
        for (size_t i = 0; i < params.size(); ++i) {
            const auto& g = params[i].second->grad();
            for (size_t j = 0; j < g.size(); ++j)
                if (g[j] != T(0)) touched[i][j] = 1;
        }
        sgd_step(params, opt);
    }
    for (size_t i = 0; i < params.size(); ++i) {
        std::int64_t seen = 0;
        for (char c : touched[i]) seen += c;
        result.param_grad_seen[i] = seen > 0;
        result.param_grad_coverage.push_back(double(seen) / double(touched[i].size()));
    }

    // Re-estimate batchnorm running statistics under the final weights so
    // inference-mode forwards match what was trained (small-batch training
    // leaves the moving averages lagging the last updates).
    if (steps > 0) {
        std::vector<const Image*> images;
        int bs = std::min<int>(batch_size, int(dataset.size()));
        for (int b = 0; b < bs; ++b) images.push_back(&dataset[size_t(b)].image);
        model.set_bn_momentum(T(1));
        model.forward(image_to_input<T>(images), /*training=*/true);
        model.set_bn_momentum(T(0.03));
    }
    return result;
}

}  // namespace fcey
