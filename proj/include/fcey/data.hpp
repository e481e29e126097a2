#pragma once

// Dataset handling: YOLO-format labels, deterministic splits,
// contrast/brightness augmentation, letterboxing, synthetic desk-scale
// dataset generation, and 8-bit PNG I/O.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcey/eval.hpp"

namespace fcey {

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

struct YoloLabel {
    int class_id = 0;
    double cx = 0, cy = 0, w = 0, h = 0;  // normalized to [0,1]
};

struct LabelParseResult {
    std::vector<YoloLabel> labels;
    std::vector<std::string> warnings;  // clipped boxes
};

inline LabelParseResult parse_yolo_labels(const std::string& text) {
    LabelParseResult out;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        YoloLabel lab;
        double cls;
        if (!(ls >> cls >> lab.cx >> lab.cy >> lab.w >> lab.h))
            throw std::invalid_argument("label parse error at line " + std::to_string(lineno) +
                                        ": expected 'class cx cy w h'");
        std::string extra;
        if (ls >> extra)
            throw std::invalid_argument("label parse error at line " + std::to_string(lineno) +
                                        ": trailing field '" + extra + "'");
        if (cls < 0 || cls != std::floor(cls))
            throw std::invalid_argument("label parse error at line " + std::to_string(lineno) +
                                        ": class id must be a non-negative integer");
        lab.class_id = int(cls);
        if (lab.w <= 0 || lab.h <= 0)
            throw std::invalid_argument("label parse error at line " + std::to_string(lineno) +
                                        ": box size must be positive");
        double x1 = lab.cx - lab.w / 2, y1 = lab.cy - lab.h / 2;
        double x2 = lab.cx + lab.w / 2, y2 = lab.cy + lab.h / 2;
        if (x1 < 0 || y1 < 0 || x2 > 1 || y2 > 1) {
            x1 = std::clamp(x1, 0.0, 1.0); y1 = std::clamp(y1, 0.0, 1.0);
            x2 = std::clamp(x2, 0.0, 1.0); y2 = std::clamp(y2, 0.0, 1.0);
            lab.cx = (x1 + x2) / 2; lab.cy = (y1 + y2) / 2;
            lab.w = x2 - x1; lab.h = y2 - y1;
            out.warnings.push_back("line " + std::to_string(lineno) + ": box clipped to image");
        }
        out.labels.push_back(lab);
    }
    return out;
}

inline GroundTruthBox to_pixel_box(const YoloLabel& l, int image_id, int img_w, int img_h) {
    GroundTruthBox g;
    g.image_id = image_id;
    g.class_id = l.class_id;
    g.box = {(l.cx - l.w / 2) * img_w, (l.cy - l.h / 2) * img_h,
             (l.cx + l.w / 2) * img_w, (l.cy + l.h / 2) * img_h};
    return g;
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

struct SplitSpec {
    double train = 0.7, valid = 0.2, test = 0.1;
    unsigned seed = 0;
};

template <typename Item>
struct SplitResult {
    std::vector<Item> train, valid, test;
};

template <typename Item>
SplitResult<Item> split_dataset(std::vector<Item> items, const SplitSpec& spec) {
    if (spec.train <= 0 || spec.valid <= 0 || spec.test <= 0 ||
        std::abs(spec.train + spec.valid + spec.test - 1.0) > 1e-9)
        throw std::invalid_argument("split: ratios must be positive and sum to 1");
    if (items.size() < 3) throw std::invalid_argument("split: need at least 3 items");
    std::mt19937 rng(spec.seed);
    std::shuffle(items.begin(), items.end(), rng);
    size_t n = items.size();
    size_t n_train = size_t(std::floor(spec.train * double(n)));
    size_t n_valid = size_t(std::floor(spec.valid * double(n)));
    SplitResult<Item> out;
    out.train.assign(items.begin(), items.begin() + long(n_train));
    out.valid.assign(items.begin() + long(n_train), items.begin() + long(n_train + n_valid));
    out.test.assign(items.begin() + long(n_train + n_valid), items.end());
    return out;
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

struct Image {
    int w = 0, h = 0, channels = 1;  // 1 = gray, 3 = RGB; interleaved rows
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(int y, int x, int c = 0) {
        return pixels[size_t((std::int64_t(y) * w + x) * channels + c)];
    }
    std::uint8_t at(int y, int x, int c = 0) const {
        return pixels[size_t((std::int64_t(y) * w + x) * channels + c)];
    }
};

inline Image make_image(int w, int h, int channels, std::uint8_t fill = 0) {
    Image im;
    im.w = w; im.h = h; im.channels = channels;
    im.pixels.assign(size_t(std::int64_t(w) * h * channels), fill);
    return im;
}

struct AugmentSpec {
    double alpha = 1.2;   // contrast gain
    double gamma = 10.0;  // brightness offset
    int clip_lo = 0, clip_hi = 255;
};

inline Image augment_contrast_brightness(const Image& src, const AugmentSpec& spec) {
    if (spec.alpha <= 0) throw std::invalid_argument("augment: alpha must be positive");
    Image out = src;
    for (auto& p : out.pixels) {
        double v = spec.alpha * double(p) + spec.gamma;
        p = std::uint8_t(std::clamp(v, double(spec.clip_lo), double(spec.clip_hi)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Letterbox
// ---------------------------------------------------------------------------

struct LetterboxTransform {
    double scale = 1.0;
    double pad_x = 0.0, pad_y = 0.0;

    // original pixels -> network space
    Box to_network(const Box& b) const {
        return {b.x1 * scale + pad_x, b.y1 * scale + pad_y,
                b.x2 * scale + pad_x, b.y2 * scale + pad_y};
    }
    // network space -> original pixels
    Box to_original(const Box& b) const {
        return {(b.x1 - pad_x) / scale, (b.y1 - pad_y) / scale,
                (b.x2 - pad_x) / scale, (b.y2 - pad_y) / scale};
    }
};

inline std::pair<Image, LetterboxTransform> letterbox(const Image& src, int target) {
    if (target % 32 != 0)
        throw std::invalid_argument("letterbox: target size must be divisible by 32");
    LetterboxTransform tf;
    tf.scale = std::min(double(target) / src.w, double(target) / src.h);
    int new_w = int(std::round(src.w * tf.scale));
    int new_h = int(std::round(src.h * tf.scale));
    tf.pad_x = (target - new_w) / 2.0;
    tf.pad_y = (target - new_h) / 2.0;
    Image out = make_image(target, target, src.channels, 114);
    int ox = int(std::round(tf.pad_x)), oy = int(std::round(tf.pad_y));
    for (int y = 0; y < new_h; ++y) {
        int sy = std::min(int(y / tf.scale), src.h - 1);
        for (int x = 0; x < new_w; ++x) {
            int sx = std::min(int(x / tf.scale), src.w - 1);
            for (int c = 0; c < src.channels; ++c) out.at(oy + y, ox + x, c) = src.at(sy, sx, c);
        }
    }
    return {out, tf};
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale dataset
// ---------------------------------------------------------------------------

struct SynthSample {
    Image image;
    std::vector<YoloLabel> labels;
};

// High-contrast axis-aligned rectangles with class-conditioned intensity.
// Deterministic for a fixed seed.
inline void paint_label(SynthSample& s, const YoloLabel& lab, int image_size, int n_classes) {
    int x1 = int(std::round((lab.cx - lab.w / 2) * image_size));
    int y1 = int(std::round((lab.cy - lab.h / 2) * image_size));
    int x2 = int(std::round((lab.cx + lab.w / 2) * image_size));
    int y2 = int(std::round((lab.cy + lab.h / 2) * image_size));
    std::uint8_t intensity = std::uint8_t(96 + (159 * (lab.class_id + 1)) / n_classes);
    for (int y = std::max(0, y1); y < std::min(image_size, y2); ++y)
        for (int x = std::max(0, x1); x < std::min(image_size, x2); ++x)
            s.image.at(y, x) = intensity;
    s.labels.push_back(lab);
}

inline std::vector<SynthSample> synth_dataset(int n_images, int image_size, int n_classes,
                                              unsigned seed) {
    std::mt19937 rng(seed);
    std::vector<SynthSample> out;
    for (int i = 0; i < n_images; ++i) {
        SynthSample s;
        s.image = make_image(image_size, image_size, 1, 32);
        std::uniform_int_distribution<int> nbox(1, 3);
        int boxes = nbox(rng);
        for (int b = 0; b < boxes; ++b) {
            std::uniform_int_distribution<int> cls_d(0, n_classes - 1);
            std::uniform_real_distribution<double> size_d(0.15, 0.5);
            std::uniform_real_distribution<double> pos_d(0.0, 1.0);
            YoloLabel lab;
            lab.class_id = cls_d(rng);
            lab.w = size_d(rng);
            lab.h = size_d(rng);
            lab.cx = lab.w / 2 + pos_d(rng) * (1.0 - lab.w);
            lab.cy = lab.h / 2 + pos_d(rng) * (1.0 - lab.h);
            paint_label(s, lab, image_size, n_classes);
        }
        out.push_back(std::move(s));
    }
    return out;
}

// Variant whose box sizes guarantee positive cells at every detection
// scale: the first image carries one full-frame box (largest-stride cell),
// every image carries one box with both sides around 0.6 of the frame
// (middle-stride cell), and every image carries one small box
// (finest-stride cell).  Used by the toy trainer so all three box
// regression branches see gradients.
inline std::vector<SynthSample> synth_dataset_multiscale(int n_images, int image_size,
                                                         int n_classes, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_int_distribution<int> cls_d(0, n_classes - 1);
    const double S = image_size;
    // Box centers sit on grid-cell centers and box sides are whole multiples
    // of the assigned stride, so the regression targets are representable
    // exactly by the discrete distance bins.
    const double mid_centers[4][2] = {{24, 24}, {40, 40}, {24, 40}, {40, 24}};
    const double small_centers[4][2] = {{44, 44}, {20, 44}, {44, 20}, {20, 20}};
    std::vector<SynthSample> out;
    for (int i = 0; i < n_images; ++i) {
        SynthSample s;
        s.image = make_image(image_size, image_size, 1, 32);
        if (i == 0) paint_label(s, {cls_d(rng), 0.5, 0.5, 1.0, 1.0}, image_size, n_classes);
        const double* mc = mid_centers[i % 4];
        paint_label(s, {cls_d(rng), mc[0] / S, mc[1] / S, 32 / S, 32 / S}, image_size,
                    n_classes);
        const double* sc = small_centers[i % 4];
        paint_label(s, {cls_d(rng), sc[0] / S, sc[1] / S, 16 / S, 16 / S}, image_size,
                    n_classes);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prediction text format: "image_id class_id score x1 y1 x2 y2"
// ---------------------------------------------------------------------------

inline std::string format_predictions(const std::vector<Detection>& dets) {
    std::ostringstream os;
    for (const auto& d : dets)
        os << d.image_id << " " << d.class_id << " " << d.score << " " << d.box.x1 << " "
           << d.box.y1 << " " << d.box.x2 << " " << d.box.y2 << "\n";
    return os.str();
}

inline std::vector<Detection> parse_predictions(const std::string& text) {
    std::vector<Detection> out;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        Detection d;
        if (!(ls >> d.image_id >> d.class_id >> d.score >> d.box.x1 >> d.box.y1 >> d.box.x2 >>
              d.box.y2))
            throw std::invalid_argument("prediction parse error at line " + std::to_string(lineno));
        out.push_back(d);
    }
    return out;
}

inline std::vector<std::string> default_class_names() {
    return {"boneanomaly", "bonelesion", "foreignbody", "fracture", "metal",
            "periostealreaction", "pronatorsign", "softtissue", "text"};
}

}  // namespace fcey
