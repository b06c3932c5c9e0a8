#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "wt/error.hpp"
#include "wt/models.hpp"
#include "wt/netpbm.hpp"
#include "wt/ops.hpp"

namespace wt {

/// Nonnegative 2-D map, row-major.
struct Heatmap {
    std::size_t height = 0, width = 0;
    std::vector<double> values;
    std::string layer;
    int cls = 0;

    double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

/// L = ReLU(sum_k alpha_k A^k) with alpha_k the spatial mean of dY/dA^k.
/// `activation` and `grad` are [K, h, w].
inline Heatmap gradcam_from(std::span<const float> activation, std::span<const float> grad, std::size_t maps,
                            std::size_t height, std::size_t width) {
    const std::size_t plane = height * width;
    require(maps > 0 && plane > 0, ErrorKind::invalid_argument, "gradcam: empty activation");
    require(activation.size() == maps * plane && grad.size() == maps * plane, ErrorKind::shape,
            "gradcam: activation/gradient sizes do not match [" + std::to_string(maps) + ", " + std::to_string(height) +
                ", " + std::to_string(width) + "]");
    Heatmap h;
    h.height = height;
    h.width = width;
    h.values.assign(plane, 0.0);
    for (std::size_t k = 0; k < maps; ++k) {
        double alpha = 0.0;
        for (std::size_t i = 0; i < plane; ++i) alpha += grad[k * plane + i];
        alpha /= static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) h.values[i] += alpha * activation[k * plane + i];
    }
    for (auto& v : h.values) v = std::max(v, 0.0);
    return h;
}

/// Grad-CAM of `layer` for class `cls` on a single image [1, C, H, W]. The
/// target is the pre-softmax logit. Parameter gradients are cleared again
/// afterwards so training state is untouched.
inline Heatmap gradcam(Model& model, const Tensor& image, int cls, const std::string& layer) {
    require(image.rank() == 4 && image.dim(0) == 1, ErrorKind::shape,
            "gradcam: expected a single image [1, C, H, W], got " + to_string(image.shape()));
    require(cls >= 0 && cls < static_cast<int>(model.spec().num_classes), ErrorKind::invalid_argument,
            "gradcam: class " + std::to_string(cls) + " out of range");
    const auto convs = model.feature_layers();
    if (std::find(convs.begin(), convs.end(), layer) == convs.end()) {
        const auto dense = model.dense_layers();
        if (std::find(dense.begin(), dense.end(), layer) != dense.end()) {
            fail(ErrorKind::invalid_argument, "gradcam: '" + layer + "' is not a convolutional layer");
        }
        fail(ErrorKind::invalid_argument, "gradcam: unknown layer '" + layer + "'");
    }
    Tape::current().clear();
    model.params().zero_grad();
    FeatureMaps features;
    const Tensor logits = model.forward(image, false, &features);
    const Tensor& act = features.at(layer);
    const Tensor target = pick(logits, static_cast<std::size_t>(cls));
    backward(target);
    const auto grad = act.has_grad() ? std::vector<float>(act.grad().begin(), act.grad().end())
                                     : std::vector<float>(act.numel(), 0.0f);
    Heatmap h = gradcam_from(act.data(), grad, act.dim(1), act.dim(2), act.dim(3));
    h.layer = layer;
    h.cls = cls;
    model.params().zero_grad();
    return h;
}

/// Frobenius distance between two raw heatmaps of the same layer and class.
inline double attention_shift(const Heatmap& a, const Heatmap& b) {
    require(a.height == b.height && a.width == b.width && a.values.size() == b.values.size(), ErrorKind::shape,
            "attention_shift: heatmap shapes differ (" + std::to_string(a.height) + "x" + std::to_string(a.width) +
                " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
    require(a.layer == b.layer && a.cls == b.cls, ErrorKind::invalid_argument,
            "attention_shift: heatmaps come from different layers or classes");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

/// Half-pixel-centred bilinear resize with edge clamping. A convex
/// combination of inputs, so nonnegativity is preserved.
inline Heatmap upsample_bilinear(const Heatmap& h, std::size_t out_h, std::size_t out_w) {
    require(out_h > 0 && out_w > 0, ErrorKind::invalid_argument, "upsample: zero output size");
    Heatmap out;
    out.height = out_h;
    out.width = out_w;
    out.layer = h.layer;
    out.cls = h.cls;
    out.values.resize(out_h * out_w);
    auto coord = [](std::size_t o, std::size_t in, std::size_t out_n, std::size_t& i0, std::size_t& i1, double& t) {
        double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out_n) - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        i0 = static_cast<std::size_t>(std::floor(src));
        i1 = std::min(i0 + 1, in - 1);
        t = src - static_cast<double>(i0);
    };
    for (std::size_t y = 0; y < out_h; ++y) {
        std::size_t y0, y1;
        double ty;
        coord(y, h.height, out_h, y0, y1, ty);
        for (std::size_t x = 0; x < out_w; ++x) {
            std::size_t x0, x1;
            double tx;
            coord(x, h.width, out_w, x0, x1, tx);
            const double top = (1 - tx) * h.at(y0, x0) + tx * h.at(y0, x1);
            const double bottom = (1 - tx) * h.at(y1, x0) + tx * h.at(y1, x1);
            out.values[y * out_w + x] = (1 - ty) * top + ty * bottom;
        }
    }
    return out;
}

/// Copy scaled so the maximum is 1 (unchanged when the map is all zero).
inline Heatmap normalized(const Heatmap& h) {
    Heatmap out = h;
    const double peak = h.values.empty() ? 0.0 : *std::max_element(h.values.begin(), h.values.end());
    if (peak > 0.0) {
        for (auto& v : out.values) v /= peak;
    }
    return out;
}

struct Rgb {
    double r, g, b;
};

/// Jet-like ramp: 0 -> blue, 0.5 -> green, 1 -> red.
inline Rgb jet(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return {std::clamp(4.0 * v - 2.0, 0.0, 1.0), std::clamp(2.0 - std::fabs(4.0 * v - 2.0), 0.0, 1.0),
            std::clamp(2.0 - 4.0 * v, 0.0, 1.0)};
}

/// Colour overlay (P6-ready) of a heatmap on the grayscale version of `image`.
/// The heatmap is resized to the image and normalized first.
inline Image8 heatmap_render(const Heatmap& heatmap, const Image8& image) {
    require(image.channels == 1 || image.channels == 3, ErrorKind::invalid_argument,
            "heatmap_render: image must have 1 or 3 channels");
    Heatmap h = heatmap;
    if (h.height != image.height || h.width != image.width) h = upsample_bilinear(h, image.height, image.width);
    h = normalized(h);
    Image8 out(image.width, image.height, 3);
    for (std::size_t y = 0; y < image.height; ++y) {
        for (std::size_t x = 0; x < image.width; ++x) {
            double gray = image.at(x, y, 0);
            if (image.channels == 3) {
                gray = 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) + 0.114 * image.at(x, y, 2);
            }
            const Rgb c = jet(h.at(y, x));
            const double rgb[3] = {c.r, c.g, c.b};
            for (std::size_t k = 0; k < 3; ++k) {
                out.at(x, y, k) = static_cast<std::uint8_t>(std::lround(std::clamp(0.5 * 255.0 * rgb[k] + 0.5 * gray, 0.0, 255.0)));
            }
        }
    }
    return out;
}

}  // namespace wt
