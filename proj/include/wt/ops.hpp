#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "wt/gemm.hpp"
#include "wt/tensor.hpp"

// Differentiable operations. Every op computes its forward result eagerly and,
// when any input requires a gradient and the tape is recording, appends a
// backward rule to the current thread's tape.

namespace wt {

namespace detail {

template <typename T>
void check_rank(const BasicTensor<T>& t, std::size_t rank, const char* op, const char* what) {
    require(t.defined(), ErrorKind::shape, std::string(op) + ": " + what + " is undefined");
    if (t.rank() != rank) {
        fail(ErrorKind::shape, std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                                   ", got " + to_string(t.shape()));
    }
}

template <typename T>
void accumulate(const BasicTensor<T>& target, std::span<const T> delta) {
    if (!target.requires_grad()) return;
    auto g = target.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require(a.shape() == b.shape(), ErrorKind::shape,
            "add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    BasicTensor<T> out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    auto& tape = BasicTape<T>::current();
    if (tape.wants({&a, &b})) {
        tape.record("add", {a, b}, out, [a, b, out] {
            auto g = out.grad();
            detail::accumulate<T>(a, g);
            detail::accumulate<T>(b, g);
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require(a.shape() == b.shape(), ErrorKind::shape,
            "mul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    BasicTensor<T> out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
    auto& tape = BasicTape<T>::current();
    if (tape.wants({&a, &b})) {
        tape.record("mul", {a, b}, out, [a, b, out] {
            auto g = out.grad();
            auto x = a.data();
            auto y = b.data();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
    BasicTensor<T> out(a.shape());
    auto o = out.data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
    auto& tape = BasicTape<T>::current();
    if (tape.wants({&a})) {
        tape.record("scale", {a}, out, [a, out, factor] {
            auto g = out.grad();
            auto ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
        });
    }
    return out;
}

/// Sum of all elements, as a shape-[1] tensor.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
    T total = T(0);
    for (T v : a.data()) total += v;
    auto out = BasicTensor<T>::scalar(total);
    auto& tape = BasicTape<T>::current();
    if (tape.wants({&a})) {
        tape.record("sum", {a}, out, [a, out] {
            const T g = out.grad()[0];
            for (auto& ga : a.grad()) ga += g;
        });
    }
    return out;
}

/// Single element at a flat index, as a shape-[1] tensor.
template <typename T>
BasicTensor<T> pick(const BasicTensor<T>& a, std::size_t flat_index) {
    require(flat_index < a.numel(), ErrorKind::shape,
            "pick: index " + std::to_string(flat_index) + " out of range for " + to_string(a.shape()));
    auto out = BasicTensor<T>::scalar(a[flat_index]);
    auto& tape = BasicTape<T>::current();
    if (tape.wants({&a})) {
        tape.record("pick", {a}, out, [a, out, flat_index] { a.grad()[flat_index] += out.grad()[0]; });
    }
    return out;
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
    require(element_count(shape) == a.numel(), ErrorKind::shape,
            "reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    BasicTensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
    auto& tape = BasicTape<T>::current();
    if (tape.wants({&a})) {
        tape.record("reshape", {a}, out, [a, out] { detail::accumulate<T>(a, out.grad()); });
    }
    return out;
}

/// [N, ...] -> [N, prod(...)]
template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& a) {
    return reshape(a, Shape{a.dim(0), a.numel() / a.dim(0)});
}

/// Effective weight `mask ? w : 0`. Gradient flows only through kept entries.
template <typename T>
BasicTensor<T> apply_mask(const BasicTensor<T>& w, std::span<const std::uint8_t> mask) {
    require(mask.size() == w.numel(), ErrorKind::shape,
            "apply_mask: mask has " + std::to_string(mask.size()) + " entries for tensor " + to_string(w.shape()));
    BasicTensor<T> out(w.shape());
    auto o = out.data();
    auto x = w.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = mask[i] ? x[i] : T(0);
    auto& tape = BasicTape<T>::current();
    if (tape.wants({&w})) {
        tape.record("apply_mask", {w}, out, [w, out, kept = std::vector<std::uint8_t>(mask.begin(), mask.end())] {
            auto g = out.grad();
            auto gw = w.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (kept[i]) gw[i] += g[i];
            }
        });
    }
    return out;
}

/// max(x, slope * x) for slope in [0, 1). The subgradient at exactly 0 is `slope`.
template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& a, T slope) {
    require(slope >= T(0) && slope < T(1), ErrorKind::invalid_argument, "leaky_relu: slope must lie in [0, 1)");
    BasicTensor<T> out(a.shape());
    auto o = out.data();
    auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > T(0) ? x[i] : slope * x[i];
    auto& tape = BasicTape<T>::current();
    if (tape.wants({&a})) {
        tape.record("leaky_relu", {a}, out, [a, out, slope] {
            auto g = out.grad();
            auto x = a.data();
            auto ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > T(0) ? g[i] : slope * g[i];
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
    return leaky_relu(a, T(0));
}

/// Cross-correlation of input [N,C,H,W] with kernel [F,C,kH,kW] plus bias [F]
/// (bias may be undefined). Zero padding on all sides.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      std::size_t stride = 1, std::size_t padding = 0) {
    detail::check_rank(input, 4, "conv2d", "input");
    detail::check_rank(kernel, 4, "conv2d", "kernel");
    require(stride >= 1, ErrorKind::invalid_argument, "conv2d: stride must be >= 1");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t f = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != c) {
        fail(ErrorKind::shape, "conv2d: input " + to_string(input.shape()) + " has " + std::to_string(c) +
                                   " channels but kernel " + to_string(kernel.shape()) + " expects " +
                                   std::to_string(kernel.dim(1)));
    }
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        fail(ErrorKind::shape, "conv2d: kernel " + to_string(kernel.shape()) + " larger than padded input " +
                                   to_string(input.shape()) + " (padding " + std::to_string(padding) + ")");
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != f)) {
        fail(ErrorKind::shape,
             "conv2d: bias " + to_string(bias.shape()) + " does not match kernel " + to_string(kernel.shape()));
    }
    const kernels::ConvGeometry geo{c, h, w, kh, kw, stride, padding, (h + 2 * padding - kh) / stride + 1,
                                    (w + 2 * padding - kw) / stride + 1};
    const std::size_t patch = geo.patch(), positions = geo.positions();
    const std::size_t in_size = c * h * w, cols = n * positions;

    // All samples are unfolded side by side so each product has a long inner
    // dimension: col[patch][n * positions].
    std::vector<T> col(patch * cols);
    for (std::size_t s = 0; s < n; ++s) kernels::im2col(geo, input.ptr() + s * in_size, col.data() + s * positions, cols);
    std::vector<T> prod(f * cols, T(0));
    kernels::gemm_acc(f, cols, patch, kernel.ptr(), col.data(), prod.data());

    BasicTensor<T> out(Shape{n, f, geo.out_h, geo.out_w});
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t o = 0; o < f; ++o) {
            const T b = bias.defined() ? bias[o] : T(0);
            const T* src = prod.data() + o * cols + s * positions;
            T* dst = out.ptr() + (s * f + o) * positions;
            for (std::size_t p = 0; p < positions; ++p) dst[p] = src[p] + b;
        }
    }

    auto& tape = BasicTape<T>::current();
    if (tape.wants({&input, &kernel, &bias})) {
        tape.record("conv2d", {input, kernel, bias}, out, [input, kernel, bias, out, geo, n, f] {
            const std::size_t patch = geo.patch(), positions = geo.positions();
            const std::size_t in_size = geo.channels * geo.height * geo.width, cols = n * positions;
            const T* dout = out.grad().data();
            // grad[f][n * positions], matching the column layout used above.
            std::vector<T> grad(f * cols);
            for (std::size_t s = 0; s < n; ++s) {
                for (std::size_t o = 0; o < f; ++o) {
                    std::copy_n(dout + (s * f + o) * positions, positions, grad.data() + o * cols + s * positions);
                }
            }
            std::vector<T> col(patch * cols);
            if (kernel.requires_grad()) {
                for (std::size_t s = 0; s < n; ++s) {
                    kernels::im2col(geo, input.ptr() + s * in_size, col.data() + s * positions, cols);
                }
                kernels::gemm_abt_acc(f, patch, cols, grad.data(), col.data(), kernel.grad().data());
            }
            if (input.requires_grad()) {
                std::vector<T> kernel_t(f * patch);
                kernels::transpose(f, patch, kernel.ptr(), kernel_t.data());
                std::fill(col.begin(), col.end(), T(0));
                kernels::gemm_acc(patch, cols, f, kernel_t.data(), grad.data(), col.data());
                T* gi = input.grad().data();
                for (std::size_t s = 0; s < n; ++s) {
                    kernels::col2im_acc(geo, col.data() + s * positions, cols, gi + s * in_size);
                }
            }
            if (bias.defined() && bias.requires_grad()) {
                auto gb = bias.grad();
                for (std::size_t o = 0; o < f; ++o) {
                    T acc = T(0);
                    for (std::size_t q = 0; q < cols; ++q) acc += grad[o * cols + q];
                    gb[o] += acc;
                }
            }
        });
    }
    return out;
}

/// out[n,o] = sum_d input[n,d] * weight[o,d] + bias[o]
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    detail::check_rank(input, 2, "linear", "input");
    detail::check_rank(weight, 2, "linear", "weight");
    const std::size_t n = input.dim(0), d = input.dim(1), o = weight.dim(0);
    if (weight.dim(1) != d) {
        fail(ErrorKind::shape, "linear: input " + to_string(input.shape()) + " incompatible with weight " +
                                   to_string(weight.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) {
        fail(ErrorKind::shape,
             "linear: bias " + to_string(bias.shape()) + " does not match weight " + to_string(weight.shape()));
    }
    BasicTensor<T> out(Shape{n, o});
    if (bias.defined()) {
        for (std::size_t r = 0; r < n; ++r) std::copy_n(bias.ptr(), o, out.ptr() + r * o);
    }
    std::vector<T> weight_t(d * o);
    kernels::transpose(o, d, weight.ptr(), weight_t.data());
    kernels::gemm_acc(n, o, d, input.ptr(), weight_t.data(), out.ptr());

    auto& tape = BasicTape<T>::current();
    if (tape.wants({&input, &weight, &bias})) {
        tape.record("linear", {input, weight, bias}, out, [input, weight, bias, out, n, d, o] {
            const T* g = out.grad().data();
            if (input.requires_grad()) kernels::gemm_acc(n, d, o, g, weight.ptr(), input.grad().data());
            if (weight.requires_grad()) {
                std::vector<T> g_t(o * n);
                kernels::transpose(n, o, g, g_t.data());
                kernels::gemm_acc(o, d, n, g_t.data(), input.ptr(), weight.grad().data());
            }
            if (bias.defined() && bias.requires_grad()) {
                auto gb = bias.grad();
                for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t j = 0; j < o; ++j) gb[j] += g[r * o + j];
                }
            }
        });
    }
    return out;
}

/// Running statistics owned by a batch-norm layer; updated in place during
/// training-mode forward passes.
template <typename T>
struct BatchNormStats {
    BasicTensor<T> running_mean;
    BasicTensor<T> running_var;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                           const BatchNormStats<T>& stats, bool training) {
    detail::check_rank(input, 4, "batchnorm2d", "input");
    const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    for (const auto* p : {&gamma, &beta, &stats.running_mean, &stats.running_var}) {
        if (!p->defined() || p->numel() != c) {
            fail(ErrorKind::shape, "batchnorm2d: per-channel parameter does not match input " +
                                       to_string(input.shape()));
        }
    }
    const std::size_t count = n * hw;
    if (training && count < 2) {
        fail(ErrorKind::invalid_argument, "batchnorm2d: training mode needs at least 2 values per channel, input " +
                                              to_string(input.shape()));
    }
    const T eps = static_cast<T>(kBatchNormEps);
    std::vector<T> mean(c), inv_std(c);
    const T* x = input.ptr();
    if (training) {
        const T momentum = static_cast<T>(kBatchNormMomentum);
        for (std::size_t ch = 0; ch < c; ++ch) {
            T acc = T(0);
            for (std::size_t s = 0; s < n; ++s) {
                const T* p = x + (s * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) acc += p[i];
            }
            const T mu = acc / static_cast<T>(count);
            T sq = T(0);
            for (std::size_t s = 0; s < n; ++s) {
                const T* p = x + (s * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const T dlt = p[i] - mu;
                    sq += dlt * dlt;
                }
            }
            const T var = sq / static_cast<T>(count);
            mean[ch] = mu;
            inv_std[ch] = T(1) / std::sqrt(var + eps);
            stats.running_mean[ch] = (T(1) - momentum) * stats.running_mean[ch] + momentum * mu;
            stats.running_var[ch] = (T(1) - momentum) * stats.running_var[ch] +
                                    momentum * (sq / static_cast<T>(count - 1));
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = stats.running_mean[ch];
            inv_std[ch] = T(1) / std::sqrt(stats.running_var[ch] + eps);
        }
    }

    BasicTensor<T> out(input.shape());
    T* y = out.ptr();
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (s * c + ch) * hw;
            const T g = gamma[ch] * inv_std[ch];
            const T b = beta[ch] - g * mean[ch];
            for (std::size_t i = 0; i < hw; ++i) y[base + i] = x[base + i] * g + b;
        }
    }

    auto& tape = BasicTape<T>::current();
    if (tape.wants({&input, &gamma, &beta})) {
        tape.record("batchnorm2d", {input, gamma, beta}, out,
                    [input, gamma, beta, out, mean, inv_std, training, n, c, hw] {
                        const T* dy = out.grad().data();
                        const T* x = input.ptr();
                        const T count = static_cast<T>(n * hw);
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            T sum_dy = T(0), sum_dy_xhat = T(0);
                            for (std::size_t s = 0; s < n; ++s) {
                                const std::size_t base = (s * c + ch) * hw;
                                for (std::size_t i = 0; i < hw; ++i) {
                                    const T xhat = (x[base + i] - mean[ch]) * inv_std[ch];
                                    sum_dy += dy[base + i];
                                    sum_dy_xhat += dy[base + i] * xhat;
                                }
                            }
                            if (gamma.requires_grad()) gamma.grad()[ch] += sum_dy_xhat;
                            if (beta.requires_grad()) beta.grad()[ch] += sum_dy;
                            if (!input.requires_grad()) continue;
                            T* dx = input.grad().data();
                            const T scale_in = gamma[ch] * inv_std[ch];
                            for (std::size_t s = 0; s < n; ++s) {
                                const std::size_t base = (s * c + ch) * hw;
                                for (std::size_t i = 0; i < hw; ++i) {
                                    if (training) {
                                        const T xhat = (x[base + i] - mean[ch]) * inv_std[ch];
                                        dx[base + i] += scale_in / count *
                                                        (count * dy[base + i] - sum_dy - xhat * sum_dy_xhat);
                                    } else {
                                        dx[base + i] += scale_in * dy[base + i];
                                    }
                                }
                            }
                        }
                    });
    }
    return out;
}

/// Max pooling without padding. Gradient goes to the first maximal element of
/// each window.
template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input, std::size_t window, std::size_t stride) {
    detail::check_rank(input, 4, "maxpool2d", "input");
    require(window >= 1 && stride >= 1, ErrorKind::invalid_argument, "maxpool2d: window and stride must be >= 1");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (window > h || window > w) {
        fail(ErrorKind::shape,
             "maxpool2d: window " + std::to_string(window) + " larger than input " + to_string(input.shape()));
    }
    const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
    BasicTensor<T> out(Shape{n, c, oh, ow});
    std::vector<std::size_t> argmax(out.numel());
    const T* x = input.ptr();
    T* y = out.ptr();
    std::size_t k = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox, ++k) {
                std::size_t best = base + oy * stride * w + ox * stride;
                for (std::size_t dy = 0; dy < window; ++dy) {
                    for (std::size_t dx = 0; dx < window; ++dx) {
                        const std::size_t idx = base + (oy * stride + dy) * w + ox * stride + dx;
                        if (x[idx] > x[best]) best = idx;
                    }
                }
                argmax[k] = best;
                y[k] = x[best];
            }
        }
    }
    auto& tape = BasicTape<T>::current();
    if (tape.wants({&input})) {
        tape.record("maxpool2d", {input}, out, [input, out, argmax = std::move(argmax)] {
            auto g = out.grad();
            auto gi = input.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gi[argmax[i]] += g[i];
        });
    }
    return out;
}

/// [N,C,H,W] -> [N,C], mean over spatial positions.
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
    detail::check_rank(input, 4, "global_avg_pool", "input");
    const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    BasicTensor<T> out(Shape{n, c});
    const T* x = input.ptr();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        T acc = T(0);
        for (std::size_t i = 0; i < hw; ++i) acc += x[plane * hw + i];
        out[plane] = acc / static_cast<T>(hw);
    }
    auto& tape = BasicTape<T>::current();
    if (tape.wants({&input})) {
        tape.record("global_avg_pool", {input}, out, [input, out, hw] {
            auto g = out.grad();
            auto gi = input.grad();
            for (std::size_t plane = 0; plane < g.size(); ++plane) {
                const T v = g[plane] / static_cast<T>(hw);
                for (std::size_t i = 0; i < hw; ++i) gi[plane * hw + i] += v;
            }
        });
    }
    return out;
}

/// Mean over the batch of -log softmax(logits)[label], shape [1].
template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
    detail::check_rank(logits, 2, "softmax_cross_entropy", "logits");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    require(labels.size() == n, ErrorKind::shape,
            "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                to_string(logits.shape()));
    std::vector<T> probs(n * k);
    T total = T(0);
    for (std::size_t r = 0; r < n; ++r) {
        const int label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            fail(ErrorKind::invalid_argument, "softmax_cross_entropy: label " + std::to_string(label) +
                                                  " outside [0, " + std::to_string(k) + ")");
        }
        const T* z = logits.ptr() + r * k;
        const T zmax = *std::max_element(z, z + k);
        T denom = T(0);
        for (std::size_t j = 0; j < k; ++j) {
            probs[r * k + j] = std::exp(z[j] - zmax);
            denom += probs[r * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) probs[r * k + j] /= denom;
        total += -(z[label] - zmax - std::log(denom));
    }
    auto out = BasicTensor<T>::scalar(total / static_cast<T>(n));
    auto& tape = BasicTape<T>::current();
    if (tape.wants({&logits})) {
        tape.record("softmax_cross_entropy", {logits}, out,
                    [logits, out, probs = std::move(probs), targets = std::vector<int>(labels.begin(), labels.end()),
                     n, k] {
                        const T g = out.grad()[0] / static_cast<T>(n);
                        auto gl = logits.grad();
                        for (std::size_t r = 0; r < n; ++r) {
                            for (std::size_t j = 0; j < k; ++j) {
                                const T onehot = static_cast<std::size_t>(targets[r]) == j ? T(1) : T(0);
                                gl[r * k + j] += g * (probs[r * k + j] - onehot);
                            }
                        }
                    });
    }
    return out;
}

/// True when every element is finite.
template <typename T>
bool all_finite(const BasicTensor<T>& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace wt
