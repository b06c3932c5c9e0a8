#pragma once

#include <algorithm>
#include <cstddef>

namespace wt::kernels {

/// c[m x n] += a[m x k] * b[k x n], all row-major and densely packed.
/// Each output element sums over k in ascending order regardless of the
/// blocking path taken, so results are reproducible bit for bit.
template <typename T>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a, const T* __restrict b,
              T* __restrict c) {
    constexpr std::size_t kColumnBlock = 256;
    for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
        const std::size_t width = std::min(kColumnBlock, n - j0);
        std::size_t i = 0;
        for (; i + 4 <= m; i += 4) {
            T* __restrict c0 = c + i * n + j0;
            T* __restrict c1 = c0 + n;
            T* __restrict c2 = c1 + n;
            T* __restrict c3 = c2 + n;
            const T* a0 = a + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const T w0 = a0[p];
                const T w1 = a0[k + p];
                const T w2 = a0[2 * k + p];
                const T w3 = a0[3 * k + p];
                const T* __restrict row = b + p * n + j0;
                for (std::size_t j = 0; j < width; ++j) {
                    const T v = row[j];
                    c0[j] += w0 * v;
                    c1[j] += w1 * v;
                    c2[j] += w2 * v;
                    c3[j] += w3 * v;
                }
            }
        }
        for (; i < m; ++i) {
            T* __restrict ci = c + i * n + j0;
            const T* ai = a + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const T w = ai[p];
                const T* __restrict row = b + p * n + j0;
                for (std::size_t j = 0; j < width; ++j) ci[j] += w * row[j];
            }
        }
    }
}

/// c[m x n] += a[m x k] * b[n x k]^T. Dot products over k keep kLanes
/// interleaved partial sums (combined in a fixed order), so the loop
/// vectorizes while staying reproducible. 4x4 output tiles share loads.
template <typename T>
void gemm_abt_acc(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a, const T* __restrict b,
                  T* __restrict c) {
    constexpr std::size_t kLanes = 16;
    const std::size_t body = k - k % kLanes;
    auto finish = [&](const T* lanes, std::size_t i, std::size_t j) {
        T total = T(0);
        for (std::size_t l = 0; l < kLanes; ++l) total += lanes[l];
        for (std::size_t p = body; p < k; ++p) total += a[i * k + p] * b[j * k + p];
        c[i * n + j] += total;
    };
    auto single = [&](std::size_t i, std::size_t j) {
        T lanes[kLanes] = {};
        const T* ap = a + i * k;
        const T* bp = b + j * k;
        for (std::size_t p = 0; p < body; p += kLanes) {
            for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += ap[p + l] * bp[p + l];
        }
        finish(lanes, i, j);
    };
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            T acc[4][4][kLanes] = {};
            for (std::size_t p = 0; p < body; p += kLanes) {
                for (std::size_t ii = 0; ii < 4; ++ii) {
                    const T* ap = a + (i + ii) * k + p;
                    for (std::size_t jj = 0; jj < 4; ++jj) {
                        const T* bp = b + (j + jj) * k + p;
                        for (std::size_t l = 0; l < kLanes; ++l) acc[ii][jj][l] += ap[l] * bp[l];
                    }
                }
            }
            for (std::size_t ii = 0; ii < 4; ++ii) {
                for (std::size_t jj = 0; jj < 4; ++jj) finish(acc[ii][jj], i + ii, j + jj);
            }
        }
        for (; j < n; ++j) {
            for (std::size_t ii = 0; ii < 4; ++ii) single(i + ii, j);
        }
    }
    for (; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) single(i, j);
    }
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* __restrict src, T* __restrict dst) {
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
    }
}

struct ConvGeometry {
    std::size_t channels, height, width;
    std::size_t kernel_h, kernel_w;
    std::size_t stride, padding;
    std::size_t out_h, out_w;

    std::size_t patch() const { return channels * kernel_h * kernel_w; }
    std::size_t positions() const { return out_h * out_w; }
};

/// Unfolds one image [C,H,W] into the columns of col[C*kH*kW][ld] starting at
/// the current pointer (zero padding). `ld` is the row stride of col.
template <typename T>
void im2col(const ConvGeometry& g, const T* __restrict image, T* __restrict col, std::size_t ld) {
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                T* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * ld;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
                    T* out = row + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) out[ox] = T(0);
                        continue;
                    }
                    const T* src = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.padding);
                        out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                                      ? T(0)
                                      : src[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters col back into image, accumulating.
template <typename T>
void col2im_acc(const ConvGeometry& g, const T* __restrict col, std::size_t ld, T* __restrict image) {
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const T* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * ld;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    T* dst = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    const T* in = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.padding);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += in[ox];
                    }
                }
            }
        }
    }
}

}  // namespace wt::kernels
