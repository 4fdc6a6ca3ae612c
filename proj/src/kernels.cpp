#include "crowd/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

#include "crowd/parallel.hpp"

namespace crowd {

namespace {

using Index = std::ptrdiff_t;

// Output rows/cols [lo, hi) whose source index i + offset stays inside [0, extent).
struct Span1 {
    Index lo;
    Index hi;
};

Span1 valid_range(Index extent, Index offset) {
    return {std::max<Index>(0, -offset), std::min<Index>(extent, extent - offset)};
}

}  // namespace

namespace kernels {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
    const Index channels = static_cast<Index>(g.input.c);
    const Index height = static_cast<Index>(g.input.h);
    const Index width = static_cast<Index>(g.input.w);
    const Index out_channels = static_cast<Index>(g.out_channels);
    const Index k = static_cast<Index>(g.kernel);
    const Index pad = static_cast<Index>(g.pad());
    const Index plane = height * width;
    const Index planes = static_cast<Index>(g.input.n) * out_channels;

#pragma omp parallel for schedule(static) if (parallel::enabled())
    for (Index p = 0; p < planes; ++p) {
        const Index n = p / out_channels;
        const Index oc = p % out_channels;
        T* o = out.data() + p * plane;
        std::fill(o, o + plane, bias.empty() ? T{0} : bias[oc]);
        for (Index ic = 0; ic < channels; ++ic) {
            const T* src = in.data() + (n * channels + ic) * plane;
            const T* wk = weight.data() + (oc * channels + ic) * k * k;
            for (Index ky = 0; ky < k; ++ky) {
                const Index dy = ky - pad;
                const Span1 ys = valid_range(height, dy);
                for (Index kx = 0; kx < k; ++kx) {
                    const Index dx = kx - pad;
                    const Span1 xs = valid_range(width, dx);
                    const T wv = wk[ky * k + kx];
                    for (Index y = ys.lo; y < ys.hi; ++y) {
                        T* orow = o + y * width;
                        const T* srow = src + (y + dy) * width + dx;
                        for (Index x = xs.lo; x < xs.hi; ++x) {
                            orow[x] += wv * srow[x];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in) {
    const Index channels = static_cast<Index>(g.input.c);
    const Index height = static_cast<Index>(g.input.h);
    const Index width = static_cast<Index>(g.input.w);
    const Index out_channels = static_cast<Index>(g.out_channels);
    const Index k = static_cast<Index>(g.kernel);
    const Index pad = static_cast<Index>(g.pad());
    const Index plane = height * width;
    const Index planes = static_cast<Index>(g.input.n) * channels;

#pragma omp parallel for schedule(static) if (parallel::enabled())
    for (Index p = 0; p < planes; ++p) {
        const Index n = p / channels;
        const Index ic = p % channels;
        T* gi = grad_in.data() + p * plane;
        std::fill(gi, gi + plane, T{0});
        for (Index oc = 0; oc < out_channels; ++oc) {
            const T* go = grad_out.data() + (n * out_channels + oc) * plane;
            const T* wk = weight.data() + (oc * channels + ic) * k * k;
            for (Index ky = 0; ky < k; ++ky) {
                const Index dy = ky - pad;
                const Span1 ys = valid_range(height, dy);
                for (Index kx = 0; kx < k; ++kx) {
                    const Index dx = kx - pad;
                    const Span1 xs = valid_range(width, dx);
                    const T wv = wk[ky * k + kx];
                    for (Index y = ys.lo; y < ys.hi; ++y) {
                        const T* grow = go + y * width;
                        T* irow = gi + (y + dy) * width + dx;
                        for (Index x = xs.lo; x < xs.hi; ++x) {
                            irow[x] += wv * grow[x];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in,
                            std::span<const T> grad_out, std::span<T> grad_weight,
                            std::span<T> grad_bias) {
    const Index batch = static_cast<Index>(g.input.n);
    const Index channels = static_cast<Index>(g.input.c);
    const Index height = static_cast<Index>(g.input.h);
    const Index width = static_cast<Index>(g.input.w);
    const Index out_channels = static_cast<Index>(g.out_channels);
    const Index k = static_cast<Index>(g.kernel);
    const Index pad = static_cast<Index>(g.pad());
    const Index plane = height * width;
    const Index pairs = out_channels * channels;

#pragma omp parallel for schedule(static) if (parallel::enabled())
    for (Index p = 0; p < pairs; ++p) {
        const Index oc = p / channels;
        const Index ic = p % channels;
        // Column-wise partial sums keep the inner loop vectorizable.
        std::vector<T> column(static_cast<std::size_t>(width));
        for (Index ky = 0; ky < k; ++ky) {
            const Index dy = ky - pad;
            const Span1 ys = valid_range(height, dy);
            for (Index kx = 0; kx < k; ++kx) {
                const Index dx = kx - pad;
                const Span1 xs = valid_range(width, dx);
                std::fill(column.begin(), column.end(), T{0});
                for (Index n = 0; n < batch; ++n) {
                    const T* go = grad_out.data() + (n * out_channels + oc) * plane;
                    const T* src = in.data() + (n * channels + ic) * plane;
                    for (Index y = ys.lo; y < ys.hi; ++y) {
                        const T* grow = go + y * width;
                        const T* srow = src + (y + dy) * width + dx;
                        for (Index x = xs.lo; x < xs.hi; ++x) {
                            column[x] += grow[x] * srow[x];
                        }
                    }
                }
                T sum{0};
                for (Index x = xs.lo; x < xs.hi; ++x) {
                    sum += column[x];
                }
                grad_weight[(oc * channels + ic) * k * k + ky * k + kx] += sum;
            }
        }
    }

    if (grad_bias.empty()) {
        return;
    }
#pragma omp parallel for schedule(static) if (parallel::enabled())
    for (Index oc = 0; oc < out_channels; ++oc) {
        T sum{0};
        for (Index n = 0; n < batch; ++n) {
            const T* go = grad_out.data() + (n * out_channels + oc) * plane;
            for (Index i = 0; i < plane; ++i) {
                sum += go[i];
            }
        }
        grad_bias[oc] += sum;
    }
}

template void conv2d_forward<float>(const ConvGeometry&, std::span<const float>,
                                    std::span<const float>, std::span<const float>,
                                    std::span<float>);
template void conv2d_forward<double>(const ConvGeometry&, std::span<const double>,
                                     std::span<const double>, std::span<const double>,
                                     std::span<double>);
template void conv2d_backward_input<float>(const ConvGeometry&, std::span<const float>,
                                           std::span<const float>, std::span<float>);
template void conv2d_backward_input<double>(const ConvGeometry&, std::span<const double>,
                                            std::span<const double>, std::span<double>);
template void conv2d_backward_params<float>(const ConvGeometry&, std::span<const float>,
                                            std::span<const float>, std::span<float>,
                                            std::span<float>);
template void conv2d_backward_params<double>(const ConvGeometry&, std::span<const double>,
                                             std::span<const double>, std::span<double>,
                                             std::span<double>);

}  // namespace kernels

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
    const Index N = static_cast<Index>(g.input.n);
    const Index C = static_cast<Index>(g.input.c);
    const Index H = static_cast<Index>(g.input.h);
    const Index W = static_cast<Index>(g.input.w);
    const Index OC = static_cast<Index>(g.out_channels);
    const Index K = static_cast<Index>(g.kernel);
    const Index P = static_cast<Index>(g.pad());
    for (Index n = 0; n < N; ++n)
        for (Index oc = 0; oc < OC; ++oc)
            for (Index y = 0; y < H; ++y)
                for (Index x = 0; x < W; ++x) {
                    T sum = bias.empty() ? T{0} : bias[oc];
                    for (Index ic = 0; ic < C; ++ic)
                        for (Index ky = 0; ky < K; ++ky)
                            for (Index kx = 0; kx < K; ++kx) {
                                const Index sy = y + ky - P;
                                const Index sx = x + kx - P;
                                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                sum += weight[((oc * C + ic) * K + ky) * K + kx] *
                                       in[((n * C + ic) * H + sy) * W + sx];
                            }
                    out[((n * OC + oc) * H + y) * W + x] = sum;
                }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in) {
    const Index N = static_cast<Index>(g.input.n);
    const Index C = static_cast<Index>(g.input.c);
    const Index H = static_cast<Index>(g.input.h);
    const Index W = static_cast<Index>(g.input.w);
    const Index OC = static_cast<Index>(g.out_channels);
    const Index K = static_cast<Index>(g.kernel);
    const Index P = static_cast<Index>(g.pad());
    std::fill(grad_in.begin(), grad_in.end(), T{0});
    for (Index n = 0; n < N; ++n)
        for (Index oc = 0; oc < OC; ++oc)
            for (Index y = 0; y < H; ++y)
                for (Index x = 0; x < W; ++x) {
                    const T go = grad_out[((n * OC + oc) * H + y) * W + x];
                    for (Index ic = 0; ic < C; ++ic)
                        for (Index ky = 0; ky < K; ++ky)
                            for (Index kx = 0; kx < K; ++kx) {
                                const Index sy = y + ky - P;
                                const Index sx = x + kx - P;
                                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                grad_in[((n * C + ic) * H + sy) * W + sx] +=
                                    weight[((oc * C + ic) * K + ky) * K + kx] * go;
                            }
                }
}

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in,
                            std::span<const T> grad_out, std::span<T> grad_weight,
                            std::span<T> grad_bias) {
    const Index N = static_cast<Index>(g.input.n);
    const Index C = static_cast<Index>(g.input.c);
    const Index H = static_cast<Index>(g.input.h);
    const Index W = static_cast<Index>(g.input.w);
    const Index OC = static_cast<Index>(g.out_channels);
    const Index K = static_cast<Index>(g.kernel);
    const Index P = static_cast<Index>(g.pad());
    for (Index n = 0; n < N; ++n)
        for (Index oc = 0; oc < OC; ++oc)
            for (Index y = 0; y < H; ++y)
                for (Index x = 0; x < W; ++x) {
                    const T go = grad_out[((n * OC + oc) * H + y) * W + x];
                    if (!grad_bias.empty()) grad_bias[oc] += go;
                    for (Index ic = 0; ic < C; ++ic)
                        for (Index ky = 0; ky < K; ++ky)
                            for (Index kx = 0; kx < K; ++kx) {
                                const Index sy = y + ky - P;
                                const Index sx = x + kx - P;
                                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                                grad_weight[((oc * C + ic) * K + ky) * K + kx] +=
                                    go * in[((n * C + ic) * H + sy) * W + sx];
                            }
                }
}

template void conv2d_forward<float>(const ConvGeometry&, std::span<const float>,
                                    std::span<const float>, std::span<const float>,
                                    std::span<float>);
template void conv2d_forward<double>(const ConvGeometry&, std::span<const double>,
                                     std::span<const double>, std::span<const double>,
                                     std::span<double>);
template void conv2d_backward_input<float>(const ConvGeometry&, std::span<const float>,
                                           std::span<const float>, std::span<float>);
template void conv2d_backward_input<double>(const ConvGeometry&, std::span<const double>,
                                            std::span<const double>, std::span<double>);
template void conv2d_backward_params<float>(const ConvGeometry&, std::span<const float>,
                                            std::span<const float>, std::span<float>,
                                            std::span<float>);
template void conv2d_backward_params<double>(const ConvGeometry&, std::span<const double>,
                                             std::span<const double>, std::span<double>,
                                             std::span<double>);

}  // namespace reference

}  // namespace crowd
