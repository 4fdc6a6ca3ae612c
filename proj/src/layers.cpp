#include "crowd/layers.hpp"

#include <cmath>
#include <cstddef>
#include <string>

#include "crowd/kernels.hpp"
#include "crowd/parallel.hpp"

namespace crowd {

namespace {

using Index = std::ptrdiff_t;

template <typename T>
std::span<const T> bias_span(const ConvParams<T>& params) {
    return params.bias ? params.bias->values() : std::span<const T>{};
}

template <typename T>
ConvGeometry geometry_for(const Tensor<T>& input, const ConvParams<T>& params) {
    const Shape4& in = input.shape();
    const Shape4& w = params.weight.shape();
    if (in.n == 0) {
        throw ShapeError("conv2d: empty batch");
    }
    if (in.h == 0 || in.w == 0) {
        throw ShapeError("conv2d: zero spatial size in " + in.str());
    }
    if (w.c != in.c) {
        throw ShapeError("conv2d: input " + in.str() + " has " + std::to_string(in.c) +
                         " channels but weight " + w.str() + " expects " + std::to_string(w.c));
    }
    if (w.h != w.w || w.h % 2 == 0) {
        throw ShapeError("conv2d: kernel must be square and odd, got " + w.str());
    }
    if (params.bias && params.bias->size() != w.n) {
        throw ShapeError("conv2d: bias has " + std::to_string(params.bias->size()) +
                         " entries for " + std::to_string(w.n) + " output channels");
    }
    return ConvGeometry{in, w.n, w.h};
}

}  // namespace

template <typename T>
ConvParams<T> make_conv(std::size_t out_channels, std::size_t in_channels, std::size_t kernel,
                        bool with_bias) {
    if (kernel != 1 && kernel != 3) {
        throw ShapeError("make_conv: kernel must be 1 or 3, got " + std::to_string(kernel));
    }
    ConvParams<T> p;
    p.weight = Tensor<T>({out_channels, in_channels, kernel, kernel});
    if (with_bias) {
        p.bias = Tensor<T>({1, out_channels, 1, 1});
    }
    return p;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params) {
    const ConvGeometry g = geometry_for(input, params);
    Tensor<T> out(g.output());
    kernels::conv2d_forward<T>(g, input.values(), params.weight.values(), bias_span(params),
                               out.values());
    return out;
}

template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& grad_out,
                          ConvParams<T>& params) {
    const ConvGeometry g = geometry_for(input, params);
    require_same_shape(grad_out.shape(), g.output(), "conv2d_backward");
    Tensor<T> grad_in(input.shape());
    kernels::conv2d_backward_input<T>(g, grad_out.values(), params.weight.values(),
                                      grad_in.values());
    std::span<T> grad_bias = params.bias ? params.bias->grad() : std::span<T>{};
    kernels::conv2d_backward_params<T>(g, input.values(), grad_out.values(),
                                       params.weight.grad(), grad_bias);
    return grad_in;
}

template <typename T>
BatchNormParams<T> make_batchnorm(std::size_t channels) {
    BatchNormParams<T> p;
    p.gamma = Tensor<T>({1, channels, 1, 1}, T{1});
    p.beta = Tensor<T>({1, channels, 1, 1}, T{0});
    return p;
}

template <typename T>
BatchNormStats<T> make_batchnorm_stats(std::size_t channels) {
    return {std::vector<T>(channels, T{0}), std::vector<T>(channels, T{1})};
}

template <typename T>
Tensor<T> batchnorm_impl(const Tensor<T>& input, const BatchNormParams<T>& params,
                         const BatchNormStats<T>& stats, BatchNormStats<T>* update, Mode mode,
                         BatchNormCache<T>* cache) {
    const Shape4& s = input.shape();
    const Index channels = static_cast<Index>(s.c);
    if (params.channels() != s.c || stats.running_mean.size() != s.c ||
        stats.running_var.size() != s.c) {
        throw ShapeError("batchnorm: parameters sized for " + std::to_string(params.channels()) +
                         " channels, input is " + s.str());
    }
    const std::size_t count = s.n * s.h * s.w;
    if (mode == Mode::train && count < 2) {
        throw ShapeError("batchnorm: train mode needs at least 2 values per channel, input is " +
                         s.str());
    }
    if (s.size() == 0) {
        throw ShapeError("batchnorm: empty input");
    }

    Tensor<T> out(s);
    Tensor<T> normalized(s);
    std::vector<T> inv_std(s.c);
    const std::size_t plane = s.plane();
    const auto x = input.values();
    auto xhat = normalized.values();
    auto y = out.values();

#pragma omp parallel for schedule(static) if (parallel::enabled())
    for (Index c = 0; c < channels; ++c) {
        T mean;
        T var;
        if (mode == Mode::train) {
            T sum{0};
            for (std::size_t n = 0; n < s.n; ++n) {
                const T* src = x.data() + (n * s.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) sum += src[i];
            }
            mean = sum / static_cast<T>(count);
            T sq{0};
            for (std::size_t n = 0; n < s.n; ++n) {
                const T* src = x.data() + (n * s.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const T d = src[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / static_cast<T>(count);
            update->running_mean[c] =
                params.momentum * stats.running_mean[c] + (T{1} - params.momentum) * mean;
            update->running_var[c] =
                params.momentum * stats.running_var[c] + (T{1} - params.momentum) * var;
        } else {
            mean = stats.running_mean[c];
            var = stats.running_var[c];
        }
        const T istd = T{1} / std::sqrt(var + params.epsilon);
        inv_std[c] = istd;
        const T g = params.gamma[c];
        const T b = params.beta[c];
        for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const T h = (x[base + i] - mean) * istd;
                xhat[base + i] = h;
                y[base + i] = g * h + b;
            }
        }
    }

    if (cache != nullptr) {
        cache->mode = mode;
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const BatchNormParams<T>& params,
                    BatchNormStats<T>& stats, Mode mode, BatchNormCache<T>* cache) {
    return batchnorm_impl(input, params, stats, &stats, mode, cache);
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const BatchNormParams<T>& params,
                    const BatchNormStats<T>& stats, BatchNormCache<T>* cache) {
    return batchnorm_impl<T>(input, params, stats, nullptr, Mode::eval, cache);
}

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                             BatchNormParams<T>& params) {
    const Shape4& s = grad_out.shape();
    require_same_shape(s, cache.normalized.shape(), "batchnorm_backward");
    const Index channels = static_cast<Index>(s.c);
    const std::size_t plane = s.plane();
    const T count = static_cast<T>(s.n * plane);
    Tensor<T> grad_in(s);
    const auto go = grad_out.values();
    const auto xhat = cache.normalized.values();
    auto gi = grad_in.values();
    auto dgamma = params.gamma.grad();
    auto dbeta = params.beta.grad();

#pragma omp parallel for schedule(static) if (parallel::enabled())
    for (Index c = 0; c < channels; ++c) {
        T sum_g{0};
        T sum_gx{0};
        for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum_g += go[base + i];
                sum_gx += go[base + i] * xhat[base + i];
            }
        }
        dgamma[c] += sum_gx;
        dbeta[c] += sum_g;
        const T scale = params.gamma[c] * cache.inv_std[c];
        if (cache.mode == Mode::eval) {
            for (std::size_t n = 0; n < s.n; ++n) {
                const std::size_t base = (n * s.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) gi[base + i] = scale * go[base + i];
            }
            continue;
        }
        // dx = gamma * istd * (g - mean(g) - x_hat * mean(g * x_hat))
        const T mean_g = sum_g / count;
        const T mean_gx = sum_gx / count;
        for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                gi[base + i] = scale * (go[base + i] - mean_g - xhat[base + i] * mean_gx);
            }
        }
    }
    return grad_in;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    const auto x = input.values();
    auto y = out.values();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
    require_same_shape(input.shape(), grad_out.shape(), "relu_backward");
    Tensor<T> grad_in(input.shape());
    const auto x = input.values();
    const auto go = grad_out.values();
    auto gi = grad_in.values();
    for (std::size_t i = 0; i < x.size(); ++i) gi[i] = x[i] > T{0} ? go[i] : T{0};
    return grad_in;
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input, PoolIndices* indices) {
    const Shape4& s = input.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0) {
        throw ShapeError("maxpool2: spatial dims must be even (crop first), got " + s.str());
    }
    const Shape4 os{s.n, s.c, s.h / 2, s.w / 2};
    Tensor<T> out(os);
    std::vector<std::uint32_t> argmax(os.size());
    const auto x = input.values();
    auto y = out.values();
    const Index planes = static_cast<Index>(s.n * s.c);

#pragma omp parallel for schedule(static) if (parallel::enabled())
    for (Index p = 0; p < planes; ++p) {
        const std::size_t in_base = static_cast<std::size_t>(p) * s.plane();
        const std::size_t out_base = static_cast<std::size_t>(p) * os.plane();
        for (std::size_t oy = 0; oy < os.h; ++oy) {
            for (std::size_t ox = 0; ox < os.w; ++ox) {
                // Row-major scan with strict '>' keeps the first maximum on ties.
                std::size_t best = in_base + (2 * oy) * s.w + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = in_base + (2 * oy + dy) * s.w + 2 * ox + dx;
                        if (x[idx] > x[best]) best = idx;
                    }
                }
                y[out_base + oy * os.w + ox] = x[best];
                argmax[out_base + oy * os.w + ox] = static_cast<std::uint32_t>(best);
            }
        }
    }
    if (indices != nullptr) {
        indices->input_shape = s;
        indices->argmax = std::move(argmax);
    }
    return out;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& grad_out, const PoolIndices& indices) {
    if (grad_out.size() != indices.argmax.size()) {
        throw ShapeError("maxpool2_backward: gradient " + grad_out.shape().str() +
                         " does not match recorded pooling of " + indices.input_shape.str());
    }
    Tensor<T> grad_in(indices.input_shape);
    const auto go = grad_out.values();
    auto gi = grad_in.values();
    for (std::size_t i = 0; i < go.size(); ++i) gi[indices.argmax[i]] += go[i];
    return grad_in;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out(a.shape());
    const auto x = a.values();
    const auto z = b.values();
    auto y = out.values();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + z[i];
    return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> add_backward(const Tensor<T>& grad_out) {
    return {grad_out.reshaped(grad_out.shape()), grad_out.reshaped(grad_out.shape())};
}

#define CROWD_INSTANTIATE_LAYERS(T)                                                              \
    template ConvParams<T> make_conv<T>(std::size_t, std::size_t, std::size_t, bool);            \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvParams<T>&);                        \
    template Tensor<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, ConvParams<T>&);   \
    template BatchNormParams<T> make_batchnorm<T>(std::size_t);                                  \
    template BatchNormStats<T> make_batchnorm_stats<T>(std::size_t);                             \
    template Tensor<T> batchnorm<T>(const Tensor<T>&, const BatchNormParams<T>&,                 \
                                    BatchNormStats<T>&, Mode, BatchNormCache<T>*);               \
    template Tensor<T> batchnorm<T>(const Tensor<T>&, const BatchNormParams<T>&,                 \
                                    const BatchNormStats<T>&, BatchNormCache<T>*);               \
    template Tensor<T> batchnorm_backward<T>(const Tensor<T>&, const BatchNormCache<T>&,         \
                                             BatchNormParams<T>&);                               \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                \
    template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                     \
    template Tensor<T> maxpool2<T>(const Tensor<T>&, PoolIndices*);                              \
    template Tensor<T> maxpool2_backward<T>(const Tensor<T>&, const PoolIndices&);               \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template std::pair<Tensor<T>, Tensor<T>> add_backward<T>(const Tensor<T>&);

CROWD_INSTANTIATE_LAYERS(float)
CROWD_INSTANTIATE_LAYERS(double)

#undef CROWD_INSTANTIATE_LAYERS

}  // namespace crowd
