#pragma once

// Raw convolution kernels for stride-1, "same"-padded square filters.
//
// crowd::kernels holds the production loops: OpenMP-parallel over
// independent output planes, with a fixed per-element accumulation order so
// that the parallel and sequential runs are bit-identical.
// crowd::reference holds plain nested-loop versions used as test oracles and
// as the baseline in the benchmark.

#include <cstddef>
#include <span>

#include "crowd/tensor.hpp"

namespace crowd {

struct ConvGeometry {
    Shape4 input;               // (n, in_channels, h, w)
    std::size_t out_channels = 0;
    std::size_t kernel = 1;     // odd; padding is kernel / 2

    std::size_t pad() const { return kernel / 2; }
    Shape4 output() const { return {input.n, out_channels, input.h, input.w}; }
    Shape4 weight() const { return {out_channels, input.c, kernel, kernel}; }
};

namespace kernels {

// out = conv(in, weight) + bias; bias may be empty.
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

// grad_in = conv^T(grad_out, weight); overwrites grad_in.
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in);

// grad_weight += d/dW, grad_bias += d/db (grad_bias may be empty).
template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in,
                            std::span<const T> grad_out, std::span<T> grad_weight,
                            std::span<T> grad_bias);

}  // namespace kernels

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in);

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in,
                            std::span<const T> grad_out, std::span<T> grad_weight,
                            std::span<T> grad_bias);

}  // namespace reference

}  // namespace crowd
