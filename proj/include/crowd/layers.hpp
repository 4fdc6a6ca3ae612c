#pragma once

// Forward and analytic backward passes for the fixed layer set used by the
// network: same-padded convolution, batch normalization, ReLU, 2x2 max
// pooling and elementwise addition.
//
// Backward functions that produce parameter gradients accumulate into the
// parameter tensors' gradient buffers; they never overwrite them.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "crowd/tensor.hpp"

namespace crowd {

enum class Mode { train, eval };

template <typename T>
struct ConvParams {
    Tensor<T> weight;               // (out_channels, in_channels, k, k)
    std::optional<Tensor<T>> bias;  // (1, out_channels, 1, 1)

    std::size_t out_channels() const { return weight.shape().n; }
    std::size_t in_channels() const { return weight.shape().c; }
    std::size_t kernel() const { return weight.shape().h; }
};

// Zero-initialized convolution parameters; kernel must be 1 or 3.
template <typename T>
ConvParams<T> make_conv(std::size_t out_channels, std::size_t in_channels, std::size_t kernel,
                        bool with_bias);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params);

// Returns d(loss)/d(input); adds weight and bias gradients into params.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& grad_out,
                          ConvParams<T>& params);

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.99;

// Learnable part of a batch-norm layer.
template <typename T>
struct BatchNormParams {
    Tensor<T> gamma;  // (1, c, 1, 1)
    Tensor<T> beta;   // (1, c, 1, 1)
    T epsilon = static_cast<T>(kBatchNormEpsilon);
    T momentum = static_cast<T>(kBatchNormMomentum);

    std::size_t channels() const { return gamma.size(); }
};

// Running statistics of a batch-norm application; not learnable.
template <typename T>
struct BatchNormStats {
    std::vector<T> running_mean;
    std::vector<T> running_var;
};

template <typename T>
BatchNormParams<T> make_batchnorm(std::size_t channels);

template <typename T>
BatchNormStats<T> make_batchnorm_stats(std::size_t channels);

template <typename T>
struct BatchNormCache {
    Mode mode = Mode::train;
    Tensor<T> normalized;    // x_hat
    std::vector<T> inv_std;  // per channel
};

// Train mode normalizes with batch statistics and folds them into `stats`;
// eval mode reads `stats` only. `cache` may be null when no backward follows.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const BatchNormParams<T>& params,
                    BatchNormStats<T>& stats, Mode mode, BatchNormCache<T>* cache = nullptr);

// Eval-mode overload for read-only statistics.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const BatchNormParams<T>& params,
                    const BatchNormStats<T>& stats, BatchNormCache<T>* cache = nullptr);

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                             BatchNormParams<T>& params);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

// Flat input offset of the winning element for each output cell.
struct PoolIndices {
    Shape4 input_shape;
    std::vector<std::uint32_t> argmax;
};

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input, PoolIndices* indices = nullptr);

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& grad_out, const PoolIndices& indices);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

// Addition routes the output gradient unchanged to both operands.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> add_backward(const Tensor<T>& grad_out);

}  // namespace crowd
