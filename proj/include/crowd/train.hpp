#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowd/data.hpp"
#include "crowd/density.hpp"
#include "crowd/model.hpp"

namespace crowd {

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    std::size_t batch_size = 4;
    std::size_t iterations = 300;
    std::size_t crop_height = 64;
    std::size_t crop_width = 64;
    double flip_probability = 0.5;
    std::uint64_t seed = 1;
    // Multiply the rate by lr_gamma every lr_step iterations; 0 keeps it fixed.
    std::size_t lr_step = 0;
    double lr_gamma = 0.1;
    std::size_t checkpoint_every = 0;

    void validate() const;
    double rate_at(std::size_t iteration) const;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t iteration, double loss);
    std::size_t iteration() const { return iteration_; }

private:
    std::size_t iteration_;
};

template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor<T> grad;
};

// (1 / 2N) * sum (pred - target)^2 over the batch, N = batch size.
template <typename T>
LossResult<T> euclidean_loss(const Tensor<T>& pred, const Tensor<T>& target);

// One velocity buffer per owned learnable tensor, keyed by its name.
template <typename T>
struct OptimizerState {
    std::map<std::string, Tensor<T>> velocity;
};

// v <- momentum * v - lr * (g + decay * w); w <- w + v; then drops the gradients.
// BN gamma/beta take no weight decay.
template <typename T>
void sgd_step(ParameterStore<T>& params, OptimizerState<T>& state, const TrainConfig& cfg);

struct Augmented {
    Tensor4 image;
    PointSet points;
};

// Deterministic crop at (top, left), optionally mirrored left-right.
Augmented crop_and_flip(const Tensor4& image, const PointSet& points, std::size_t top,
                        std::size_t left, std::size_t height, std::size_t width, bool flip);

// Uniform random crop of cfg.crop_* plus a horizontal flip with cfg.flip_probability.
Augmented augment(const Tensor4& image, const PointSet& points, const TrainConfig& cfg,
                  std::mt19937_64& rng);

struct TrainHooks {
    std::function<void(std::size_t iteration, double loss)> on_iteration;
    // Called every cfg.checkpoint_every iterations (1-based iteration count).
    std::function<void(std::size_t iteration, const Model<float>& model)> on_checkpoint;
};

struct TrainResult {
    std::vector<double> losses;
};

// Sampling with replacement; targets are rebuilt from each augmented crop's
// points and sum-pooled to the network's 1/4 output resolution.
TrainResult train(Model<float>& model, const Dataset& dataset, const TrainConfig& cfg,
                  const KernelSpec& kernel, const TrainHooks& hooks = {});

}  // namespace crowd
