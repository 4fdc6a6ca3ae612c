#include "crowd/train.hpp"

#include <cmath>
#include <sstream>

namespace crowd {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("train: momentum must be in [0, 1)");
    }
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay must be >= 0");
    if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
    if (iterations == 0) throw std::invalid_argument("train: iterations must be positive");
    if (crop_height == 0 || crop_width == 0 || crop_height % 4 != 0 || crop_width % 4 != 0) {
        throw std::invalid_argument("train: crop dims must be positive multiples of 4");
    }
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
        throw std::invalid_argument("train: flip_probability must be in [0, 1]");
    }
}

double TrainConfig::rate_at(std::size_t iteration) const {
    if (lr_step == 0) return learning_rate;
    return learning_rate * std::pow(lr_gamma, static_cast<double>(iteration / lr_step));
}

namespace {
std::string divergence_message(std::size_t iteration, double loss) {
    std::ostringstream os;
    os << "training diverged at iteration " << iteration << " (loss " << loss << ")";
    return os.str();
}
}  // namespace

DivergenceError::DivergenceError(std::size_t iteration, double loss)
    : std::runtime_error(divergence_message(iteration, loss)), iteration_(iteration) {}

template <typename T>
LossResult<T> euclidean_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    require_same_shape(pred.shape(), target.shape(), "euclidean_loss");
    const std::size_t batch = pred.shape().n;
    if (batch == 0) throw ShapeError("euclidean_loss: empty batch");
    LossResult<T> r;
    r.grad = Tensor<T>(pred.shape());
    const auto p = pred.values();
    const auto t = target.values();
    auto g = r.grad.values();
    const T inv_n = T{1} / static_cast<T>(batch);
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const T d = p[i] - t[i];
        sum += static_cast<double>(d) * static_cast<double>(d);
        g[i] = d * inv_n;
    }
    r.loss = sum / (2.0 * static_cast<double>(batch));
    return r;
}

template <typename T>
void sgd_step(ParameterStore<T>& params, OptimizerState<T>& state, const TrainConfig& cfg) {
    auto learnables = params.learnables();
    for (const auto& l : learnables) {
        if (!l.tensor->has_grad()) {
            throw std::logic_error("sgd_step: no gradient for " + l.name +
                                   "; run backward() before stepping");
        }
    }
    const T lr = static_cast<T>(cfg.learning_rate);
    const T mu = static_cast<T>(cfg.momentum);
    for (auto& l : learnables) {
        const T decay = l.weight_decay ? static_cast<T>(cfg.weight_decay) : T{0};
        auto [it, fresh] = state.velocity.try_emplace(l.name, l.tensor->shape());
        require_same_shape(it->second.shape(), l.tensor->shape(), "sgd_step velocity");
        auto v = it->second.values();
        auto w = l.tensor->values();
        auto g = l.tensor->grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mu * v[i] - lr * (g[i] + decay * w[i]);
            w[i] += v[i];
        }
        l.tensor->drop_grad();
    }
}

Augmented crop_and_flip(const Tensor4& image, const PointSet& points, std::size_t top,
                        std::size_t left, std::size_t height, std::size_t width, bool flip) {
    const Shape4& s = image.shape();
    if (top + height > s.h || left + width > s.w) {
        throw ShapeError("augment: crop " + std::to_string(height) + "x" + std::to_string(width) +
                         " at (" + std::to_string(top) + ", " + std::to_string(left) +
                         ") exceeds image " + s.str());
    }
    Augmented a;
    a.image = Tensor4({s.n, s.c, height, width});
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < height; ++y)
                for (std::size_t x = 0; x < width; ++x) {
                    const std::size_t sx = flip ? left + width - 1 - x : left + x;
                    a.image.at(n, c, y, x) = image.at(n, c, top + y, sx);
                }
    a.points.width = width;
    a.points.height = height;
    const double x0 = static_cast<double>(left);
    const double y0 = static_cast<double>(top);
    for (const Point& p : points.points) {
        if (p.x < x0 || p.x >= x0 + static_cast<double>(width) || p.y < y0 ||
            p.y >= y0 + static_cast<double>(height)) {
            continue;
        }
        double x = p.x - x0;
        if (flip) x = static_cast<double>(width) - 1.0 - x;
        // Mirroring a point in the last pixel column can land just below zero.
        if (x < 0.0) x = 0.0;
        a.points.points.push_back({x, p.y - y0});
    }
    return a;
}

Augmented augment(const Tensor4& image, const PointSet& points, const TrainConfig& cfg,
                  std::mt19937_64& rng) {
    const Shape4& s = image.shape();
    if (cfg.crop_height > s.h || cfg.crop_width > s.w) {
        throw ShapeError("augment: crop " + std::to_string(cfg.crop_height) + "x" +
                         std::to_string(cfg.crop_width) + " larger than image " + s.str());
    }
    std::uniform_int_distribution<std::size_t> top(0, s.h - cfg.crop_height);
    std::uniform_int_distribution<std::size_t> left(0, s.w - cfg.crop_width);
    std::bernoulli_distribution flip(cfg.flip_probability);
    const std::size_t t = top(rng);
    const std::size_t l = left(rng);
    const bool f = flip(rng);
    return crop_and_flip(image, points, t, l, cfg.crop_height, cfg.crop_width, f);
}

TrainResult train(Model<float>& model, const Dataset& dataset, const TrainConfig& cfg,
                  const KernelSpec& kernel, const TrainHooks& hooks) {
    cfg.validate();
    kernel.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    for (const Sample& s : dataset) {
        if (s.image.shape().h < cfg.crop_height || s.image.shape().w < cfg.crop_width) {
            throw std::invalid_argument("train: crop larger than image " + s.id);
        }
    }

    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    OptimizerState<float> state;
    TrainResult result;
    const std::size_t out_h = cfg.crop_height / 4;
    const std::size_t out_w = cfg.crop_width / 4;
    const std::size_t in_plane = 3 * cfg.crop_height * cfg.crop_width;
    const std::size_t out_plane = out_h * out_w;

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        Tensor4 batch({cfg.batch_size, 3, cfg.crop_height, cfg.crop_width});
        Tensor4 target({cfg.batch_size, 1, out_h, out_w});
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const Sample& s = dataset[pick(rng)];
            const Augmented a = augment(s.image, s.points, cfg, rng);
            std::copy(a.image.values().begin(), a.image.values().end(),
                      batch.values().begin() + static_cast<std::ptrdiff_t>(b * in_plane));
            const DensityMap map = downsample_sum(generate_density(a.points, kernel), 4);
            std::copy(map.grid.begin(), map.grid.end(),
                      target.values().begin() + static_cast<std::ptrdiff_t>(b * out_plane));
        }

        const Tensor4 pred = model.forward(batch, Mode::train);
        LossResult<float> loss = euclidean_loss(pred, target);
        if (!std::isfinite(loss.loss)) throw DivergenceError(it, loss.loss);
        model.backward(loss.grad);
        TrainConfig step = cfg;
        step.learning_rate = cfg.rate_at(it);
        sgd_step(model.parameters(), state, step);

        result.losses.push_back(loss.loss);
        if (hooks.on_iteration) hooks.on_iteration(it, loss.loss);
        if (cfg.checkpoint_every != 0 && (it + 1) % cfg.checkpoint_every == 0 &&
            hooks.on_checkpoint) {
            hooks.on_checkpoint(it + 1, model);
        }
    }
    return result;
}

template LossResult<float> euclidean_loss<float>(const Tensor<float>&, const Tensor<float>&);
template LossResult<double> euclidean_loss<double>(const Tensor<double>&, const Tensor<double>&);
template void sgd_step<float>(ParameterStore<float>&, OptimizerState<float>&, const TrainConfig&);
template void sgd_step<double>(ParameterStore<double>&, OptimizerState<double>&,
                               const TrainConfig&);

}  // namespace crowd
