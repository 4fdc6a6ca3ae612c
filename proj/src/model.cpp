#include "crowd/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace crowd {

std::string to_string(Arch arch) {
    switch (arch) {
        case Arch::resnet14: return "resnet14";
        case Arch::resnet20: return "resnet20";
        case Arch::resnet26: return "resnet26";
        case Arch::r_resnet: return "r_resnet";
        case Arch::dr_resnet: return "dr_resnet";
    }
    return "unknown";
}

Arch arch_from_string(const std::string& name) {
    for (Arch a : all_archs()) {
        if (to_string(a) == name) return a;
    }
    throw std::invalid_argument("unknown architecture '" + name +
                                "' (expected resnet14|resnet20|resnet26|r_resnet|dr_resnet)");
}

const std::vector<Arch>& all_archs() {
    static const std::vector<Arch> archs{Arch::resnet14, Arch::resnet20, Arch::resnet26,
                                         Arch::r_resnet, Arch::dr_resnet};
    return archs;
}

void ModelSpec::validate() const {
    if (channels == 0) throw std::invalid_argument("model: channels must be positive");
    if (recursion_depth == 0) throw std::invalid_argument("model: recursion_depth must be positive");
}

// ---------------------------------------------------------------- store

template <typename T>
ConvParams<T>& ParameterStore<T>::add_conv(const std::string& name, ConvParams<T> params) {
    auto [it, inserted] = entries_.emplace(name, std::move(params));
    if (!inserted) throw std::logic_error("parameter store: duplicate entry " + name);
    return std::get<ConvParams<T>>(it->second);
}

template <typename T>
BatchNormParams<T>& ParameterStore<T>::add_batchnorm(const std::string& name,
                                                     BatchNormParams<T> params) {
    auto [it, inserted] = entries_.emplace(name, std::move(params));
    if (!inserted) throw std::logic_error("parameter store: duplicate entry " + name);
    return std::get<BatchNormParams<T>>(it->second);
}

template <typename T>
ConvParams<T>& ParameterStore<T>::conv(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end() || !std::holds_alternative<ConvParams<T>>(it->second)) {
        throw std::out_of_range("parameter store: no convolution named " + name);
    }
    return std::get<ConvParams<T>>(it->second);
}

template <typename T>
const ConvParams<T>& ParameterStore<T>::conv(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->conv(name);
}

template <typename T>
BatchNormParams<T>& ParameterStore<T>::batchnorm(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end() || !std::holds_alternative<BatchNormParams<T>>(it->second)) {
        throw std::out_of_range("parameter store: no batch norm named " + name);
    }
    return std::get<BatchNormParams<T>>(it->second);
}

template <typename T>
const BatchNormParams<T>& ParameterStore<T>::batchnorm(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->batchnorm(name);
}

template <typename T>
std::vector<Learnable<T>> ParameterStore<T>::learnables() {
    std::vector<Learnable<T>> out;
    for (auto& [name, entry] : entries_) {
        if (auto* c = std::get_if<ConvParams<T>>(&entry)) {
            out.push_back({name + ".weight", &c->weight, true});
            if (c->bias) out.push_back({name + ".bias", &*c->bias, true});
        } else {
            auto& bn = std::get<BatchNormParams<T>>(entry);
            out.push_back({name + ".gamma", &bn.gamma, false});
            out.push_back({name + ".beta", &bn.beta, false});
        }
    }
    return out;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
    for (auto& l : learnables()) {
        l.tensor->ensure_grad();
        l.tensor->zero_grad();
    }
}

// ---------------------------------------------------------------- model

namespace {

std::string module_name(std::size_t index) { return "module" + std::to_string(index + 1); }

std::string stats_key(std::size_t application, std::size_t block, int bn) {
    return "apply" + std::to_string(application) + ".block" + std::to_string(block) + ".bn" +
           std::to_string(bn);
}

// Owned modules and their application order for each architecture.
struct Plan {
    std::size_t modules;
    std::vector<std::size_t> stage1;
    std::vector<std::size_t> stage2;
};

Plan plan_for(const ModelSpec& spec) {
    const std::size_t depth = spec.recursion_depth;
    switch (spec.arch) {
        case Arch::resnet14: return {2, {0}, {1}};
        case Arch::resnet20: return {3, {0}, {1, 2}};
        case Arch::resnet26: return {4, {0}, {1, 2, 3}};
        case Arch::r_resnet: return {2, std::vector<std::size_t>(depth, 0), {1}};
        case Arch::dr_resnet: return {2, {0}, std::vector<std::size_t>(depth, 1)};
    }
    throw std::invalid_argument("unknown architecture");
}

template <typename T>
void he_normal(Tensor<T>& weight, std::mt19937_64& rng) {
    const Shape4& s = weight.shape();
    const double fan_in = static_cast<double>(s.c * s.h * s.w);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (T& v : weight.values()) v = static_cast<T>(dist(rng));
}

void hash_mix(std::uint64_t& h, std::uint64_t v) {
    h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
}

template <typename T>
void hash_signs(std::uint64_t& h, const Tensor<T>& t) {
    std::uint64_t word = 0;
    std::size_t bits = 0;
    for (T v : t.values()) {
        word = (word << 1) | (v > T{0} ? 1u : 0u);
        if (++bits == 64) {
            hash_mix(h, word);
            word = 0;
            bits = 0;
        }
    }
    hash_mix(h, word);
}

}  // namespace

template <typename T>
Model<T> Model<T>::build(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    const std::size_t c = spec.channels;
    const Plan plan = plan_for(spec);

    Model<T> m;
    m.spec_ = spec;
    m.store_ = std::make_unique<ParameterStore<T>>();
    ParameterStore<T>& store = *m.store_;

    m.stem_conv_ = &store.add_conv("stem.conv", make_conv<T>(c, 3, 3, false));
    m.stem_bn_ = &store.add_batchnorm("stem.bn", make_batchnorm<T>(c));
    for (std::size_t mi = 0; mi < plan.modules; ++mi) {
        ModuleRef mod;
        for (std::size_t b = 0; b < kBlocksPerModule; ++b) {
            const std::string prefix = module_name(mi) + ".block" + std::to_string(b);
            BlockRef ref;
            ref.conv1 = &store.add_conv(prefix + ".conv1", make_conv<T>(c, c, 3, false));
            ref.bn1 = &store.add_batchnorm(prefix + ".bn1", make_batchnorm<T>(c));
            ref.conv2 = &store.add_conv(prefix + ".conv2", make_conv<T>(c, c, 3, false));
            ref.bn2 = &store.add_batchnorm(prefix + ".bn2", make_batchnorm<T>(c));
            mod.blocks.push_back(ref);
        }
        m.modules_.push_back(std::move(mod));
    }
    m.recon_ = &store.add_conv("recon.conv", make_conv<T>(1, c, 1, true));
    m.stage1_ = plan.stage1;
    m.stage2_ = plan.stage2;

    m.stats_.emplace("stem.bn", make_batchnorm_stats<T>(c));
    const std::size_t applications = plan.stage1.size() + plan.stage2.size();
    for (std::size_t a = 0; a < applications; ++a) {
        for (std::size_t b = 0; b < kBlocksPerModule; ++b) {
            m.stats_.emplace(stats_key(a, b, 1), make_batchnorm_stats<T>(c));
            m.stats_.emplace(stats_key(a, b, 2), make_batchnorm_stats<T>(c));
        }
    }

    // Store order is by name, so the draw order is independent of construction order.
    std::mt19937_64 rng(seed);
    for (auto& l : store.learnables()) {
        if (l.name.ends_with(".weight")) he_normal(*l.tensor, rng);
    }
    return m;
}

template <typename T>
Tensor<T> Model<T>::norm(const Tensor<T>& x, const BatchNormParams<T>& params,
                         const std::string& key, Mode mode, BatchNormCache<T>* cache) {
    return batchnorm(x, params, stats_.at(key), mode, cache);
}

template <typename T>
Tensor<T> Model<T>::run_block(const Tensor<T>& x, const BlockRef& ref, const std::string& key,
                              Mode mode, BlockTape* tape, std::size_t& convs) {
    BatchNormCache<T> bn1;
    BatchNormCache<T> bn2;
    BatchNormCache<T>* bn1_ptr = tape ? &bn1 : nullptr;
    BatchNormCache<T>* bn2_ptr = tape ? &bn2 : nullptr;

    Tensor<T> a = conv2d(x, *ref.conv1);
    ++convs;
    Tensor<T> b = norm(a, *ref.bn1, key + ".bn1", mode, bn1_ptr);
    Tensor<T> r = relu(b);
    Tensor<T> c = conv2d(r, *ref.conv2);
    ++convs;
    Tensor<T> d = norm(c, *ref.bn2, key + ".bn2", mode, bn2_ptr);
    Tensor<T> out = add(relu(d), x);
    if (tape != nullptr) {
        tape->input = x;
        tape->bn1 = std::move(bn1);
        tape->pre_relu1 = std::move(b);
        tape->relu1 = std::move(r);
        tape->bn2 = std::move(bn2);
        tape->pre_relu2 = std::move(d);
        tape->params = ref;
    }
    return out;
}

template <typename T>
Tensor<T> Model<T>::run(const Tensor<T>& batch, Mode mode, Tape* tape, std::size_t& convs) {
    const Shape4& s = batch.shape();
    if (s.n == 0) throw ShapeError("model: empty batch");
    if (s.c != 3) throw ShapeError("model: expected 3 input channels, got " + s.str());
    if (s.h == 0 || s.w == 0 || s.h % 4 != 0 || s.w % 4 != 0) {
        throw ShapeError("model: input " + s.str() +
                         " must have height and width divisible by 4; crop to " +
                         std::to_string(s.h / 4 * 4) + "x" + std::to_string(s.w / 4 * 4) +
                         " first");
    }
    convs = 0;

    Tensor<T> x = conv2d(batch, *stem_conv_);
    ++convs;
    BatchNormCache<T> stem_cache;
    Tensor<T> pre = norm(x, *stem_bn_, "stem.bn", mode, tape ? &stem_cache : nullptr);
    x = relu(pre);
    PoolIndices pool1;
    x = maxpool2(x, tape ? &pool1 : nullptr);
    if (tape != nullptr) {
        tape->input = batch;
        tape->stem_bn = std::move(stem_cache);
        tape->stem_pre_relu = std::move(pre);
        tape->pool1 = std::move(pool1);
        tape->blocks.clear();
    }

    std::size_t application = 0;
    auto run_stage = [&](const std::vector<std::size_t>& stage) {
        for (std::size_t module : stage) {
            for (std::size_t b = 0; b < kBlocksPerModule; ++b) {
                const std::string key =
                    "apply" + std::to_string(application) + ".block" + std::to_string(b);
                BlockTape* bt = nullptr;
                if (tape != nullptr) bt = &tape->blocks.emplace_back();
                x = run_block(x, modules_[module].blocks[b], key, mode, bt, convs);
            }
            ++application;
        }
    };

    run_stage(stage1_);
    PoolIndices pool2;
    x = maxpool2(x, tape ? &pool2 : nullptr);
    run_stage(stage2_);

    Tensor<T> out = conv2d(x, *recon_);
    ++convs;
    if (tape != nullptr) {
        tape->pool2 = std::move(pool2);
        tape->recon_input = std::move(x);
    }
    return out;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& batch, Mode mode) {
    auto tape = std::make_unique<Tape>();
    std::size_t convs = 0;
    tape_.reset();
    Tensor<T> out = run(batch, mode, tape.get(), convs);
    tape_ = std::move(tape);
    conv_applications_ = convs;
    return out;
}

template <typename T>
Tensor<T> Model<T>::infer(const Tensor<T>& batch, std::size_t* conv_applications) const {
    std::size_t convs = 0;
    // Eval mode with no tape reads parameters and statistics only.
    Tensor<T> out = const_cast<Model*>(this)->run(batch, Mode::eval, nullptr, convs);
    if (conv_applications != nullptr) *conv_applications = convs;
    return out;
}

template <typename T>
void Model<T>::backward(const Tensor<T>& grad_out) {
    if (!tape_) {
        throw std::logic_error("model: backward() called without a preceding forward()");
    }
    const std::unique_ptr<Tape> tape = std::move(tape_);
    require_same_shape(grad_out.shape(),
                       Shape4{tape->input.shape().n, 1, tape->input.shape().h / 4,
                              tape->input.shape().w / 4},
                       "model backward");

    Tensor<T> g = conv2d_backward(tape->recon_input, grad_out, *recon_);
    const std::size_t stage2_blocks = stage2_.size() * kBlocksPerModule;
    const std::size_t total_blocks = tape->blocks.size();

    auto back_block = [&](BlockTape& bt) {
        Tensor<T> gd = relu_backward(bt.pre_relu2, g);
        Tensor<T> gc = batchnorm_backward(gd, bt.bn2, *bt.params.bn2);
        Tensor<T> gr = conv2d_backward(bt.relu1, gc, *bt.params.conv2);
        Tensor<T> gb = relu_backward(bt.pre_relu1, gr);
        Tensor<T> ga = batchnorm_backward(gb, bt.bn1, *bt.params.bn1);
        Tensor<T> gx = conv2d_backward(bt.input, ga, *bt.params.conv1);
        g = add(gx, g);
    };

    for (std::size_t i = total_blocks; i > total_blocks - stage2_blocks; --i) {
        back_block(tape->blocks[i - 1]);
    }
    g = maxpool2_backward(g, tape->pool2);
    for (std::size_t i = total_blocks - stage2_blocks; i > 0; --i) {
        back_block(tape->blocks[i - 1]);
    }
    g = maxpool2_backward(g, tape->pool1);
    g = relu_backward(tape->stem_pre_relu, g);
    g = batchnorm_backward(g, tape->stem_bn, *stem_bn_);
    conv2d_backward(tape->input, g, *stem_conv_);
}

template <typename T>
std::size_t Model<T>::count_parameters(CountMode mode) const {
    std::size_t total = 0;
    for (const auto& [name, entry] : store_->entries()) {
        if (const auto* c = std::get_if<ConvParams<T>>(&entry)) {
            total += c->weight.size();
            if (mode == CountMode::all_learnable && c->bias) total += c->bias->size();
        } else if (mode == CountMode::all_learnable) {
            const auto& bn = std::get<BatchNormParams<T>>(entry);
            total += bn.gamma.size() + bn.beta.size();
        }
    }
    return total;
}

template <typename T>
std::uint64_t Model<T>::branch_signature() const {
    if (!tape_) {
        throw std::logic_error("model: branch_signature() needs a recorded forward()");
    }
    std::uint64_t h = 0;
    hash_signs(h, tape_->stem_pre_relu);
    for (std::uint32_t i : tape_->pool1.argmax) hash_mix(h, i);
    for (const BlockTape& bt : tape_->blocks) {
        hash_signs(h, bt.pre_relu1);
        hash_signs(h, bt.pre_relu2);
    }
    for (std::uint32_t i : tape_->pool2.argmax) hash_mix(h, i);
    return h;
}

template <typename To, typename From>
Model<To> convert_model(const Model<From>& src) {
    Model<To> dst = Model<To>::build(src.spec(), 0);
    auto& store = dst.parameters();
    for (const auto& [name, entry] : src.parameters().entries()) {
        if (const auto* c = std::get_if<ConvParams<From>>(&entry)) {
            auto& d = store.conv(name);
            d.weight = tensor_cast<To>(c->weight);
            if (c->bias) d.bias = tensor_cast<To>(*c->bias);
        } else {
            const auto& bn = std::get<BatchNormParams<From>>(entry);
            auto& d = store.batchnorm(name);
            d.gamma = tensor_cast<To>(bn.gamma);
            d.beta = tensor_cast<To>(bn.beta);
            d.epsilon = static_cast<To>(bn.epsilon);
            d.momentum = static_cast<To>(bn.momentum);
        }
    }
    for (const auto& [key, st] : src.running_stats()) {
        auto& d = dst.running_stats().at(key);
        d.running_mean.assign(st.running_mean.begin(), st.running_mean.end());
        d.running_var.assign(st.running_var.begin(), st.running_var.end());
    }
    return dst;
}

template <typename T>
void copy_parameters(const Model<T>& src, Model<T>& dst) {
    auto& store = dst.parameters();
    for (const auto& [name, entry] : src.parameters().entries()) {
        if (!store.contains(name)) continue;
        if (const auto* c = std::get_if<ConvParams<T>>(&entry)) {
            auto& d = store.conv(name);
            require_same_shape(c->weight.shape(), d.weight.shape(), "copy_parameters");
            d.weight = c->weight.reshaped(c->weight.shape());
            if (c->bias) d.bias = c->bias->reshaped(c->bias->shape());
        } else {
            const auto& bn = std::get<BatchNormParams<T>>(entry);
            auto& d = store.batchnorm(name);
            d.gamma = bn.gamma.reshaped(bn.gamma.shape());
            d.beta = bn.beta.reshaped(bn.beta.shape());
            d.epsilon = bn.epsilon;
            d.momentum = bn.momentum;
        }
    }
    for (const auto& [key, st] : src.running_stats()) {
        auto it = dst.running_stats().find(key);
        if (it != dst.running_stats().end()) it->second = st;
    }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Model<float>;
template class Model<double>;

template Model<double> convert_model<double, float>(const Model<float>&);
template Model<float> convert_model<float, double>(const Model<double>&);
template Model<float> convert_model<float, float>(const Model<float>&);
template Model<double> convert_model<double, double>(const Model<double>&);
template void copy_parameters<float>(const Model<float>&, Model<float>&);
template void copy_parameters<double>(const Model<double>&, Model<double>&);

}  // namespace crowd
