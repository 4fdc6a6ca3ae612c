#pragma once

// Residual density-regression networks with optional recursive weight sharing.
//
// Layout (channels C, default 16):
//   stem   conv3x3 3->C, BN, ReLU, maxpool2
//   stage1 residual module 1 (3 blocks), maxpool2
//   stage2 residual module(s) 2..m
//   recon  conv1x1 C->1 with bias, no activation
//
// A residual block is conv-BN-ReLU-conv-BN-ReLU plus an identity shortcut.
// dr_resnet applies module 2 `recursion_depth` times with one parameter set,
// r_resnet does the same for module 1. Learnable parameters are owned once by
// the ParameterStore; every application of a shared module aliases them, and
// backward accumulates all applications into the same gradient buffers.
//
// Batch-norm running statistics are buffers, not parameters: each module
// application keeps its own, so a recursive model in eval mode normalizes
// every depth with the statistics that depth actually sees.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "crowd/layers.hpp"
#include "crowd/tensor.hpp"

namespace crowd {

enum class Arch { resnet14, resnet20, resnet26, r_resnet, dr_resnet };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& name);
const std::vector<Arch>& all_archs();

struct ModelSpec {
    Arch arch = Arch::dr_resnet;
    std::size_t channels = 16;
    std::size_t recursion_depth = 3;

    void validate() const;
};

enum class CountMode { conv_weights, all_learnable };

template <typename T>
using ParameterEntry = std::variant<ConvParams<T>, BatchNormParams<T>>;

// Learnable tensor handle used by optimizers and serializers.
template <typename T>
struct Learnable {
    std::string name;  // "<entry>.weight", "<entry>.bias", "<entry>.gamma", "<entry>.beta"
    Tensor<T>* tensor = nullptr;
    bool weight_decay = true;
};

template <typename T>
class ParameterStore {
public:
    ConvParams<T>& add_conv(const std::string& name, ConvParams<T> params);
    BatchNormParams<T>& add_batchnorm(const std::string& name, BatchNormParams<T> params);

    ConvParams<T>& conv(const std::string& name);
    const ConvParams<T>& conv(const std::string& name) const;
    BatchNormParams<T>& batchnorm(const std::string& name);
    const BatchNormParams<T>& batchnorm(const std::string& name) const;

    std::size_t size() const { return entries_.size(); }
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const std::map<std::string, ParameterEntry<T>>& entries() const { return entries_; }

    // All learnable tensors, ordered by name. BN gamma/beta are exempt from decay.
    std::vector<Learnable<T>> learnables();
    void zero_grad();

private:
    std::map<std::string, ParameterEntry<T>> entries_;
};

template <typename T>
class Model {
public:
    // Builds the architecture and draws He-normal convolution weights from `seed`.
    static Model build(const ModelSpec& spec, std::uint64_t seed);

    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelSpec& spec() const { return spec_; }
    ParameterStore<T>& parameters() { return *store_; }
    const ParameterStore<T>& parameters() const { return *store_; }

    // Running statistics keyed by application ("stem.bn", "apply3.block1.bn2", ...).
    std::map<std::string, BatchNormStats<T>>& running_stats() { return stats_; }
    const std::map<std::string, BatchNormStats<T>>& running_stats() const { return stats_; }

    // (n, 3, h, w) -> (n, 1, h/4, w/4). Records what backward() needs.
    Tensor<T> forward(const Tensor<T>& batch, Mode mode);

    // Eval-mode forward that touches no model state; safe to call concurrently.
    Tensor<T> infer(const Tensor<T>& batch, std::size_t* conv_applications = nullptr) const;

    // Consumes the recorded forward pass and accumulates parameter gradients.
    void backward(const Tensor<T>& grad_out);

    std::size_t count_parameters(CountMode mode) const;

    // Number of convolutions executed by the last forward().
    std::size_t conv_applications() const { return conv_applications_; }

    // Module application plan, as indices into the owned residual modules.
    const std::vector<std::size_t>& stage1_plan() const { return stage1_; }
    const std::vector<std::size_t>& stage2_plan() const { return stage2_; }
    std::size_t module_count() const { return modules_.size(); }

    // Hash of every ReLU on/off decision and pooling winner in the last
    // forward(); two passes with equal signatures follow the same linear piece.
    std::uint64_t branch_signature() const;

private:
    struct BlockRef {
        ConvParams<T>* conv1 = nullptr;
        BatchNormParams<T>* bn1 = nullptr;
        ConvParams<T>* conv2 = nullptr;
        BatchNormParams<T>* bn2 = nullptr;
    };
    struct ModuleRef {
        std::vector<BlockRef> blocks;
    };
    struct BlockTape {
        Tensor<T> input;
        BatchNormCache<T> bn1;
        Tensor<T> pre_relu1;
        Tensor<T> relu1;
        BatchNormCache<T> bn2;
        Tensor<T> pre_relu2;
        BlockRef params;
    };
    struct Tape {
        Tensor<T> input;
        BatchNormCache<T> stem_bn;
        Tensor<T> stem_pre_relu;
        PoolIndices pool1;
        std::vector<BlockTape> blocks;
        PoolIndices pool2;
        Tensor<T> recon_input;
    };

    Model() = default;

    Tensor<T> run(const Tensor<T>& batch, Mode mode, Tape* tape, std::size_t& convs);
    Tensor<T> run_block(const Tensor<T>& x, const BlockRef& ref, const std::string& stats_key,
                        Mode mode, BlockTape* tape, std::size_t& convs);
    Tensor<T> norm(const Tensor<T>& x, const BatchNormParams<T>& params,
                   const std::string& stats_key, Mode mode, BatchNormCache<T>* cache);

    ModelSpec spec_;
    std::unique_ptr<ParameterStore<T>> store_;
    std::map<std::string, BatchNormStats<T>> stats_;
    std::vector<ModuleRef> modules_;
    std::vector<std::size_t> stage1_;
    std::vector<std::size_t> stage2_;
    ConvParams<T>* stem_conv_ = nullptr;
    BatchNormParams<T>* stem_bn_ = nullptr;
    ConvParams<T>* recon_ = nullptr;
    std::unique_ptr<Tape> tape_;
    std::size_t conv_applications_ = 0;
};

// Same architecture in another precision, with values and statistics copied.
template <typename To, typename From>
Model<To> convert_model(const Model<From>& src);

// Copies every learnable value and running statistic present in both models.
template <typename T>
void copy_parameters(const Model<T>& src, Model<T>& dst);

inline constexpr std::size_t kBlocksPerModule = 3;

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class Model<float>;
extern template class Model<double>;

}  // namespace crowd
