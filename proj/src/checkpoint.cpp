#include "crowd/checkpoint.hpp"

#include <array>
#include <fstream>

#include "crowd/serialize.hpp"

namespace crowd {

namespace {

constexpr std::array<char, 4> kMagic{'D', 'R', 'C', 'K'};

Tensor4 stats_tensor(const std::vector<float>& v) {
    return Tensor4({1, v.size(), 1, 1}, v);
}

}  // namespace

nlohmann::json spec_to_json(const ModelSpec& spec) {
    return {{"arch", to_string(spec.arch)},
            {"channels", spec.channels},
            {"recursion_depth", spec.recursion_depth}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    if (j.contains("arch")) spec.arch = arch_from_string(j.at("arch").get<std::string>());
    if (j.contains("channels")) spec.channels = j.at("channels").get<std::size_t>();
    if (j.contains("recursion_depth")) {
        spec.recursion_depth = j.at("recursion_depth").get<std::size_t>();
    }
    spec.validate();
    return spec;
}

nlohmann::json model_decisions(const Model<float>& model, std::uint64_t seed) {
    return {{"channels", model.spec().channels},
            {"kernel", 3},
            {"pooling", "maxpool2 after stem and after module 1; output h/4 x w/4"},
            {"block", "conv-bn-relu-conv-bn-relu + identity, no post-add activation"},
            {"bn_epsilon", kBatchNormEpsilon},
            {"bn_momentum", kBatchNormMomentum},
            {"bn_running_stats", "per module application"},
            {"init", "he_normal"},
            {"seed", seed}};
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     std::uint64_t seed, const nlohmann::json& extra) {
    nlohmann::json header = {{"format", "DRCK"},
                             {"spec", spec_to_json(model.spec())},
                             {"decisions", model_decisions(model, seed)}};
    for (const auto& [k, v] : extra.items()) header[k] = v;

    std::vector<std::pair<std::string, Tensor4>> records;
    auto& store = const_cast<ParameterStore<float>&>(model.parameters());
    for (const auto& l : store.learnables()) {
        records.emplace_back(l.name, l.tensor->reshaped(l.tensor->shape()));
    }
    for (const auto& [key, st] : model.running_stats()) {
        records.emplace_back("stats." + key + ".mean", stats_tensor(st.running_mean));
        records.emplace_back("stats." + key + ".var", stats_tensor(st.running_var));
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(kMagic.data(), kMagic.size());
    write_u32(out, kCheckpointVersion);
    const std::string text = header.dump();
    write_u32(out, static_cast<std::uint32_t>(text.size()));
    write_bytes(out, text);
    write_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& [name, tensor] : records) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        write_bytes(out, name);
        write_tensor(out, tensor);
    }
    if (!out) throw FormatError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw FormatError(path.string() + ": not a DRCK checkpoint");
    const std::uint32_t version = read_u32(in);
    if (version != kCheckpointVersion) {
        throw FormatError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(version));
    }
    nlohmann::json header;
    ModelSpec spec;
    try {
        header = nlohmann::json::parse(read_bytes(in, read_u32(in)));
        spec = spec_from_json(header.at("spec"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
    }
    Model<float> model = Model<float>::build(spec, 0);

    std::map<std::string, Tensor4*> learnable;
    for (auto& l : model.parameters().learnables()) learnable[l.name] = l.tensor;

    const std::uint32_t count = read_u32(in);
    std::size_t loaded = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = read_bytes(in, read_u32(in));
        Tensor4 t = read_tensor(in);
        if (auto it = learnable.find(name); it != learnable.end()) {
            require_same_shape(t.shape(), it->second->shape(), name.c_str());
            *it->second = std::move(t);
            ++loaded;
            continue;
        }
        if (name.starts_with("stats.")) {
            const bool mean = name.ends_with(".mean");
            const std::string key = name.substr(6, name.size() - 6 - (mean ? 5 : 4));
            auto st = model.running_stats().find(key);
            if (st == model.running_stats().end()) {
                throw FormatError(path.string() + ": unknown statistics record " + name);
            }
            std::vector<float> v(t.values().begin(), t.values().end());
            (mean ? st->second.running_mean : st->second.running_var) = std::move(v);
            continue;
        }
        throw FormatError(path.string() + ": unknown record " + name);
    }
    if (loaded != learnable.size()) {
        throw FormatError(path.string() + ": checkpoint holds " + std::to_string(loaded) + " of " +
                          std::to_string(learnable.size()) + " parameter tensors");
    }
    return {std::move(model), std::move(header)};
}

}  // namespace crowd
