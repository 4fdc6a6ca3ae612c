#pragma once

// DRCK checkpoint files: magic "DRCK", u32 version, u32 header length, UTF-8
// JSON header, u32 record count, then per record a u32 name length, the name
// and one DRT4 tensor. Every owned parameter tensor is stored once; batch-norm
// running statistics are stored per application as "stats.<key>.mean|var".

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "crowd/model.hpp"

namespace crowd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Model<float> model;
    nlohmann::json header;
};

// Architecture facts recorded alongside the weights.
nlohmann::json model_decisions(const Model<float>& model, std::uint64_t seed);

// `extra` is merged into the header (e.g. iteration, training config).
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     std::uint64_t seed, const nlohmann::json& extra = nlohmann::json::object());

Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

}  // namespace crowd
