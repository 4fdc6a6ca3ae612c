#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crowd/data.hpp"
#include "crowd/density.hpp"
#include "crowd/model.hpp"

namespace crowd {

// Integral of the map with negative entries clamped to zero.
double count_from_map(const DensityMap& map);
double count_from_values(std::span<const float> values);

struct ImageResult {
    std::string id;
    double truth = 0.0;     // z_i
    double estimate = 0.0;  // \hat z_i
};

/// Count-error summary over a test set.
///
/// `mse` follows the crowd-counting convention: it is the ROOT of the mean
/// squared count error, sqrt(mean((z - z_hat)^2)), not the mean itself.
struct MetricsReport {
    std::vector<ImageResult> per_image;
    std::vector<SkippedEntry> skipped;
    double mae = 0.0;
    double mse = 0.0;
    std::size_t n = 0;

    nlohmann::json to_json() const;
};

MetricsReport metrics(std::vector<ImageResult> results);
MetricsReport metrics(std::span<const std::pair<double, double>> truth_estimate);

struct FoldSplit {
    std::vector<std::string> train;
    std::vector<std::string> test;
};

// Seeded shuffle, then contiguous folds whose sizes differ by at most one.
FoldSplit kfold(const std::vector<std::string>& ids, std::size_t k, std::size_t fold_index,
                std::uint64_t seed);

// Crops right/bottom to multiples of `multiple` and drops points that fall outside.
struct CropResult {
    Sample sample;
    std::size_t dropped_points = 0;
};
CropResult crop_to_multiple(const Sample& sample, std::size_t multiple);

// Whole-image inference over `dataset`; results are assembled in dataset order.
MetricsReport evaluate(const Model<float>& model, const Dataset& dataset,
                       std::vector<SkippedEntry> skipped = {});

}  // namespace crowd
