#pragma once

// Ground-truth density maps from head annotations.
//
// Each head is a unit mass spread by a truncated Gaussian centred on its
// (rounded) pixel. The truncated kernel is renormalized over the pixels that
// fall inside the image, so the map always integrates to the head count.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "crowd/tensor.hpp"

namespace crowd {

class DensityError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

struct PointSet {
    std::vector<Point> points;
    std::size_t width = 0;
    std::size_t height = 0;

    std::size_t count() const { return points.size(); }
    // Throws DensityError unless every point is inside [0, width) x [0, height).
    void validate() const;
};

enum class KernelMode { fixed, adaptive };

struct KernelSpec {
    KernelMode mode = KernelMode::fixed;
    std::size_t fixed_window = 25;
    double fixed_sigma = 1.5;
    double beta = 0.3;
    std::size_t k_neighbors = 3;
    double sigma_floor = 1.0;

    void validate() const;
};

std::string to_string(KernelMode mode);
KernelMode kernel_mode_from_string(const std::string& name);

struct DensityMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t scale = 1;
    std::vector<float> grid;  // row-major, height * width

    DensityMap() = default;
    DensityMap(std::size_t h, std::size_t w, std::size_t scale_factor = 1)
        : height(h), width(w), scale(scale_factor), grid(h * w, 0.0f) {}

    float& at(std::size_t y, std::size_t x) { return grid[y * width + x]; }
    float at(std::size_t y, std::size_t x) const { return grid[y * width + x]; }

    // Sum of all entries, accumulated in double.
    double sum() const;

    Tensor4 to_tensor() const;  // (1, 1, height, width)
    static DensityMap from_tensor(const Tensor4& t, std::size_t scale = 1);
};

// Mean distance from each point to its min(k, N-1) nearest other points.
std::vector<double> knn_mean_distance(const PointSet& points, std::size_t k);

// Per-head sigma for the adaptive kernel: max(beta * d_i, sigma_floor).
std::vector<double> adaptive_sigmas(const PointSet& points, const KernelSpec& spec);

DensityMap fixed_density(const PointSet& points, const KernelSpec& spec);
DensityMap adaptive_density(const PointSet& points, const KernelSpec& spec);

// Dispatches on spec.mode; adaptive with fewer than two heads uses the fixed kernel.
DensityMap generate_density(const PointSet& points, const KernelSpec& spec);

DensityMap downsample_sum(const DensityMap& map, std::size_t factor);

}  // namespace crowd
