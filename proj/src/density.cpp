#include "crowd/density.hpp"

#include <algorithm>
#include <cmath>

#include "crowd/parallel.hpp"

namespace crowd {

namespace {

using Index = std::ptrdiff_t;

std::size_t rounded_coordinate(double v, std::size_t extent) {
    const long r = std::lround(v);
    return static_cast<std::size_t>(std::clamp<long>(r, 0, static_cast<long>(extent) - 1));
}

// Adds a unit-mass Gaussian, truncated to `window` and to the image, to `acc`.
void splat(std::vector<double>& acc, std::size_t height, std::size_t width, const Point& p,
           double sigma, std::size_t window) {
    const Index cx = static_cast<Index>(rounded_coordinate(p.x, width));
    const Index cy = static_cast<Index>(rounded_coordinate(p.y, height));
    const Index half = static_cast<Index>(window / 2);
    const Index x0 = std::max<Index>(0, cx - half);
    const Index x1 = std::min<Index>(static_cast<Index>(width) - 1, cx + half);
    const Index y0 = std::max<Index>(0, cy - half);
    const Index y1 = std::min<Index>(static_cast<Index>(height) - 1, cy + half);

    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    std::vector<double> gx(static_cast<std::size_t>(x1 - x0 + 1));
    std::vector<double> gy(static_cast<std::size_t>(y1 - y0 + 1));
    double sx = 0.0;
    double sy = 0.0;
    for (Index x = x0; x <= x1; ++x) {
        const double d = static_cast<double>(x - cx);
        gx[x - x0] = std::exp(-d * d * inv_two_var);
        sx += gx[x - x0];
    }
    for (Index y = y0; y <= y1; ++y) {
        const double d = static_cast<double>(y - cy);
        gy[y - y0] = std::exp(-d * d * inv_two_var);
        sy += gy[y - y0];
    }
    // The Gaussian is separable, so the truncated mass is sx * sy.
    const double norm = 1.0 / (sx * sy);
    for (Index y = y0; y <= y1; ++y) {
        double* row = acc.data() + static_cast<std::size_t>(y) * width;
        const double wy = gy[y - y0] * norm;
        for (Index x = x0; x <= x1; ++x) {
            row[x] += wy * gx[x - x0];
        }
    }
}

DensityMap finish(const std::vector<double>& acc, std::size_t height, std::size_t width) {
    DensityMap map(height, width, 1);
    for (std::size_t i = 0; i < acc.size(); ++i) {
        map.grid[i] = static_cast<float>(acc[i]);
    }
    return map;
}

std::size_t adaptive_window(double sigma) {
    return 2 * static_cast<std::size_t>(std::ceil(3.0 * sigma)) + 1;
}

}  // namespace

void PointSet::validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Point& p = points[i];
        if (!(p.x >= 0.0 && p.x < static_cast<double>(width) && p.y >= 0.0 &&
              p.y < static_cast<double>(height))) {
            throw DensityError("point " + std::to_string(i) + " (" + std::to_string(p.x) + ", " +
                               std::to_string(p.y) + ") outside " + std::to_string(width) + "x" +
                               std::to_string(height) + " image");
        }
    }
}

void KernelSpec::validate() const {
    if (fixed_window % 2 == 0) throw DensityError("fixed_window must be odd");
    if (!(fixed_sigma > 0.0)) throw DensityError("fixed_sigma must be positive");
    if (!(beta > 0.0)) throw DensityError("beta must be positive");
    if (k_neighbors < 1) throw DensityError("k_neighbors must be at least 1");
    if (!(sigma_floor > 0.0)) throw DensityError("sigma_floor must be positive");
}

std::string to_string(KernelMode mode) {
    return mode == KernelMode::fixed ? "fixed" : "adaptive";
}

KernelMode kernel_mode_from_string(const std::string& name) {
    if (name == "fixed") return KernelMode::fixed;
    if (name == "adaptive") return KernelMode::adaptive;
    throw DensityError("unknown kernel mode '" + name + "' (expected fixed|adaptive)");
}

double DensityMap::sum() const {
    double s = 0.0;
    for (float v : grid) s += v;
    return s;
}

Tensor4 DensityMap::to_tensor() const { return Tensor4({1, 1, height, width}, grid); }

DensityMap DensityMap::from_tensor(const Tensor4& t, std::size_t scale) {
    const Shape4& s = t.shape();
    if (s.n != 1 || s.c != 1) {
        throw DensityError("density map tensor must be 1x1xHxW, got " + s.str());
    }
    DensityMap m(s.h, s.w, scale);
    std::copy(t.values().begin(), t.values().end(), m.grid.begin());
    return m;
}

std::vector<double> knn_mean_distance(const PointSet& points, std::size_t k) {
    const std::size_t n = points.count();
    if (n <= 1) {
        throw DensityError("knn_mean_distance: needs at least 2 points, got " + std::to_string(n));
    }
    if (k < 1) {
        throw DensityError("knn_mean_distance: k must be positive");
    }
    const std::size_t kk = std::min(k, n - 1);
    std::vector<double> result(n);

#pragma omp parallel for schedule(static) if (parallel::enabled())
    for (Index i = 0; i < static_cast<Index>(n); ++i) {
        std::vector<double> d;
        d.reserve(n - 1);
        const Point& a = points.points[i];
        for (std::size_t j = 0; j < n; ++j) {
            if (static_cast<Index>(j) == i) continue;
            d.push_back(std::hypot(a.x - points.points[j].x, a.y - points.points[j].y));
        }
        std::nth_element(d.begin(), d.begin() + static_cast<Index>(kk) - 1, d.end());
        std::sort(d.begin(), d.begin() + static_cast<Index>(kk));
        double sum = 0.0;
        for (std::size_t j = 0; j < kk; ++j) sum += d[j];
        result[i] = sum / static_cast<double>(kk);
    }
    return result;
}

std::vector<double> adaptive_sigmas(const PointSet& points, const KernelSpec& spec) {
    std::vector<double> sig = knn_mean_distance(points, spec.k_neighbors);
    for (double& s : sig) s = std::max(spec.beta * s, spec.sigma_floor);
    return sig;
}

DensityMap fixed_density(const PointSet& points, const KernelSpec& spec) {
    spec.validate();
    points.validate();
    std::vector<double> acc(points.height * points.width, 0.0);
    for (const Point& p : points.points) {
        splat(acc, points.height, points.width, p, spec.fixed_sigma, spec.fixed_window);
    }
    return finish(acc, points.height, points.width);
}

DensityMap adaptive_density(const PointSet& points, const KernelSpec& spec) {
    spec.validate();
    points.validate();
    if (points.count() < 2) {
        return fixed_density(points, spec);
    }
    const std::vector<double> sigmas = adaptive_sigmas(points, spec);
    std::vector<double> acc(points.height * points.width, 0.0);
    for (std::size_t i = 0; i < points.count(); ++i) {
        splat(acc, points.height, points.width, points.points[i], sigmas[i],
              adaptive_window(sigmas[i]));
    }
    return finish(acc, points.height, points.width);
}

DensityMap generate_density(const PointSet& points, const KernelSpec& spec) {
    return spec.mode == KernelMode::fixed ? fixed_density(points, spec)
                                          : adaptive_density(points, spec);
}

DensityMap downsample_sum(const DensityMap& map, std::size_t factor) {
    if (factor == 0 || map.height % factor != 0 || map.width % factor != 0) {
        throw DensityError("downsample_sum: " + std::to_string(map.height) + "x" +
                           std::to_string(map.width) + " not divisible by " +
                           std::to_string(factor));
    }
    DensityMap out(map.height / factor, map.width / factor, map.scale * factor);
    for (std::size_t y = 0; y < out.height; ++y) {
        for (std::size_t x = 0; x < out.width; ++x) {
            double s = 0.0;
            for (std::size_t dy = 0; dy < factor; ++dy) {
                for (std::size_t dx = 0; dx < factor; ++dx) {
                    s += map.at(y * factor + dy, x * factor + dx);
                }
            }
            out.at(y, x) = static_cast<float>(s);
        }
    }
    return out;
}

}  // namespace crowd
