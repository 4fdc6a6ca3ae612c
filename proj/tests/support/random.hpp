#pragma once

#include <cstdint>
#include <random>

#include "crowd/tensor.hpp"

namespace testing_support {

template <typename T>
crowd::Tensor<T> random_tensor(crowd::Shape4 shape, std::uint64_t seed, double scale = 1.0) {
    crowd::Tensor<T> t(shape);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    for (auto& v : t.values()) v = static_cast<T>(d(rng));
    return t;
}

template <typename T>
double max_abs_diff(const crowd::Tensor<T>& a, const crowd::Tensor<T>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        m = d < 0 ? (m > -d ? m : -d) : (m > d ? m : d);
    }
    return m;
}

}  // namespace testing_support
