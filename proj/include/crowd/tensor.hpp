#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace crowd {

// Raised for any shape or size contract violation in the tensor engine.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// (batch, channels, height, width), row-major.
struct Shape4 {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    std::size_t size() const { return n * c * h * w; }
    std::size_t plane() const { return h * w; }
    bool operator==(const Shape4&) const = default;
    std::string str() const;
};

/// Dense 4-D grid with an optional gradient buffer of the same shape.
///
/// The gradient buffer is allocated lazily by ensure_grad(); layer backward
/// passes accumulate into it so that parameters applied several times in one
/// forward pass (weight sharing) collect the sum of all contributions.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape4 shape, T fill = T{0});
    Tensor(Shape4 shape, std::vector<T> values);

    const Shape4& shape() const { return shape_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    std::span<T> values() { return values_; }
    std::span<const T> values() const { return values_; }
    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }

    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        return values_[offset(n, c, y, x)];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return values_[offset(n, c, y, x)];
    }

    bool has_grad() const { return !grad_.empty(); }
    void ensure_grad();
    void zero_grad();
    void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }
    std::span<T> grad();
    std::span<const T> grad() const;

    // Copy of this tensor's values with a different shape of equal size.
    Tensor reshaped(Shape4 shape) const;

    void fill(T value);
    bool all_finite() const;

private:
    Shape4 shape_{};
    std::vector<T> values_;
    std::vector<T> grad_;
};

using Tensor4 = Tensor<float>;

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
    Tensor<To> out(src.shape());
    auto in = src.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < in.size(); ++i) {
        dst[i] = static_cast<To>(in[i]);
    }
    return out;
}

// Throws ShapeError with both shapes in the message unless a == b.
void require_same_shape(const Shape4& a, const Shape4& b, const char* what);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace crowd
