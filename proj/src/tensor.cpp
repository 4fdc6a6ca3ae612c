#include "crowd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace crowd {

std::string Shape4::str() const {
    std::ostringstream os;
    os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
    return os.str();
}

void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
    if (!(a == b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
    }
}

template <typename T>
Tensor<T>::Tensor(Shape4 shape, T fill) : shape_(shape), values_(shape.size(), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape4 shape, std::vector<T> values) : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.size()) {
        throw ShapeError("tensor: " + std::to_string(values_.size()) + " values do not fill shape " +
                         shape_.str());
    }
}

template <typename T>
void Tensor<T>::ensure_grad() {
    if (grad_.size() != values_.size()) {
        grad_.assign(values_.size(), T{0});
    }
}

template <typename T>
void Tensor<T>::zero_grad() {
    std::fill(grad_.begin(), grad_.end(), T{0});
}

template <typename T>
std::span<T> Tensor<T>::grad() {
    ensure_grad();
    return grad_;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (grad_.size() != values_.size()) {
        throw std::logic_error("tensor: gradient buffer not allocated");
    }
    return grad_;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape4 shape) const {
    if (shape.size() != values_.size()) {
        throw ShapeError("reshape: " + shape_.str() + " cannot become " + shape.str());
    }
    return Tensor<T>(shape, values_);
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(values_.begin(), values_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace crowd
