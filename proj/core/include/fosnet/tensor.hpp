#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "fosnet/errors.hpp"

namespace fosnet {

// On-disk element types of the tensor file format.
enum class Dtype : std::uint8_t { f64 = 0, f32 = 1 };

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major n-d array. The last axis is the fastest-moving one;
// image-like tensors use [rows, cols, channels] (channels-last), batched
// tensors prepend the batch axis.
template <typename T>
class TensorT {
public:
    TensorT() = default;
    explicit TensorT(Shape shape)
        : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}
    TensorT(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("tensor: " + std::to_string(data_.size()) + " values for shape " +
                             shape_str(shape_));
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
    static TensorT full(Shape shape, T v) {
        TensorT t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }
    static TensorT ones(Shape shape) { return full(std::move(shape), T(1)); }
    static TensorT scalar(T v) { return TensorT({1}, {v}); }
    static TensorT from(Shape shape, std::initializer_list<T> values) {
        return TensorT(std::move(shape), std::vector<T>(values));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Row-major multi-index access; no bounds checks beyond debug builds.
    template <typename... Is>
    T& operator()(Is... idx) {
        return data_[offset(idx...)];
    }
    template <typename... Is>
    const T& operator()(Is... idx) const {
        return data_[offset(idx...)];
    }

    template <typename... Is>
    std::size_t offset(Is... idx) const {
        static_assert(sizeof...(idx) >= 1);
        const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
        std::size_t off = 0;
        for (std::size_t a = 0; a < sizeof...(idx); ++a) off = off * shape_[a] + ids[a];
        return off;
    }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool all_finite() const;

    void fill(T v) {
        for (auto& x : data_) x = v;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

// Throws NumericError naming `what` if any element is NaN/Inf.
template <typename T>
void ensure_finite(const TensorT<T>& t, const char* what);

template <typename T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<double>() { return Dtype::f64; }
template <>
constexpr Dtype dtype_of<float>() { return Dtype::f32; }

}  // namespace fosnet
