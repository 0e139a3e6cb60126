#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace msrg {

// Dense row-major float32 tensor. Shape is fixed at construction.
// Reductions over tensor data accumulate in float64 (see kernels.hpp).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<float> data);

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, float value);
    static Tensor identity(int64_t n);
    static Tensor row(std::vector<float> values);  // shape [1, n]
    static Tensor vec1d(std::vector<float> values);  // shape [n]
    static Tensor matrix(int64_t rows, int64_t cols, std::vector<float> values);

    const std::vector<int64_t>& shape() const { return shape_; }
    size_t ndim() const { return shape_.size(); }
    int64_t dim(size_t i) const { return shape_[i]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }

    // 2-d accessors; throw DimensionError when the tensor is not 2-d.
    int64_t rows() const;
    int64_t cols() const;
    float& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
    float at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    std::string shape_str() const;

private:
    std::vector<int64_t> shape_;
    std::vector<float> data_;
};

std::string shape_to_string(const std::vector<int64_t>& shape);

// Throws NumericalError naming `context` if any entry is NaN/Inf.
void ensure_finite(const Tensor& t, const char* context);

// Throws DimensionError naming both shapes.
void ensure_same_shape(const Tensor& a, const Tensor& b, const char* context);

}  // namespace msrg
