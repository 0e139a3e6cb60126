#include "msrg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "msrg/errors.hpp"

namespace msrg {

namespace {

int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(checked_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != static_cast<int64_t>(data_.size())) {
        throw DimensionError("data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::full(std::vector<int64_t> shape, float value) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = value;
    return t;
}

Tensor Tensor::identity(int64_t n) {
    Tensor t({n, n});
    for (int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
    return t;
}

Tensor Tensor::row(std::vector<float> values) {
    const int64_t n = static_cast<int64_t>(values.size());
    return Tensor({1, n}, std::move(values));
}

Tensor Tensor::vec1d(std::vector<float> values) {
    const int64_t n = static_cast<int64_t>(values.size());
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(int64_t rows, int64_t cols, std::vector<float> values) {
    return Tensor({rows, cols}, std::move(values));
}

int64_t Tensor::rows() const {
    if (shape_.size() != 2) throw DimensionError("expected 2-d tensor, got " + shape_str());
    return shape_[0];
}

int64_t Tensor::cols() const {
    if (shape_.size() != 2) throw DimensionError("expected 2-d tensor, got " + shape_str());
    return shape_[1];
}

bool Tensor::all_finite() const {
    for (float x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::string shape_to_string(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void ensure_finite(const Tensor& t, const char* context) {
    if (!t.all_finite()) {
        throw NumericalError(std::string(context) + ": non-finite value in tensor " + t.shape_str());
    }
}

void ensure_same_shape(const Tensor& a, const Tensor& b, const char* context) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(context) + ": shape mismatch " + a.shape_str() +
                             " vs " + b.shape_str());
    }
}

}  // namespace msrg
