#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sadm/errors.hpp"

namespace sadm {

using Shape = std::vector<std::size_t>;

// Eigen's vectorized reductions peel a prefix up to the first aligned
// element, so summation order depends on the buffer address. A fixed
// alignment keeps results bitwise reproducible across runs.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major array of doubles. Rank 0 is a scalar.
class Array {
public:
    Array() = default;

    explicit Array(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        check_shape();
        data_.assign(shape_numel(shape_), fill);
    }

    Array(Shape shape, const std::vector<double>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        check_shape();
        if (data_.size() != shape_numel(shape_)) {
            throw DimensionError("array data length " + std::to_string(data_.size()) + " does not match shape " +
                                 shape_string(shape_));
        }
    }

    static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

    static Array vector(std::vector<double> v) {
        const auto n = v.size();
        return Array(Shape{n}, std::move(v));
    }

    static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
        return Array(Shape{rows, cols}, std::move(v));
    }

    static Array matrix(std::initializer_list<std::initializer_list<double>> rows) {
        std::vector<double> data;
        std::size_t cols = rows.size() ? rows.begin()->size() : 0;
        for (const auto& r : rows) {
            if (r.size() != cols) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), r.begin(), r.end());
        }
        return Array(Shape{rows.size(), cols}, std::move(data));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Matrix view: rank-2 arrays as-is, rank-1 as a single row, scalars as 1x1.
    std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
    std::size_t cols() const noexcept {
        if (shape_.size() == 2) return shape_[1];
        return shape_.size() == 1 ? shape_[0] : 1;
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    Storage& storage() noexcept { return data_; }
    const Storage& storage() const noexcept { return data_; }
    std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }
    double item() const {
        if (data_.size() != 1) throw DimensionError("item() on array of shape " + shape_string(shape_));
        return data_[0];
    }

    MatrixMap mat() noexcept {
        return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
    }
    ConstMatrixMap mat() const noexcept {
        return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Array& other) const noexcept { return shape_ == other.shape_; }

private:
    void check_shape() const {
        for (auto d : shape_) {
            if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_string(shape_));
        }
    }

    Shape shape_;
    Storage data_;
};

}  // namespace sadm
