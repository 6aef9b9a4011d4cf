#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace smoe {

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a value lies outside an operation's domain (eps <= 0, log of 0, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_volume(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(shape_volume(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (data_.size() != shape_volume(shape_))
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + to_string(shape_));
    }

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

    static Tensor vector(std::initializer_list<double> values) {
        return Tensor({values.size()}, std::vector<double>(values));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("ragged matrix literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Rows/cols view a rank-1 tensor as a single row.
    std::size_t rows() const { return rank() == 1 ? 1 : shape_.at(0); }
    std::size_t cols() const { return rank() == 1 ? shape_.at(0) : shape_.at(1); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * cols(), cols());
    }

    double item() const {
        if (data_.size() != 1) throw DimensionError("item() on non-scalar tensor of shape " + to_string(shape_));
        return data_[0];
    }

    bool is_scalar() const noexcept { return data_.size() == 1; }

    bool all_finite() const noexcept {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor& operator+=(const Tensor& other) {
        require_same_shape(other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    Tensor& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

    void require_same_shape(const Tensor& other, const char* what) const {
        if (shape_ != other.shape_)
            throw DimensionError(std::string(what) + ": shape mismatch " + to_string(shape_) + " vs " +
                                 to_string(other.shape_));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    void validate_shape() const {
        if (shape_.empty()) throw DimensionError("tensor shape must have at least one axis");
        for (std::size_t d : shape_)
            if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape_));
    }

    Shape shape_;
    std::vector<double> data_;
};

inline double squared_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return s;
}

}  // namespace smoe
