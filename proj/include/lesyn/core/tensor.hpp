#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lesyn/core/rng.hpp"

namespace lesyn {

// Dense row-major tensor. Images are stored CHW, batches NCHW, matrices (rows, cols).
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(numel_of(shape_)), T(0));
    }

    Tensor(std::vector<int64_t> shape, T fill) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(numel_of(shape_)), fill);
    }

    Tensor(std::vector<int64_t> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != numel_of(shape_)) {
            throw std::invalid_argument("tensor: data size does not match shape");
        }
    }

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int64_t> shape, T v) { return Tensor(std::move(shape), v); }

    static Tensor randn(std::vector<int64_t> shape, Rng& rng, T stddev = T(1)) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
        return t;
    }

    static Tensor rand_uniform(std::vector<int64_t> shape, Rng& rng, T lo, T hi) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
        return t;
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    int64_t numel() const { return numel_of(shape_); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    T& at2(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    const T& at2(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }

    T& at3(int64_t c, int64_t h, int64_t w) {
        return data_[static_cast<size_t>((c * shape_[1] + h) * shape_[2] + w)];
    }
    const T& at3(int64_t c, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>((c * shape_[1] + h) * shape_[2] + w)];
    }

    T& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    const T& at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    Tensor reshaped(std::vector<int64_t> new_shape) const {
        if (numel_of(new_shape) != numel()) throw std::invalid_argument("reshape: element count mismatch");
        Tensor t = *this;
        t.shape_ = std::move(new_shape);
        return t;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T& x : data_) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << ")";
        return os.str();
    }

    using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Map = Eigen::Map<EigenMat>;
    using ConstMap = Eigen::Map<const EigenMat>;

    // View the tensor as a (rows x cols) row-major matrix; rows*cols must equal numel.
    Map mat(int64_t rows, int64_t cols) {
        if (rows * cols != numel()) throw std::invalid_argument("mat view: size mismatch");
        return Map(data_.data(), rows, cols);
    }
    ConstMap mat(int64_t rows, int64_t cols) const {
        if (rows * cols != numel()) throw std::invalid_argument("mat view: size mismatch");
        return ConstMap(data_.data(), rows, cols);
    }

    // 2-D tensors map directly.
    Map mat() { return mat(shape_.at(0), shape_.at(1)); }
    ConstMap mat() const { return mat(shape_.at(0), shape_.at(1)); }

    static int64_t numel_of(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

private:
    std::vector<int64_t> shape_;
    std::vector<T> data_;
};

}  // namespace lesyn
