#pragma once

// Dense row-major tensor of doubles. Plain value type; the autodiff graph
// wraps these as node payloads.

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "mvcl/errors.hpp"

namespace mvcl {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);
    Tensor(Shape shape, double fill);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2D / 3D indexed access, row-major.
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    void fill(double v);

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  private:
    Shape shape_;
    std::vector<double> data_;
};

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

}  // namespace mvcl
