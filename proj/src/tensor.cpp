#include "mvcl/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mvcl {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
    for (auto d : shape_) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_numel(shape_) != data_.size()) {
        throw DimensionError("value count " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }
}

Tensor::Tensor(Shape shape, double fill) : Tensor(std::move(shape)) {
    this->fill(fill);
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::fill(double v) {
    for (auto& x : data_) x = v;
}

}  // namespace mvcl
