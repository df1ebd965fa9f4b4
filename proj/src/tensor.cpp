#include "normlab/tensor.hpp"

#include <cmath>
#include <sstream>

#include "normlab/errors.hpp"

namespace normlab {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    if (values.size() != shape_numel(shape_)) {
        throw ShapeError("tensor: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape_));
    }
    data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    for (double& x : t.vec()) x = value;
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) +
                         " changes element count");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

Tensor Tensor::clone() const {
    return Tensor(shape_, *data_);
}

bool Tensor::all_finite() const {
    for (double x : *data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    const auto& a = *data_;
    const auto& b = *other.data_;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i] || std::signbit(a[i]) != std::signbit(b[i])) return false;
    }
    return true;
}

Tensor gaussian(const Shape& shape, double mean, double std, Rng& rng) {
    Tensor t(shape);
    for (double& x : t.vec()) x = rng.normal(mean, std);
    return t;
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double x : t.data()) m = std::max(m, std::abs(x));
    return m;
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

Correlation pearson(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size() || u.empty()) {
        throw ShapeError("pearson: size mismatch");
    }
    const double n = static_cast<double>(u.size());
    double mu = 0.0, mv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        mu += u[i];
        mv += v[i];
    }
    mu /= n;
    mv /= n;
    double suu = 0.0, svv = 0.0, suv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double du = u[i] - mu;
        const double dv = v[i] - mv;
        suu += du * du;
        svv += dv * dv;
        suv += du * dv;
    }
    if (suu == 0.0 || svv == 0.0) {
        return {std::nan(""), false};
    }
    return {suv / std::sqrt(suu * svv), true};
}

}  // namespace normlab
