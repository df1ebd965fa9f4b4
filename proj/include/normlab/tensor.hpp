#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "normlab/rng.hpp"

namespace normlab {

// Dimension sizes, outermost first. Layouts used by the models:
//   (N, D)            dense features
//   (Din, Dout)       dense weights
//   (N, H, W, C)      conv features
//   (Kh, Kw, Cin, Cout) conv kernels
// Rank 0 is a scalar.
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major tensor of doubles. Storage is shared and treated as
// immutable once an operation has produced the tensor; `vec()` exists for
// construction and for owners that know they hold the only reference.
class Tensor {
  public:
    Tensor() : Tensor(Shape{}) {}
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_->size(); }
    std::size_t dim(std::size_t axis) const { return shape_[axis]; }

    double operator[](std::size_t flat) const { return (*data_)[flat]; }
    std::span<const double> data() const { return {data_->data(), data_->size()}; }
    std::vector<double>& vec() { return *data_; }
    const std::vector<double>& vec() const { return *data_; }

    double at2(std::size_t i, std::size_t j) const {
        return (*data_)[i * shape_[1] + j];
    }
    double at4(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
        return (*data_)[((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + c];
    }

    // Same storage, new shape (element counts must agree).
    Tensor reshaped(Shape shape) const;

    Tensor clone() const;
    bool all_finite() const;
    bool bitwise_equal(const Tensor& other) const;

  private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
};

// Elementwise helpers on plain tensors (no tape involvement).
Tensor gaussian(const Shape& shape, double mean, double std, Rng& rng);
double max_abs(const Tensor& t);
double l2_norm(std::span<const double> v);

// Pearson correlation of two equally sized flat value sets. Returns false in
// `ok` when either side has zero variance (value is then NaN).
struct Correlation {
    double value;
    bool ok;
};
Correlation pearson(std::span<const double> u, std::span<const double> v);

}  // namespace normlab
