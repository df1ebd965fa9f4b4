#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

class Tape;

// Handle to a node on a tape. Copies are cheap; the tape owns the data.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const;
};

enum class Padding { valid, same };

Shape matmul_output_shape(const Shape& a, const Shape& b);

// Spatial geometry of a conv, including the asymmetric `same` padding
// (the extra cell goes on the high side when the total is odd).
struct ConvGeom {
    std::size_t ho, wo;
    std::size_t pad_h_lo, pad_h_hi, pad_w_lo, pad_w_hi;
};
ConvGeom conv2d_geometry(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                         std::size_t stride, Padding pad);
Shape conv2d_output_shape(const Shape& x, const Shape& k, std::size_t stride, Padding pad);

// Records every operation in execution order; backward() replays the records
// in strict reverse, so gradient accumulation order is deterministic.
class Tape {
  public:
    using VjpFn = std::function<void(Tape&, const Tensor& gout)>;

    Var leaf(Tensor value);
    Var record(Tensor value, VjpFn vjp);

    const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
    std::size_t size() const { return nodes_.size(); }

    // Seeds the scalar root with 1 and sweeps the tape once. Grads from any
    // earlier backward() on this tape are discarded first.
    void backward(Var root);

    Tensor grad(Var v) const;  // zeros if the node was not reached
    void accumulate(std::size_t id, const Tensor& g);
    void zero_grads();

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        VjpFn vjp;
    };
    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value_of(id); }
inline const Shape& Var::shape() const { return tape->value_of(id).shape(); }

// Elementwise binary ops broadcast trailing-aligned, numpy style.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_scalar(Var a, double c);
Var mul_scalar(Var a, double c);

Var square(Var a);
Var sqrt_op(Var a);  // rejects negative inputs
Var relu(Var a);     // derivative at 0 is 0
Var tanh_op(Var a);

Var matmul(Var a, Var b);  // (N,D) x (D,M)
Var conv2d(Var x, Var k, std::size_t stride, Padding pad);  // NHWC, kernels (Kh,Kw,Cin,Cout)

Var reduce_mean(Var a, const std::vector<std::size_t>& axes, bool keepdims);
Var reduce_sum(Var a, const std::vector<std::size_t>& axes, bool keepdims);
Var mean_all(Var a);  // rank-0 result
Var sum_all(Var a);
Var reshape(Var a, Shape shape);

// Mean negative log-likelihood over the batch; logits (N,K).
Var softmax_cross_entropy(Var logits, const std::vector<std::size_t>& labels);

}  // namespace normlab
