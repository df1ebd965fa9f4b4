#include "normlab/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "normlab/errors.hpp"

namespace normlab {

namespace {

void check_same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw ParamError("ops require operands from the same tape");
    }
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t ai = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t bi = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (ai != bi && ai != 1 && bi != 1) {
            throw ShapeError("broadcast: " + shape_str(a) + " vs " + shape_str(b));
        }
        out[i] = std::max(ai, bi);
    }
    return out;
}

// Row-major strides padded to `rank`, with stride 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& in, std::size_t rank) {
    std::vector<std::size_t> strides(rank, 0);
    std::size_t s = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
        strides[rank - in.size() + i] = in[i] == 1 ? 0 : s;
        s *= in[i];
    }
    return strides;
}

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const Shape& out_shape, F f) {
    Tensor out(out_shape);
    const auto sa = broadcast_strides(a.shape(), out_shape.size());
    const auto sb = broadcast_strides(b.shape(), out_shape.size());
    const auto av = a.data();
    const auto bv = b.data();
    auto& ov = out.vec();
    std::vector<std::size_t> idx(out_shape.size(), 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < ov.size(); ++i) {
        ov[i] = f(av[oa], bv[ob]);
        for (std::size_t d = out_shape.size(); d-- > 0;) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out_shape[d]) break;
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    return out;
}

// Sums `g` down to `target` (the inverse of broadcasting g's producer).
Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    Tensor out(target);
    const auto st = broadcast_strides(target, g.rank());
    const auto gv = g.data();
    auto& ov = out.vec();
    std::vector<std::size_t> idx(g.rank(), 0);
    std::size_t ot = 0;
    for (std::size_t i = 0; i < gv.size(); ++i) {
        ov[ot] += gv[i];
        for (std::size_t d = g.rank(); d-- > 0;) {
            ++idx[d];
            ot += st[d];
            if (idx[d] < g.dim(d)) break;
            ot -= st[d] * g.dim(d);
            idx[d] = 0;
        }
    }
    return out;
}

void gemm(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
          const double* __restrict b, double* __restrict c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            if (aip == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// c(m,n) = a(k,m)^T * b(k,n)
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
             const double* __restrict b, double* __restrict c) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double api = ap[i];
            if (api == 0.0) continue;
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

// c(m,n) = a(m,k) * b(n,k)^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* __restrict a,
             const double* __restrict b, double* __restrict c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = s;
        }
    }
}

Tensor im2col(const Tensor& x, std::size_t kh, std::size_t kw, std::size_t stride,
              const ConvGeom& g) {
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t patch = kh * kw * cin;
    Tensor cols(Shape{n * g.ho * g.wo, patch});
    auto& cv = cols.vec();
    const auto xv = x.data();
    std::size_t row = 0;
    for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t ho = 0; ho < g.ho; ++ho) {
            for (std::size_t wo = 0; wo < g.wo; ++wo, ++row) {
                double* dst = cv.data() + row * patch;
                for (std::size_t ih = 0; ih < kh; ++ih) {
                    const std::ptrdiff_t sh =
                        static_cast<std::ptrdiff_t>(ho * stride + ih) -
                        static_cast<std::ptrdiff_t>(g.pad_h_lo);
                    if (sh < 0 || sh >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t iw = 0; iw < kw; ++iw) {
                        const std::ptrdiff_t sw =
                            static_cast<std::ptrdiff_t>(wo * stride + iw) -
                            static_cast<std::ptrdiff_t>(g.pad_w_lo);
                        if (sw < 0 || sw >= static_cast<std::ptrdiff_t>(w)) continue;
                        const double* src =
                            xv.data() + ((in * h + static_cast<std::size_t>(sh)) * w +
                                         static_cast<std::size_t>(sw)) *
                                            cin;
                        std::copy(src, src + cin, dst + (ih * kw + iw) * cin);
                    }
                }
            }
        }
    }
    return cols;
}

void col2im_add(const Tensor& gcols, std::size_t kh, std::size_t kw, std::size_t stride,
                const ConvGeom& g, Tensor& gx) {
    const std::size_t n = gx.dim(0), h = gx.dim(1), w = gx.dim(2), cin = gx.dim(3);
    const std::size_t patch = kh * kw * cin;
    const auto cv = gcols.data();
    auto& xv = gx.vec();
    std::size_t row = 0;
    for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t ho = 0; ho < g.ho; ++ho) {
            for (std::size_t wo = 0; wo < g.wo; ++wo, ++row) {
                const double* src = cv.data() + row * patch;
                for (std::size_t ih = 0; ih < kh; ++ih) {
                    const std::ptrdiff_t sh =
                        static_cast<std::ptrdiff_t>(ho * stride + ih) -
                        static_cast<std::ptrdiff_t>(g.pad_h_lo);
                    if (sh < 0 || sh >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t iw = 0; iw < kw; ++iw) {
                        const std::ptrdiff_t sw =
                            static_cast<std::ptrdiff_t>(wo * stride + iw) -
                            static_cast<std::ptrdiff_t>(g.pad_w_lo);
                        if (sw < 0 || sw >= static_cast<std::ptrdiff_t>(w)) continue;
                        double* dst =
                            xv.data() + ((in * h + static_cast<std::size_t>(sh)) * w +
                                         static_cast<std::size_t>(sw)) *
                                            cin;
                        const double* s = src + (ih * kw + iw) * cin;
                        for (std::size_t c = 0; c < cin; ++c) dst[c] += s[c];
                    }
                }
            }
        }
    }
}

// Mapping from input flat index to reduced-output flat index. Works for both
// keepdims variants because dropped axes contribute stride 0 either way.
struct ReduceMap {
    Shape out_shape;
    std::vector<std::size_t> out_strides;  // per input axis
    std::size_t count;                     // elements folded into each output cell
};

ReduceMap make_reduce_map(const Shape& in, const std::vector<std::size_t>& axes,
                          bool keepdims) {
    std::vector<bool> reduced(in.size(), false);
    for (std::size_t ax : axes) {
        if (ax >= in.size()) {
            throw ParamError("reduce: axis " + std::to_string(ax) + " out of range for " +
                             shape_str(in));
        }
        if (reduced[ax]) throw ParamError("reduce: duplicate axis " + std::to_string(ax));
        reduced[ax] = true;
    }
    ReduceMap m;
    m.count = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (reduced[i]) {
            m.count *= in[i];
            if (keepdims) m.out_shape.push_back(1);
        } else {
            m.out_shape.push_back(in[i]);
        }
    }
    m.out_strides.assign(in.size(), 0);
    std::size_t s = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
        if (!reduced[i]) {
            m.out_strides[i] = s;
            s *= in[i];
        }
    }
    return m;
}

Var reduce_impl(Var a, const std::vector<std::size_t>& axes, bool keepdims, bool mean) {
    const Tensor& x = a.value();
    ReduceMap m = make_reduce_map(x.shape(), axes, keepdims);
    Tensor out(m.out_shape);
    auto& ov = out.vec();
    const auto xv = x.data();
    std::vector<std::size_t> idx(x.rank(), 0);
    std::size_t oi = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        ov[oi] += xv[i];
        for (std::size_t d = x.rank(); d-- > 0;) {
            ++idx[d];
            oi += m.out_strides[d];
            if (idx[d] < x.dim(d)) break;
            oi -= m.out_strides[d] * x.dim(d);
            idx[d] = 0;
        }
    }
    const double scale = mean ? 1.0 / static_cast<double>(m.count) : 1.0;
    if (mean) {
        for (double& v : ov) v *= scale;
    }
    Shape in_shape = x.shape();
    return a.tape->record(std::move(out), [a, m, in_shape, scale](Tape& t, const Tensor& g) {
        Tensor gx(in_shape);
        auto& gv = gx.vec();
        const auto go = g.data();
        std::vector<std::size_t> idx(in_shape.size(), 0);
        std::size_t oi = 0;
        for (std::size_t i = 0; i < gv.size(); ++i) {
            gv[i] = go[oi] * scale;
            for (std::size_t d = in_shape.size(); d-- > 0;) {
                ++idx[d];
                oi += m.out_strides[d];
                if (idx[d] < in_shape[d]) break;
                oi -= m.out_strides[d] * in_shape[d];
                idx[d] = 0;
            }
        }
        t.accumulate(a.id, gx);
    });
}

}  // namespace

Shape matmul_output_shape(const Shape& a, const Shape& b) {
    if (a.size() != 2 || b.size() != 2 || a[1] != b[0]) {
        throw ShapeError("matmul: " + shape_str(a) + " x " + shape_str(b));
    }
    return {a[0], b[1]};
}

ConvGeom conv2d_geometry(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                         std::size_t stride, Padding pad) {
    if (stride == 0) throw ParamError("conv2d: stride must be >= 1");
    if (kh == 0 || kw == 0) throw ParamError("conv2d: empty kernel");
    ConvGeom g{};
    if (pad == Padding::valid) {
        if (h < kh || w < kw) {
            throw ShapeError("conv2d: input " + std::to_string(h) + "x" + std::to_string(w) +
                             " smaller than kernel with valid padding");
        }
        g.ho = (h - kh) / stride + 1;
        g.wo = (w - kw) / stride + 1;
    } else {
        g.ho = (h + stride - 1) / stride;
        g.wo = (w + stride - 1) / stride;
        const std::size_t need_h = (g.ho - 1) * stride + kh;
        const std::size_t need_w = (g.wo - 1) * stride + kw;
        const std::size_t total_h = need_h > h ? need_h - h : 0;
        const std::size_t total_w = need_w > w ? need_w - w : 0;
        g.pad_h_lo = total_h / 2;
        g.pad_h_hi = total_h - g.pad_h_lo;
        g.pad_w_lo = total_w / 2;
        g.pad_w_hi = total_w - g.pad_w_lo;
    }
    return g;
}

Shape conv2d_output_shape(const Shape& x, const Shape& k, std::size_t stride, Padding pad) {
    if (x.size() != 4 || k.size() != 4) {
        throw ShapeError("conv2d: want rank-4 input and kernel, got " + shape_str(x) +
                         " and " + shape_str(k));
    }
    if (x[3] != k[2]) {
        throw ShapeError("conv2d: input channels " + std::to_string(x[3]) +
                         " != kernel channels " + std::to_string(k[2]));
    }
    ConvGeom g = conv2d_geometry(x[1], x[2], k[0], k[1], stride, pad);
    return {x[0], g.ho, g.wo, k[3]};
}

Var Tape::leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr});
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, VjpFn vjp) {
    nodes_.push_back(Node{std::move(value), Tensor{}, false, std::move(vjp)});
    return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!same_shape(g.shape(), n.value.shape())) {
        throw ShapeError("grad shape " + shape_str(g.shape()) + " != value shape " +
                         shape_str(n.value.shape()));
    }
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape());
        n.has_grad = true;
    }
    auto& dst = n.grad.vec();
    const auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::zero_grads() {
    for (Node& n : nodes_) {
        n.grad = Tensor{};
        n.has_grad = false;
    }
}

void Tape::backward(Var root) {
    if (root.tape != this) throw UsageError("backward: root from another tape");
    if (root.value().rank() != 0) {
        throw UsageError("backward: root must be a scalar, got " +
                         shape_str(root.value().shape()));
    }
    zero_grads();
    accumulate(root.id, Tensor::scalar(1.0));
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.has_grad && n.vjp) n.vjp(*this, n.grad);
    }
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (!n.has_grad) return Tensor(n.value.shape());
    return n.grad;
}

Var add(Var a, Var b) {
    check_same_tape(a, b);
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    Tensor out = broadcast_binary(a.value(), b.value(), out_shape,
                                  [](double x, double y) { return x + y; });
    return a.tape->record(std::move(out), [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a.id, reduce_to_shape(g, a.shape()));
        t.accumulate(b.id, reduce_to_shape(g, b.shape()));
    });
}

Var sub(Var a, Var b) {
    check_same_tape(a, b);
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    Tensor out = broadcast_binary(a.value(), b.value(), out_shape,
                                  [](double x, double y) { return x - y; });
    return a.tape->record(std::move(out), [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a.id, reduce_to_shape(g, a.shape()));
        Tensor neg(g.shape());
        auto& nv = neg.vec();
        const auto gv = g.data();
        for (std::size_t i = 0; i < nv.size(); ++i) nv[i] = -gv[i];
        t.accumulate(b.id, reduce_to_shape(neg, b.shape()));
    });
}

Var mul(Var a, Var b) {
    check_same_tape(a, b);
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    Tensor av = a.value(), bv = b.value();
    Tensor out = broadcast_binary(av, bv, out_shape,
                                  [](double x, double y) { return x * y; });
    return a.tape->record(std::move(out), [a, b, av, bv, out_shape](Tape& t, const Tensor& g) {
        Tensor ga = broadcast_binary(g, bv, out_shape, [](double x, double y) { return x * y; });
        t.accumulate(a.id, reduce_to_shape(ga, a.shape()));
        Tensor gb = broadcast_binary(g, av, out_shape, [](double x, double y) { return x * y; });
        t.accumulate(b.id, reduce_to_shape(gb, b.shape()));
    });
}

Var div(Var a, Var b) {
    check_same_tape(a, b);
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    Tensor av = a.value(), bv = b.value();
    Tensor out = broadcast_binary(av, bv, out_shape,
                                  [](double x, double y) { return x / y; });
    Tensor q = out;  // a/b, reused for the denominator gradient
    return a.tape->record(std::move(out), [a, b, bv, q, out_shape](Tape& t, const Tensor& g) {
        Tensor ga = broadcast_binary(g, bv, out_shape, [](double x, double y) { return x / y; });
        t.accumulate(a.id, reduce_to_shape(ga, a.shape()));
        Tensor gq = broadcast_binary(ga, q, q.shape(),
                                     [](double x, double y) { return -x * y; });
        t.accumulate(b.id, reduce_to_shape(gq, b.shape()));
    });
}

Var add_scalar(Var a, double c) {
    Tensor out = a.value().clone();
    for (double& x : out.vec()) x += c;
    return a.tape->record(std::move(out),
                          [a](Tape& t, const Tensor& g) { t.accumulate(a.id, g); });
}

Var mul_scalar(Var a, double c) {
    Tensor out = a.value().clone();
    for (double& x : out.vec()) x *= c;
    return a.tape->record(std::move(out), [a, c](Tape& t, const Tensor& g) {
        Tensor gx(g.shape());
        auto& gv = gx.vec();
        const auto go = g.data();
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = go[i] * c;
        t.accumulate(a.id, gx);
    });
}

Var square(Var a) {
    Tensor x = a.value();
    Tensor out(x.shape());
    {
        auto& ov = out.vec();
        const auto xv = x.data();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * xv[i];
    }
    return a.tape->record(std::move(out), [a, x](Tape& t, const Tensor& g) {
        Tensor gx(x.shape());
        auto& gv = gx.vec();
        const auto go = g.data();
        const auto xv = x.data();
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = 2.0 * xv[i] * go[i];
        t.accumulate(a.id, gx);
    });
}

Var sqrt_op(Var a) {
    Tensor x = a.value();
    Tensor out(x.shape());
    {
        auto& ov = out.vec();
        const auto xv = x.data();
        for (std::size_t i = 0; i < ov.size(); ++i) {
            if (xv[i] < 0.0) throw NumericError("sqrt of negative value");
            ov[i] = std::sqrt(xv[i]);
        }
    }
    Tensor y = out;
    return a.tape->record(std::move(out), [a, y](Tape& t, const Tensor& g) {
        Tensor gx(y.shape());
        auto& gv = gx.vec();
        const auto go = g.data();
        const auto yv = y.data();
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = 0.5 * go[i] / yv[i];
        t.accumulate(a.id, gx);
    });
}

Var relu(Var a) {
    Tensor x = a.value();
    Tensor out(x.shape());
    {
        auto& ov = out.vec();
        const auto xv = x.data();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    }
    return a.tape->record(std::move(out), [a, x](Tape& t, const Tensor& g) {
        Tensor gx(x.shape());
        auto& gv = gx.vec();
        const auto go = g.data();
        const auto xv = x.data();
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = xv[i] > 0.0 ? go[i] : 0.0;
        t.accumulate(a.id, gx);
    });
}

Var tanh_op(Var a) {
    Tensor out(a.shape());
    {
        auto& ov = out.vec();
        const auto xv = a.value().data();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::tanh(xv[i]);
    }
    Tensor y = out;
    return a.tape->record(std::move(out), [a, y](Tape& t, const Tensor& g) {
        Tensor gx(y.shape());
        auto& gv = gx.vec();
        const auto go = g.data();
        const auto yv = y.data();
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = (1.0 - yv[i] * yv[i]) * go[i];
        t.accumulate(a.id, gx);
    });
}

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    Tensor av = a.value(), bv = b.value();
    Shape out_shape = matmul_output_shape(av.shape(), bv.shape());
    const std::size_t n = av.dim(0), d = av.dim(1), m = bv.dim(1);
    Tensor out(out_shape);
    gemm(n, d, m, av.data().data(), bv.data().data(), out.vec().data());
    return a.tape->record(std::move(out), [a, b, av, bv, n, d, m](Tape& t, const Tensor& g) {
        Tensor ga(Shape{n, d});
        gemm_nt(n, m, d, g.data().data(), bv.data().data(), ga.vec().data());
        t.accumulate(a.id, ga);
        Tensor gb(Shape{d, m});
        gemm_tn(d, n, m, av.data().data(), g.data().data(), gb.vec().data());
        t.accumulate(b.id, gb);
    });
}

Var conv2d(Var x, Var k, std::size_t stride, Padding pad) {
    check_same_tape(x, k);
    Tensor xv = x.value(), kv = k.value();
    Shape out_shape = conv2d_output_shape(xv.shape(), kv.shape(), stride, pad);
    const std::size_t kh = kv.dim(0), kw = kv.dim(1), cout = kv.dim(3);
    const std::size_t patch = kh * kw * kv.dim(2);
    ConvGeom geom = conv2d_geometry(xv.dim(1), xv.dim(2), kh, kw, stride, pad);
    Tensor cols = im2col(xv, kh, kw, stride, geom);
    const std::size_t rows = cols.dim(0);
    Tensor out(Shape{rows, cout});
    gemm(rows, patch, cout, cols.data().data(), kv.data().data(), out.vec().data());
    out = out.reshaped(out_shape);
    return x.tape->record(
        std::move(out),
        [x, k, xv, kv, cols, geom, stride, kh, kw, cout, patch, rows](Tape& t,
                                                                      const Tensor& g) {
            Tensor gflat = g.reshaped(Shape{rows, cout});
            Tensor gk(kv.shape());
            gemm_tn(patch, rows, cout, cols.data().data(), gflat.data().data(),
                    gk.vec().data());
            t.accumulate(k.id, gk);
            Tensor gcols(Shape{rows, patch});
            gemm_nt(rows, cout, patch, gflat.data().data(), kv.data().data(),
                    gcols.vec().data());
            Tensor gx(xv.shape());
            col2im_add(gcols, kh, kw, stride, geom, gx);
            t.accumulate(x.id, gx);
        });
}

Var reduce_mean(Var a, const std::vector<std::size_t>& axes, bool keepdims) {
    return reduce_impl(a, axes, keepdims, true);
}

Var reduce_sum(Var a, const std::vector<std::size_t>& axes, bool keepdims) {
    return reduce_impl(a, axes, keepdims, false);
}

Var mean_all(Var a) {
    std::vector<std::size_t> axes(a.shape().size());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    return reduce_impl(a, axes, false, true);
}

Var sum_all(Var a) {
    std::vector<std::size_t> axes(a.shape().size());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    return reduce_impl(a, axes, false, false);
}

Var reshape(Var a, Shape shape) {
    Shape in_shape = a.shape();
    Tensor out = a.value().reshaped(std::move(shape));
    return a.tape->record(std::move(out), [a, in_shape](Tape& t, const Tensor& g) {
        t.accumulate(a.id, g.reshaped(in_shape));
    });
}

Var softmax_cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
    const Tensor& z = logits.value();
    if (z.rank() != 2) {
        throw ShapeError("cross entropy: want (N, K) logits, got " + shape_str(z.shape()));
    }
    const std::size_t n = z.dim(0), k = z.dim(1);
    if (labels.size() != n) {
        throw DataError("cross entropy: " + std::to_string(labels.size()) +
                        " labels for batch of " + std::to_string(n));
    }
    Tensor probs(Shape{n, k});
    double loss = 0.0;
    {
        auto& pv = probs.vec();
        const auto zv = z.data();
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] >= k) {
                throw DataError("cross entropy: label " + std::to_string(labels[i]) +
                                " out of range for " + std::to_string(k) + " classes");
            }
            const double* row = zv.data() + i * k;
            double m = row[0];
            for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                pv[i * k + j] = std::exp(row[j] - m);
                sum += pv[i * k + j];
            }
            for (std::size_t j = 0; j < k; ++j) pv[i * k + j] /= sum;
            loss += m + std::log(sum) - row[labels[i]];
        }
        loss /= static_cast<double>(n);
    }
    std::vector<std::size_t> lab = labels;
    return logits.tape->record(
        Tensor::scalar(loss), [logits, probs, lab, n, k](Tape& t, const Tensor& g) {
            const double gs = g[0] / static_cast<double>(n);
            Tensor gz(Shape{n, k});
            auto& gv = gz.vec();
            const auto pv = probs.data();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < k; ++j) {
                    gv[i * k + j] = gs * (pv[i * k + j] - (lab[i] == j ? 1.0 : 0.0));
                }
            }
            t.accumulate(logits.id, gz);
        });
}

}  // namespace normlab
