#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "normlab/autograd.hpp"
#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"

namespace normlab::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
    Tensor t(shape);
    for (auto& v : t.vec()) v = rng.normal() * scale;
    return t;
}

// Scalar-valued function of n leaf tensors, built fresh on each call so the
// same graph can be replayed at perturbed inputs.
using ScalarGraph = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradcheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// Compares reverse-mode gradients against central differences. Entries with
// |analytic| and |numeric| both below `floor` are skipped (relative error is
// meaningless there).
inline GradcheckReport gradcheck(const ScalarGraph& f, std::vector<Tensor> inputs,
                                 double h_scale = 1e-5, double floor = 1e-8) {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
    Var out = f(tape, leaves);
    tape.backward(out);
    std::vector<Tensor> grads;
    for (Var v : leaves) grads.push_back(tape.grad(v));

    const auto eval_at = [&](const std::vector<Tensor>& xs) {
        Tape t2;
        std::vector<Var> ls;
        for (const Tensor& t : xs) ls.push_back(t2.leaf(t));
        return f(t2, ls).value()[0];
    };

    GradcheckReport report;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
            const double x0 = inputs[i][j];
            const double h = h_scale * (1.0 + std::abs(x0));
            std::vector<Tensor> plus = inputs;
            plus[i] = inputs[i].clone();
            plus[i].vec()[j] = x0 + h;
            std::vector<Tensor> minus = inputs;
            minus[i] = inputs[i].clone();
            minus[i].vec()[j] = x0 - h;
            const double numeric = (eval_at(plus) - eval_at(minus)) / (2.0 * h);
            const double analytic = grads[i][j];
            if (std::abs(analytic) < floor && std::abs(numeric) < floor) continue;
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-12});
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.checked;
        }
    }
    return report;
}

// Plain triple-loop reference, no blocking or reassociation.
inline Tensor ref_matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a.at2(i, p) * b.at2(p, j);
            out.vec()[i * n + j] = acc;
        }
    }
    return out;
}

// Direct 7-loop convolution over explicit padding offsets.
inline Tensor ref_conv2d(const Tensor& x, const Tensor& k, std::size_t stride,
                         Padding pad) {
    const ConvGeom g = conv2d_geometry(x.dim(1), x.dim(2), k.dim(0), k.dim(1), stride, pad);
    const std::size_t n = x.dim(0), cin = x.dim(3), cout = k.dim(3);
    Tensor out(Shape{n, g.ho, g.wo, cout});
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
                for (std::size_t co = 0; co < cout; ++co) {
                    double acc = 0.0;
                    for (std::size_t kh = 0; kh < k.dim(0); ++kh) {
                        for (std::size_t kw = 0; kw < k.dim(1); ++kw) {
                            const std::ptrdiff_t ih =
                                std::ptrdiff_t(oh * stride + kh) - std::ptrdiff_t(g.pad_h_lo);
                            const std::ptrdiff_t iw =
                                std::ptrdiff_t(ow * stride + kw) - std::ptrdiff_t(g.pad_w_lo);
                            if (ih < 0 || iw < 0 || ih >= std::ptrdiff_t(x.dim(1)) ||
                                iw >= std::ptrdiff_t(x.dim(2))) {
                                continue;
                            }
                            for (std::size_t ci = 0; ci < cin; ++ci) {
                                acc += x.at4(b, std::size_t(ih), std::size_t(iw), ci) *
                                       k.at4(kh, kw, ci, co);
                            }
                        }
                    }
                    out.vec()[((b * g.ho + oh) * g.wo + ow) * cout + co] = acc;
                }
            }
        }
    }
    return out;
}

// Extended-precision softmax cross-entropy with max subtraction.
inline double ref_softmax_ce(const Tensor& logits, const std::vector<std::size_t>& labels) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    long double total = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        long double mx = logits.at2(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max<long double>(mx, logits.at2(i, j));
        long double denom = 0.0L;
        for (std::size_t j = 0; j < k; ++j) denom += expl((long double)logits.at2(i, j) - mx);
        total += logl(denom) - ((long double)logits.at2(i, labels[i]) - mx);
    }
    return double(total / (long double)n);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace normlab::testing
