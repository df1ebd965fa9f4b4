#include "normlab/lanczos.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "normlab/autograd.hpp"
#include "normlab/errors.hpp"

namespace normlab {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void axpy(double a, const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace

std::vector<double> hvp(const GradFn& grad, const std::vector<double>& theta,
                        const std::vector<double>& v, double h) {
    if (theta.size() != v.size()) throw ParamError("hvp: direction size mismatch");
    const double vnorm = l2_norm(v);
    if (vnorm == 0.0) throw ParamError("hvp: zero direction");
    if (h <= 0.0) {
        double tmax = 0.0;
        for (double t : theta) tmax = std::max(tmax, std::abs(t));
        h = 1e-4 * (1.0 + tmax);
    }
    std::vector<double> plus = theta, minus = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double step = h * v[i] / vnorm;
        plus[i] += step;
        minus[i] -= step;
    }
    std::vector<double> gp = grad(plus);
    std::vector<double> gm = grad(minus);
    if (!all_finite(gp) || !all_finite(gm)) {
        throw NumericError("hvp: non-finite gradient");
    }
    std::vector<double> out(theta.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (gp[i] - gm[i]) / (2.0 * h) * vnorm;
    }
    return out;
}

GradFn model_grad_fn(Model& model, const Tensor& x,
                     const std::vector<std::size_t>& labels, NormMode mode) {
    return [&model, x, labels, mode](const std::vector<double>& theta) {
        model.unpack(theta);
        Tape tape;
        ForwardResult fr = model.forward(tape, x, mode, false);
        tape.backward(softmax_cross_entropy(fr.logits, labels));
        std::vector<double> g;
        g.reserve(theta.size());
        for (Var pv : fr.param_vars) {
            Tensor gt = tape.grad(pv);
            g.insert(g.end(), gt.data().begin(), gt.data().end());
        }
        return g;
    };
}

std::vector<double> model_hvp(Model& model, const Tensor& x,
                              const std::vector<std::size_t>& labels,
                              const std::vector<double>& v, NormMode mode, double h) {
    const std::vector<double> theta = model.pack();
    try {
        std::vector<double> out = hvp(model_grad_fn(model, x, labels, mode), theta, v, h);
        model.unpack(theta);
        return out;
    } catch (...) {
        model.unpack(theta);
        throw;
    }
}

TridiagEig symmetric_tridiagonal_eig(std::vector<double> diag, std::vector<double> sub) {
    const std::size_t n = diag.size();
    if (n == 0) throw ParamError("empty tridiagonal matrix");
    if (sub.size() + 1 != n) {
        throw ParamError("tridiagonal: sub-diagonal must have n-1 entries");
    }
    std::vector<double>& d = diag;
    std::vector<double> e = sub;
    e.push_back(0.0);
    std::vector<double> v0(n, 0.0);  // first row of the eigenvector matrix
    v0[0] = 1.0;

    const double eps = std::numeric_limits<double>::epsilon();
    double f = 0.0, tst1 = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
        tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
        std::size_t m = l;
        while (m < n && std::abs(e[m]) > eps * tst1) ++m;
        if (m > l) {
            int iter = 0;
            do {
                if (++iter > 100) {
                    throw NumericError("tridiagonal eigensolver failed to converge");
                }
                double g = d[l];
                double p = (d[l + 1] - g) / (2.0 * e[l]);
                double r = std::hypot(p, 1.0);
                if (p < 0.0) r = -r;
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                const double dl1 = d[l + 1];
                double h = g - d[l];
                for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
                f += h;

                p = d[m];
                double c = 1.0, c2 = c, c3 = c;
                const double el1 = e[l + 1];
                double s = 0.0, s2 = 0.0;
                for (std::size_t i = m; i-- > l;) {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = std::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    const double t = v0[i + 1];
                    v0[i + 1] = s * v0[i] + c * t;
                    v0[i] = c * v0[i] - s * t;
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
            } while (std::abs(e[l]) > eps * tst1);
        }
        d[l] += f;
        e[l] = 0.0;
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
    TridiagEig out;
    out.values.reserve(n);
    out.first_components.reserve(n);
    for (std::size_t i : order) {
        out.values.push_back(d[i]);
        out.first_components.push_back(v0[i]);
    }
    return out;
}

SpectrumEstimate lanczos_spectrum(const LinearOp& op, std::size_t dim, std::size_t order,
                                  std::size_t num_probes, Rng rng) {
    if (dim == 0) throw ParamError("lanczos: zero-dimensional operator");
    if (order == 0 || order > dim) {
        throw ParamError("lanczos: order must lie in [1, dim]");
    }
    if (num_probes == 0) throw ParamError("lanczos: need at least one probe");

    SpectrumEstimate est;
    est.order = order;
    est.num_probes = num_probes;
    est.seed = rng.seed();

    for (std::size_t probe = 0; probe < num_probes; ++probe) {
        std::vector<double> q(dim);
        for (double& x : q) x = rng.normal();
        const double qn = l2_norm(q);
        if (qn == 0.0) throw NumericError("lanczos: degenerate probe vector");
        for (double& x : q) x /= qn;

        std::vector<std::vector<double>> basis{q};
        std::vector<double> alphas, betas;
        ProbeSpectrum ps;
        for (std::size_t j = 0; j < order; ++j) {
            std::vector<double> w = op(basis[j]);
            if (!all_finite(w)) throw NumericError("lanczos: non-finite operator output");
            alphas.push_back(dot(basis[j], w));
            axpy(-alphas.back(), basis[j], w);
            if (j > 0) axpy(-betas.back(), basis[j - 1], w);
            // two-pass reorthogonalization against the whole basis
            for (int pass = 0; pass < 2; ++pass) {
                for (const auto& b : basis) axpy(-dot(b, w), b, w);
            }
            if (j + 1 == order) break;
            const double beta = l2_norm(w);
            if (beta < 1e-12) {
                ps.truncated = true;
                break;
            }
            betas.push_back(beta);
            for (double& x : w) x /= beta;
            basis.push_back(std::move(w));
        }

        TridiagEig te = symmetric_tridiagonal_eig(alphas, betas);
        ps.ritz = te.values;
        ps.weights.reserve(te.first_components.size());
        for (double c : te.first_components) ps.weights.push_back(c * c);
        est.truncated = est.truncated || ps.truncated;
        est.probes.push_back(std::move(ps));
    }

    std::vector<std::pair<double, double>> merged;
    for (const ProbeSpectrum& ps : est.probes) {
        for (std::size_t i = 0; i < ps.ritz.size(); ++i) {
            merged.emplace_back(ps.ritz[i],
                                ps.weights[i] / static_cast<double>(num_probes));
        }
    }
    std::sort(merged.begin(), merged.end());
    for (const auto& [val, w] : merged) {
        est.ritz_values.push_back(val);
        est.weights.push_back(w);
    }
    return est;
}

Flagged outlier_ratio(const SpectrumEstimate& spectrum, std::size_t k) {
    if (k == 0) throw ParamError("outlier ratio: k must be positive");
    std::vector<double> desc = spectrum.ritz_values;
    std::sort(desc.begin(), desc.end(), std::greater<>());
    std::size_t distinct = 0;
    for (std::size_t i = 0; i < desc.size(); ++i) {
        if (i == 0 || desc[i] != desc[i - 1]) ++distinct;
    }
    if (distinct < k) {
        throw ParamError("outlier ratio: need " + std::to_string(k) +
                         " distinct Ritz values, have " + std::to_string(distinct));
    }
    const double top = desc[0];
    const double kth = desc[k - 1];
    if (kth <= 0.0) return {std::numeric_limits<double>::infinity(), false};
    return {top / kth, true};
}

double lambda_max(const SpectrumEstimate& spectrum) {
    if (spectrum.ritz_values.empty()) throw ParamError("empty spectrum");
    return spectrum.ritz_values.back();
}

std::vector<double> spectral_density(const SpectrumEstimate& spectrum,
                                     const std::vector<double>& grid, double bandwidth) {
    if (spectrum.ritz_values.empty()) throw ParamError("empty spectrum");
    double sigma = bandwidth;
    if (sigma <= 0.0) {
        const double range = spectrum.ritz_values.back() - spectrum.ritz_values.front();
        sigma = 0.01 * range;
        if (sigma <= 0.0) sigma = 1e-6 * (1.0 + std::abs(spectrum.ritz_values.back()));
    }
    const double norm = 1.0 / (sigma * std::sqrt(2.0 * 3.14159265358979323846));
    std::vector<double> density(grid.size(), 0.0);
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        for (std::size_t i = 0; i < spectrum.ritz_values.size(); ++i) {
            const double z = (grid[gi] - spectrum.ritz_values[i]) / sigma;
            density[gi] += spectrum.weights[i] * norm * std::exp(-0.5 * z * z);
        }
    }
    return density;
}

}  // namespace normlab
