#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "normlab/diagnostics.hpp"
#include "normlab/model.hpp"
#include "normlab/rng.hpp"

namespace normlab {

// Gradient of a scalar objective at a flat parameter vector.
using GradFn = std::function<std::vector<double>(const std::vector<double>&)>;
// Symmetric linear operator (e.g. a Hessian-vector product).
using LinearOp = std::function<std::vector<double>(const std::vector<double>&)>;

// Central-difference Hessian-vector product:
//   (g(theta + h*v_hat) - g(theta - h*v_hat)) / (2h) * ||v||.
// h <= 0 selects 1e-4 * (1 + max|theta|).
std::vector<double> hvp(const GradFn& grad, const std::vector<double>& theta,
                        const std::vector<double>& v, double h = 0.0);

// Mean cross-entropy gradient of the model on a fixed batch, as a function
// of the flat parameter vector. Calling it overwrites the model parameters.
GradFn model_grad_fn(Model& model, const Tensor& x,
                     const std::vector<std::size_t>& labels, NormMode mode);

// hvp against the model's cross-entropy loss; parameters are restored to
// their exact bytes afterwards.
std::vector<double> model_hvp(Model& model, const Tensor& x,
                              const std::vector<std::size_t>& labels,
                              const std::vector<double>& v, NormMode mode,
                              double h = 0.0);

// Eigendecomposition of a symmetric tridiagonal matrix (implicit QL with
// shifts). diag has n entries, sub n-1. Returns eigenvalues ascending and,
// per eigenvalue, the first component of its unit eigenvector.
struct TridiagEig {
    std::vector<double> values;
    std::vector<double> first_components;
};
TridiagEig symmetric_tridiagonal_eig(std::vector<double> diag, std::vector<double> sub);

struct ProbeSpectrum {
    std::vector<double> ritz;     // ascending
    std::vector<double> weights;  // squared first eigenvector components, sum 1
    bool truncated = false;       // hit a Lanczos breakdown before `order` steps
};

struct SpectrumEstimate {
    std::vector<ProbeSpectrum> probes;
    std::vector<double> ritz_values;  // merged across probes, ascending
    std::vector<double> weights;      // per-probe weights / probe count, sum 1
    std::size_t order = 0;
    std::size_t num_probes = 0;
    std::uint64_t seed = 0;
    bool truncated = false;
};

// Stochastic Lanczos quadrature with full reorthogonalization. Each probe is
// an independent unit Gaussian start vector.
SpectrumEstimate lanczos_spectrum(const LinearOp& op, std::size_t dim, std::size_t order,
                                  std::size_t num_probes, Rng rng);

// lambda_1 / lambda_K over the merged Ritz values sorted descending.
// Requires at least K distinct Ritz values; a non-positive lambda_K is
// reported as +inf with a flag.
Flagged outlier_ratio(const SpectrumEstimate& spectrum, std::size_t k);
double lambda_max(const SpectrumEstimate& spectrum);

// Gaussian-kernel density of the merged spectrum on a grid of evaluation
// points. bandwidth <= 0 selects 0.01 * (spectral range).
std::vector<double> spectral_density(const SpectrumEstimate& spectrum,
                                     const std::vector<double>& grid,
                                     double bandwidth = 0.0);

}  // namespace normlab
