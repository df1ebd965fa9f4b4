#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normlab/model.hpp"
#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

// Degenerate statistics (zero variance, zero gradient) are reported as NaN
// with ok=false instead of throwing, so a sweep over many configs never
// aborts on one pathological cell.
struct Flagged {
    double value;
    bool ok;
};

// One value per instrumented layer, shallowest first. Correlation traces
// cover the depth-many capture records (normalization sites plus logits);
// the gradient-norm profile covers the depth-many affine layers.
struct DepthTrace {
    std::string metric;
    std::vector<Flagged> values;
    std::uint64_t fingerprint = 0;
    std::size_t step = 0;
};

std::uint64_t config_fingerprint(const ModelConfig& config);

// sigma scales the per-feature std of the batch when relative, otherwise it
// is the absolute noise std. Features that are constant across the batch
// receive no noise in relative mode.
struct NoiseSpec {
    double sigma = 0.01;
    bool relative = true;
};

Tensor perturb(const Tensor& x, const NoiseSpec& noise, Rng& rng);

// Deterministic cores: correlation per layer between two explicit inputs.
DepthTrace activation_correlation(Model& model, const Tensor& x1, const Tensor& x2,
                                  NormMode mode);
DepthTrace activation_gradient_correlation(Model& model, const Tensor& x1,
                                           const Tensor& x2,
                                           const std::vector<std::size_t>& labels,
                                           NormMode mode);

// Noisy-pair wrappers: x + eps1 vs x + eps2 with fresh draws from a copied
// rng, so repeated calls with the same rng state are bitwise identical.
DepthTrace info_prop_correlation(Model& model, const Tensor& x, const NoiseSpec& noise,
                                 NormMode mode, Rng rng);
DepthTrace gradient_correlation_layers(Model& model, const Tensor& x,
                                       const std::vector<std::size_t>& labels,
                                       const NoiseSpec& noise, NormMode mode, Rng rng);

// Pearson correlation of classifier-parameter gradients between minibatch
// pairs; mean over all unordered pairs.
struct ConfusionResult {
    std::vector<double> pairwise;
    Flagged mean;
};
ConfusionResult gradient_confusion(Model& model, const std::vector<Tensor>& batches,
                                   const std::vector<std::vector<std::size_t>>& labels,
                                   NormMode mode);

// L2 norm of parameter gradients per affine layer, plus first/last ratio.
struct GradNormProfile {
    DepthTrace trace;
    Flagged ratio;
};
GradNormProfile gradient_norm_profile(Model& model, const Tensor& x,
                                      const std::vector<std::size_t>& labels,
                                      NormMode mode);

}  // namespace normlab
