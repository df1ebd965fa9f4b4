#pragma once

#include <string>
#include <vector>

#include "normlab/autograd.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

// Activation-statistic schemes. `batch_train` is batch normalization that
// always uses current-batch statistics, even at eval time, and never touches
// running averages. `bmlv` centers with batch means but scales with
// per-sample stds; `lmbv` is the transpose of that arrangement.
enum class NormKind {
    none,
    batch,
    batch_train,
    layer,
    weight,
    bmlv,
    lmbv,
    prelayernorm,
    regnorm,
    preregnorm,
};

std::string norm_kind_name(NormKind kind);
NormKind parse_norm_kind(const std::string& name);  // ConfigError on unknown names
const std::vector<NormKind>& all_norm_kinds();

bool norm_has_affine(NormKind kind);       // carries gamma/beta
bool norm_uses_batch_stats(NormKind kind); // needs running averages for eval

enum class NormMode { train, eval, batch_train };
std::string norm_mode_name(NormMode mode);
NormMode parse_norm_mode(const std::string& name);

struct NormOptions {
    double eps = 1e-5;
    double momentum = 0.9;  // EMA keep-rate for running statistics
};

// Statistic axes for the two feature layouts: (N, D) and (N, H, W, C).
// Batch statistics pool over everything except channels; per-sample
// statistics pool over everything except the batch axis.
std::vector<std::size_t> batch_axes(std::size_t rank);
std::vector<std::size_t> feature_axes(std::size_t rank);

Var center_mean(Var z, const std::vector<std::size_t>& axes);

// Divides y by the std of y over `axes` (centered, biased, eps inside the
// square root). y is expected to already be centered along whichever axes
// the caller cares about; this op re-centers internally only for the std.
Var scale_by_std(Var y, const std::vector<std::size_t>& axes, double eps);

// Subtract the mean over `mean_axes`, then scale by the std of the centered
// result over `std_axes`.
Var moment_normalize(Var z, const std::vector<std::size_t>& mean_axes,
                     const std::vector<std::size_t>& std_axes, double eps);

// EMA of per-channel batch statistics, shaped to broadcast against features.
struct RunningStats {
    Tensor mean;
    Tensor var;
    bool seen = false;  // true once a train-mode forward has updated them
};
RunningStats make_running_stats(std::size_t rank, std::size_t channels);

Var batch_norm(Var z, NormMode mode, RunningStats& stats, const NormOptions& opts);
Var layer_norm(Var z, const NormOptions& opts);
Var bmlv_norm(Var z, NormMode mode, RunningStats& stats, const NormOptions& opts);
Var lmbv_norm(Var z, NormMode mode, RunningStats& stats, const NormOptions& opts);

// W / ||W||_F. Rejects an all-zero tensor.
Var weight_norm(Var w);

// z / sqrt(mean(z^2) + eps) with the mean over per-sample feature axes.
Var rms_normalize(Var z, const NormOptions& opts);

// Penalty driving per-feature batch means of an RMS-scaled activation to
// zero: 2 * sum_i mean_batch(zbar_i)^2. Equals the average over all ordered
// sample pairs (a, b) of sum_i ((zbar_a_i + zbar_b_i)^2 - 2) when each
// sample satisfies sum_i zbar_i^2 = feature count.
Var reg_norm_penalty(Var zbar);

}  // namespace normlab
