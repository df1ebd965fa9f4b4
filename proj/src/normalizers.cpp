#include "normlab/normalizers.hpp"

#include <cmath>

#include "normlab/errors.hpp"

namespace normlab {

namespace {

const std::vector<std::pair<NormKind, std::string>>& kind_names() {
    static const std::vector<std::pair<NormKind, std::string>> table = {
        {NormKind::none, "none"},
        {NormKind::batch, "batch"},
        {NormKind::batch_train, "batch_train"},
        {NormKind::layer, "layer"},
        {NormKind::weight, "weight"},
        {NormKind::bmlv, "bmlv"},
        {NormKind::lmbv, "lmbv"},
        {NormKind::prelayernorm, "prelayernorm"},
        {NormKind::regnorm, "regnorm"},
        {NormKind::preregnorm, "preregnorm"},
    };
    return table;
}

void check_feature_rank(const Shape& shape) {
    if (shape.size() != 2 && shape.size() != 4) {
        throw ShapeError("normalizer: want rank-2 or rank-4 features, got " +
                         shape_str(shape));
    }
}

std::size_t batch_count(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t ax : batch_axes(shape.size())) n *= shape[ax];
    return n;
}

// Per-channel batch moments of z, computed off-tape for the running EMA.
// `center_per_sample` first removes each sample's feature mean, matching
// what the lmbv scale actually divides by.
void channel_moments(const Tensor& z, bool center_per_sample, Tensor& mean_out,
                     Tensor& var_out) {
    Tape scratch;
    Var v = scratch.leaf(z);
    if (center_per_sample) v = center_mean(v, feature_axes(z.rank()));
    Var mu = reduce_mean(v, batch_axes(z.rank()), true);
    Var var = reduce_mean(square(sub(v, mu)), batch_axes(z.rank()), true);
    mean_out = mu.value();
    var_out = var.value();
}

void ema_update(Tensor& running, const Tensor& fresh, double momentum) {
    auto& rv = running.vec();
    const auto fv = fresh.data();
    for (std::size_t i = 0; i < rv.size(); ++i) {
        rv[i] = momentum * rv[i] + (1.0 - momentum) * fv[i];
    }
}

void check_batch_size(const Tensor& z) {
    if (batch_count(z.shape()) < 2) {
        throw DataError("batch statistics need at least 2 pooled samples, got shape " +
                        shape_str(z.shape()));
    }
}

Var scale_by_running_var(Var y, const RunningStats& stats, double eps) {
    Var var = y.tape->leaf(stats.var);
    return div(y, sqrt_op(add_scalar(var, eps)));
}

}  // namespace

std::string norm_kind_name(NormKind kind) {
    for (const auto& [k, name] : kind_names()) {
        if (k == kind) return name;
    }
    throw ParamError("unknown norm kind");
}

NormKind parse_norm_kind(const std::string& name) {
    for (const auto& [k, n] : kind_names()) {
        if (n == name) return k;
    }
    std::string valid;
    for (const auto& [k, n] : kind_names()) {
        if (!valid.empty()) valid += ", ";
        valid += n;
    }
    throw ConfigError("unknown normalizer '" + name + "' (valid: " + valid + ")");
}

const std::vector<NormKind>& all_norm_kinds() {
    static const std::vector<NormKind> kinds = [] {
        std::vector<NormKind> v;
        for (const auto& [k, n] : kind_names()) v.push_back(k);
        return v;
    }();
    return kinds;
}

bool norm_has_affine(NormKind kind) {
    return kind != NormKind::none && kind != NormKind::weight;
}

bool norm_uses_batch_stats(NormKind kind) {
    return kind == NormKind::batch || kind == NormKind::batch_train ||
           kind == NormKind::bmlv || kind == NormKind::lmbv;
}

std::string norm_mode_name(NormMode mode) {
    switch (mode) {
        case NormMode::train: return "train";
        case NormMode::eval: return "eval";
        case NormMode::batch_train: return "batch_train";
    }
    throw ParamError("unknown norm mode");
}

NormMode parse_norm_mode(const std::string& name) {
    if (name == "train") return NormMode::train;
    if (name == "eval") return NormMode::eval;
    if (name == "batch_train") return NormMode::batch_train;
    throw ConfigError("unknown mode '" + name + "'");
}

std::vector<std::size_t> batch_axes(std::size_t rank) {
    if (rank == 2) return {0};
    if (rank == 4) return {0, 1, 2};
    throw ShapeError("statistic axes defined for rank 2 and 4, got rank " +
                     std::to_string(rank));
}

std::vector<std::size_t> feature_axes(std::size_t rank) {
    if (rank == 2) return {1};
    if (rank == 4) return {1, 2, 3};
    throw ShapeError("statistic axes defined for rank 2 and 4, got rank " +
                     std::to_string(rank));
}

Var center_mean(Var z, const std::vector<std::size_t>& axes) {
    return sub(z, reduce_mean(z, axes, true));
}

Var scale_by_std(Var y, const std::vector<std::size_t>& axes, double eps) {
    Var mu = reduce_mean(y, axes, true);
    Var var = reduce_mean(square(sub(y, mu)), axes, true);
    return div(y, sqrt_op(add_scalar(var, eps)));
}

Var moment_normalize(Var z, const std::vector<std::size_t>& mean_axes,
                     const std::vector<std::size_t>& std_axes, double eps) {
    return scale_by_std(center_mean(z, mean_axes), std_axes, eps);
}

RunningStats make_running_stats(std::size_t rank, std::size_t channels) {
    Shape s(rank, 1);
    s.back() = channels;
    RunningStats stats;
    stats.mean = Tensor::zeros(s);
    stats.var = Tensor::full(s, 1.0);
    return stats;
}

Var batch_norm(Var z, NormMode mode, RunningStats& stats, const NormOptions& opts) {
    check_feature_rank(z.shape());
    const auto axes = batch_axes(z.shape().size());
    if (mode == NormMode::eval) {
        Var y = sub(z, z.tape->leaf(stats.mean));
        return scale_by_running_var(y, stats, opts.eps);
    }
    check_batch_size(z.value());
    if (mode == NormMode::train) {
        Tensor mu, var;
        channel_moments(z.value(), false, mu, var);
        ema_update(stats.mean, mu, opts.momentum);
        ema_update(stats.var, var, opts.momentum);
        stats.seen = true;
    }
    return moment_normalize(z, axes, axes, opts.eps);
}

Var layer_norm(Var z, const NormOptions& opts) {
    check_feature_rank(z.shape());
    const auto axes = feature_axes(z.shape().size());
    return moment_normalize(z, axes, axes, opts.eps);
}

Var bmlv_norm(Var z, NormMode mode, RunningStats& stats, const NormOptions& opts) {
    check_feature_rank(z.shape());
    const std::size_t rank = z.shape().size();
    if (mode == NormMode::eval) {
        Var y = sub(z, z.tape->leaf(stats.mean));
        return scale_by_std(y, feature_axes(rank), opts.eps);
    }
    check_batch_size(z.value());
    if (mode == NormMode::train) {
        Tensor mu, var;
        channel_moments(z.value(), false, mu, var);
        ema_update(stats.mean, mu, opts.momentum);
        stats.seen = true;
    }
    return moment_normalize(z, batch_axes(rank), feature_axes(rank), opts.eps);
}

Var lmbv_norm(Var z, NormMode mode, RunningStats& stats, const NormOptions& opts) {
    check_feature_rank(z.shape());
    const std::size_t rank = z.shape().size();
    if (mode == NormMode::eval) {
        Var y = center_mean(z, feature_axes(rank));
        return scale_by_running_var(y, stats, opts.eps);
    }
    check_batch_size(z.value());
    if (mode == NormMode::train) {
        Tensor mu, var;
        channel_moments(z.value(), true, mu, var);
        ema_update(stats.var, var, opts.momentum);
        stats.seen = true;
    }
    return moment_normalize(z, feature_axes(rank), batch_axes(rank), opts.eps);
}

Var weight_norm(Var w) {
    double n2 = 0.0;
    for (double x : w.value().data()) n2 += x * x;
    if (n2 == 0.0) throw NumericError("weight_norm: zero weight tensor");
    if (!std::isfinite(n2)) throw NumericError("weight_norm: non-finite weight tensor");
    return div(w, sqrt_op(sum_all(square(w))));
}

Var rms_normalize(Var z, const NormOptions& opts) {
    check_feature_rank(z.shape());
    Var ms = reduce_mean(square(z), feature_axes(z.shape().size()), true);
    return div(z, sqrt_op(add_scalar(ms, opts.eps)));
}

Var reg_norm_penalty(Var zbar) {
    if (zbar.shape().empty()) {
        throw ShapeError("penalty needs a batched activation, got a scalar");
    }
    Var m = reduce_mean(zbar, {0}, false);
    return mul_scalar(sum_all(square(m)), 2.0);
}

}  // namespace normlab
