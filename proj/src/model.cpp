#include "normlab/model.hpp"

#include <cmath>

#include "normlab/errors.hpp"
#include "normlab/hashing.hpp"

namespace normlab {

namespace {

void validate(const ModelConfig& c) {
    if (c.depth < 2) throw ConfigError("depth must be at least 2");
    if (c.arch == ModelArch::wideresnet && (c.depth < 8 || (c.depth - 2) % 6 != 0)) {
        throw ConfigError("residual depth must be 6n+2 with n >= 1, got " +
                          std::to_string(c.depth));
    }
    if (c.width == 0) throw ConfigError("width must be positive");
    if (c.classes < 2) throw ConfigError("need at least 2 classes");
    if (c.input.empty() || shape_numel(c.input) == 0) {
        throw ConfigError("input shape must be non-empty");
    }
    if (c.arch == ModelArch::wideresnet && c.input.size() != 3) {
        throw ConfigError("residual nets take (H, W, C) inputs, got " +
                          shape_str(c.input));
    }
    if (c.norm_opts.eps < 0.0) throw ConfigError("eps must be non-negative");
    if (c.norm_opts.momentum < 0.0 || c.norm_opts.momentum >= 1.0) {
        throw ConfigError("momentum must lie in [0, 1)");
    }
}

bool kind_drops_bias(NormKind kind) {
    return kind == NormKind::regnorm || kind == NormKind::preregnorm;
}

bool kind_centers_input(NormKind kind) {
    return kind == NormKind::prelayernorm || kind == NormKind::preregnorm;
}

}  // namespace

std::string model_arch_name(ModelArch arch) {
    return arch == ModelArch::mlp ? "mlp" : "wideresnet";
}

ModelArch parse_model_arch(const std::string& name) {
    if (name == "mlp") return ModelArch::mlp;
    if (name == "wideresnet") return ModelArch::wideresnet;
    throw ConfigError("unknown architecture '" + name + "'");
}

std::string activation_name(Activation act) {
    return act == Activation::relu ? "relu" : "tanh";
}

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + name + "'");
}

std::size_t Model::add_param(std::string name, Tensor value, std::size_t layer,
                             ParamRole role) {
    params_.push_back(Param{std::move(name), std::move(value), layer, role});
    return params_.size() - 1;
}

std::size_t Model::add_weight(std::string name, Shape shape, std::size_t layer,
                              std::size_t fan_in, Rng& rng) {
    const double gain = config_.activation == Activation::relu ? 2.0 : 1.0;
    const double std = std::sqrt(gain / static_cast<double>(fan_in));
    return add_param(std::move(name), gaussian(shape, 0.0, std, rng), layer,
                     ParamRole::weight);
}

Model::SiteDesc Model::add_site(const std::string& name, std::size_t channels,
                                std::size_t rank, std::size_t layer) {
    SiteDesc sd;
    if (norm_has_affine(config_.norm)) {
        sd.gamma = add_param(name + ".gamma", Tensor::full({channels}, 1.0), layer,
                             ParamRole::gamma);
        sd.beta = add_param(name + ".beta", Tensor::zeros({channels}), layer,
                            ParamRole::beta);
    }
    if (config_.norm == NormKind::batch || config_.norm == NormKind::bmlv ||
        config_.norm == NormKind::lmbv) {
        stats_.push_back(make_running_stats(rank, channels));
        sd.stats = stats_.size() - 1;
    }
    return sd;
}

Model::Model(const ModelConfig& config) : config_(config) {
    validate(config_);
    if (config_.arch == ModelArch::mlp) {
        build_mlp();
    } else {
        build_wideresnet();
    }
}

void Model::build_mlp() {
    Rng rng(config_.seed);
    const NormKind kind = config_.norm;
    std::size_t din = shape_numel(config_.input);
    for (std::size_t l = 0; l + 1 < config_.depth; ++l) {
        const std::string name = "layer" + std::to_string(l);
        AffineDesc a;
        a.w = add_weight(name + ".weight", {din, config_.width}, l, din, rng);
        if (!kind_drops_bias(kind)) {
            a.b = add_param(name + ".bias", Tensor::zeros({config_.width}), l,
                            ParamRole::bias);
        }
        a.weight_normed = kind == NormKind::weight;
        a.center_input = kind_centers_input(kind);
        hidden_.push_back(a);
        hidden_sites_.push_back(add_site(name, config_.width, 2, l));
        din = config_.width;
    }
    const std::size_t cls = config_.depth - 1;
    classifier_.w = add_weight("classifier.weight", {din, config_.classes}, cls, din, rng);
    classifier_.b =
        add_param("classifier.bias", Tensor::zeros({config_.classes}), cls, ParamRole::bias);
}

void Model::build_wideresnet() {
    Rng rng(config_.seed);
    const NormKind kind = config_.norm;
    const std::size_t n = (config_.depth - 2) / 6;
    const std::size_t widths[3] = {16 * config_.width, 32 * config_.width,
                                   64 * config_.width};

    stem_.w = add_weight("stem.weight", {3, 3, config_.input[2], 16}, 0,
                         9 * config_.input[2], rng);
    stem_.b = add_param("stem.bias", Tensor::zeros({16}), 0, ParamRole::bias);
    stem_.weight_normed = kind == NormKind::weight;

    std::size_t cin = 16;
    std::size_t conv_layer = 1;  // affine index of the next block conv
    for (std::size_t stage = 0; stage < 3; ++stage) {
        const std::size_t cout = widths[stage];
        for (std::size_t bi = 0; bi < n; ++bi) {
            const std::string name =
                "stage" + std::to_string(stage) + ".block" + std::to_string(bi);
            const std::size_t stride = (stage > 0 && bi == 0) ? 2 : 1;
            BlockDesc blk;

            blk.site_a = add_site(name + ".norm_a", cin, 4, conv_layer);
            blk.conv1.w = add_weight(name + ".conv1.weight", {3, 3, cin, cout},
                                     conv_layer, 9 * cin, rng);
            if (!kind_drops_bias(kind)) {
                blk.conv1.b = add_param(name + ".conv1.bias", Tensor::zeros({cout}),
                                        conv_layer, ParamRole::bias);
            }
            blk.conv1.stride = stride;
            blk.conv1.weight_normed = kind == NormKind::weight;
            blk.conv1.center_input = kind_centers_input(kind);
            ++conv_layer;

            blk.site_b = add_site(name + ".norm_b", cout, 4, conv_layer);
            blk.conv2.w = add_weight(name + ".conv2.weight", {3, 3, cout, cout},
                                     conv_layer, 9 * cout, rng);
            if (!kind_drops_bias(kind)) {
                blk.conv2.b = add_param(name + ".conv2.bias", Tensor::zeros({cout}),
                                        conv_layer, ParamRole::bias);
            }
            blk.conv2.weight_normed = kind == NormKind::weight;
            blk.conv2.center_input = kind_centers_input(kind);

            if (config_.skip && (stride != 1 || cin != cout)) {
                blk.has_projection = true;
                blk.projection.w = add_weight(name + ".shortcut.weight",
                                              {1, 1, cin, cout}, conv_layer, cin, rng);
                blk.projection.b = add_param(name + ".shortcut.bias",
                                             Tensor::zeros({cout}), conv_layer,
                                             ParamRole::bias);
                blk.projection.stride = stride;
            }
            ++conv_layer;

            blocks_.push_back(blk);
            cin = cout;
        }
    }

    const std::size_t cls = config_.depth - 1;
    final_site_ = add_site("final_norm", cin, 4, cls);
    classifier_.w = add_weight("classifier.weight", {cin, config_.classes}, cls, cin, rng);
    classifier_.b =
        add_param("classifier.bias", Tensor::zeros({config_.classes}), cls, ParamRole::bias);
}

ForwardResult Model::forward(Tape& tape, const Tensor& x, NormMode mode, bool capture) {
    ForwardResult fr;
    const NormKind kind = config_.norm;
    const NormOptions& opts = config_.norm_opts;

    fr.param_vars.reserve(params_.size());
    for (const Param& p : params_) fr.param_vars.push_back(tape.leaf(p.value));
    const auto& pv = fr.param_vars;

    if (mode == NormMode::eval &&
        (kind == NormKind::batch || kind == NormKind::bmlv || kind == NormKind::lmbv)) {
        for (const RunningStats& s : stats_) {
            if (!s.seen) {
                fr.warnings.push_back(
                    "eval-mode forward before any running-statistics update");
                break;
            }
        }
    }

    // In-graph normalization for one site; returns {pre-affine, post-activation}.
    auto apply_site = [&](Var z, const SiteDesc& sd) -> std::pair<Var, Var> {
        Var pre = z;
        switch (kind) {
            case NormKind::none:
            case NormKind::weight:
                break;
            case NormKind::batch:
                pre = batch_norm(z, mode, stats_[sd.stats], opts);
                break;
            case NormKind::batch_train: {
                RunningStats unused;
                pre = batch_norm(z, NormMode::batch_train, unused, opts);
                break;
            }
            case NormKind::layer:
                pre = layer_norm(z, opts);
                break;
            case NormKind::bmlv:
                pre = bmlv_norm(z, mode, stats_[sd.stats], opts);
                break;
            case NormKind::lmbv:
                pre = lmbv_norm(z, mode, stats_[sd.stats], opts);
                break;
            case NormKind::prelayernorm:
                pre = scale_by_std(z, feature_axes(z.shape().size()), opts.eps);
                break;
            case NormKind::regnorm:
            case NormKind::preregnorm:
                pre = rms_normalize(z, opts);
                fr.penalties.push_back(reg_norm_penalty(pre));
                break;
        }
        Var y = pre;
        if (norm_has_affine(kind)) y = add(mul(pre, pv[sd.gamma]), pv[sd.beta]);
        Var post = config_.activation == Activation::relu ? relu(y) : tanh_op(y);
        return {pre, post};
    };

    auto run_affine = [&](Var in, const AffineDesc& a, bool is_conv) -> Var {
        Var input = a.center_input
                        ? center_mean(in, feature_axes(in.shape().size()))
                        : in;
        Var w = a.weight_normed ? weight_norm(pv[a.w]) : pv[a.w];
        Var z = is_conv ? conv2d(input, w, a.stride, Padding::same)
                        : matmul(input, w);
        if (a.b != npos) z = add(z, pv[a.b]);
        return z;
    };

    if (config_.arch == ModelArch::mlp) {
        Tensor xin = x;
        if (xin.rank() != 2) {
            if (xin.rank() < 1) throw ShapeError("mlp input needs a batch axis");
            xin = xin.reshaped({xin.dim(0), xin.numel() / xin.dim(0)});
        }
        if (xin.dim(1) != shape_numel(config_.input)) {
            throw ShapeError("mlp input has " + std::to_string(xin.dim(1)) +
                             " features, model wants " +
                             std::to_string(shape_numel(config_.input)));
        }
        Var h = tape.leaf(xin);
        for (std::size_t l = 0; l < hidden_.size(); ++l) {
            Var z = run_affine(h, hidden_[l], false);
            auto [pre, post] = apply_site(z, hidden_sites_[l]);
            if (capture) fr.captures.push_back({l, pre, post});
            h = post;
        }
        fr.logits = add(matmul(h, pv[classifier_.w]), pv[classifier_.b]);
    } else {
        if (x.rank() != 4 || x.dim(1) != config_.input[0] || x.dim(2) != config_.input[1] ||
            x.dim(3) != config_.input[2]) {
            throw ShapeError("residual net wants (N, " + shape_str(config_.input) +
                             ") input, got " + shape_str(x.shape()));
        }
        Var h = tape.leaf(x);
        h = run_affine(h, stem_, true);
        std::size_t site = 0;
        for (const BlockDesc& blk : blocks_) {
            Var u = h;
            auto [pre_a, act_a] = apply_site(u, blk.site_a);
            if (capture) fr.captures.push_back({site, pre_a, act_a});
            ++site;
            Var v = run_affine(act_a, blk.conv1, true);
            auto [pre_b, act_b] = apply_site(v, blk.site_b);
            if (capture) fr.captures.push_back({site, pre_b, act_b});
            ++site;
            Var branch = run_affine(act_b, blk.conv2, true);
            if (config_.skip) {
                Var sc = blk.has_projection ? run_affine(u, blk.projection, true) : u;
                branch = add(branch, sc);
            }
            h = branch;
        }
        auto [pre_f, act_f] = apply_site(h, final_site_);
        if (capture) fr.captures.push_back({site, pre_f, act_f});
        Var pooled = reduce_mean(act_f, {1, 2}, false);
        fr.logits = add(matmul(pooled, pv[classifier_.w]), pv[classifier_.b]);
    }

    if (capture) {
        fr.captures.push_back({config_.depth - 1, fr.logits, fr.logits});
    }
    return fr;
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const Param& p : params_) n += p.value.numel();
    return n;
}

std::vector<double> Model::pack() const {
    std::vector<double> flat;
    flat.reserve(param_count());
    for (const Param& p : params_) {
        const auto v = p.value.data();
        flat.insert(flat.end(), v.begin(), v.end());
    }
    return flat;
}

void Model::unpack(const std::vector<double>& flat) {
    if (flat.size() != param_count()) {
        throw ParamError("unpack: " + std::to_string(flat.size()) + " values for " +
                         std::to_string(param_count()) + " parameters");
    }
    std::size_t off = 0;
    for (Param& p : params_) {
        std::vector<double> chunk(flat.begin() + static_cast<std::ptrdiff_t>(off),
                                  flat.begin() + static_cast<std::ptrdiff_t>(off) +
                                      static_cast<std::ptrdiff_t>(p.value.numel()));
        off += p.value.numel();
        p.value = Tensor(p.value.shape(), std::move(chunk));
    }
}

std::uint64_t Model::state_hash() const {
    std::uint64_t h = kFnvOffset;
    for (const Param& p : params_) {
        h = fnv1a_string(p.name, h);
        h = fnv1a_doubles(p.value.data(), h);
    }
    for (const RunningStats& s : stats_) {
        h = fnv1a_doubles(s.mean.data(), h);
        h = fnv1a_doubles(s.var.data(), h);
        const unsigned char seen = s.seen ? 1 : 0;
        h = fnv1a_bytes(&seen, 1, h);
    }
    return h;
}

Var total_penalty(Tape& tape, const ForwardResult& fr) {
    if (fr.penalties.empty()) return tape.leaf(Tensor::scalar(0.0));
    Var total = fr.penalties[0];
    for (std::size_t i = 1; i < fr.penalties.size(); ++i) {
        total = add(total, fr.penalties[i]);
    }
    return total;
}

}  // namespace normlab
