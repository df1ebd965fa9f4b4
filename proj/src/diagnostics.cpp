#include "normlab/diagnostics.hpp"

#include <cmath>
#include <sstream>

#include "normlab/autograd.hpp"
#include "normlab/errors.hpp"
#include "normlab/hashing.hpp"

namespace normlab {

namespace {

Flagged to_flagged(Correlation c) { return {c.value, c.ok}; }

// Activations (or their adjoints) per capture entry, flattened.
std::vector<std::vector<double>> capture_values(const std::vector<LayerCapture>& caps,
                                                Tape& tape, bool grads) {
    std::vector<std::vector<double>> out;
    out.reserve(caps.size());
    for (const LayerCapture& c : caps) {
        if (grads) {
            Tensor g = tape.grad(c.post);
            out.emplace_back(g.data().begin(), g.data().end());
        } else {
            const auto v = c.post.value().data();
            out.emplace_back(v.begin(), v.end());
        }
    }
    return out;
}

DepthTrace correlate(const std::vector<std::vector<double>>& a,
                     const std::vector<std::vector<double>>& b, std::string metric,
                     std::uint64_t fingerprint) {
    DepthTrace trace;
    trace.metric = std::move(metric);
    trace.fingerprint = fingerprint;
    trace.values.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        trace.values.push_back(to_flagged(pearson(a[i], b[i])));
    }
    return trace;
}

std::vector<double> classifier_param_grads(Model& model, const Tensor& x,
                                           const std::vector<std::size_t>& labels,
                                           NormMode mode) {
    Tape tape;
    ForwardResult fr = model.forward(tape, x, mode, false);
    tape.backward(softmax_cross_entropy(fr.logits, labels));
    const std::size_t last = model.depth() - 1;
    std::vector<double> flat;
    const auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].layer != last) continue;
        if (params[i].role != ParamRole::weight && params[i].role != ParamRole::bias) {
            continue;
        }
        Tensor g = tape.grad(fr.param_vars[i]);
        flat.insert(flat.end(), g.data().begin(), g.data().end());
    }
    return flat;
}

}  // namespace

std::uint64_t config_fingerprint(const ModelConfig& config) {
    std::ostringstream os;
    os << model_arch_name(config.arch) << '|' << config.depth << '|' << config.width
       << '|' << (config.skip ? 1 : 0) << '|' << activation_name(config.activation)
       << '|' << norm_kind_name(config.norm) << '|' << config.classes << '|'
       << shape_str(config.input) << '|' << config.norm_opts.eps << '|'
       << config.norm_opts.momentum << '|' << config.seed;
    return fnv1a_string(os.str());
}

Tensor perturb(const Tensor& x, const NoiseSpec& noise, Rng& rng) {
    if (noise.sigma <= 0.0) throw ParamError("noise sigma must be positive");
    if (x.rank() < 2) throw ShapeError("perturb wants a batched tensor");
    Tensor out = x.clone();
    auto& ov = out.vec();
    if (!noise.relative) {
        for (double& v : ov) v += rng.normal(0.0, noise.sigma);
        return out;
    }
    const std::size_t n = x.dim(0);
    const std::size_t features = x.numel() / n;
    std::vector<double> mean(features, 0.0), sd(features, 0.0);
    const auto xv = x.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < features; ++j) mean[j] += xv[i * features + j];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < features; ++j) {
            const double d = xv[i * features + j] - mean[j];
            sd[j] += d * d;
        }
    }
    for (double& s : sd) s = std::sqrt(s / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < features; ++j) {
            // draw unconditionally so the rng stream does not depend on sd
            const double eps = rng.normal(0.0, noise.sigma);
            ov[i * features + j] += eps * sd[j];
        }
    }
    return out;
}

DepthTrace activation_correlation(Model& model, const Tensor& x1, const Tensor& x2,
                                  NormMode mode) {
    Tape t1, t2;
    ForwardResult f1 = model.forward(t1, x1, mode, true);
    ForwardResult f2 = model.forward(t2, x2, mode, true);
    return correlate(capture_values(f1.captures, t1, false),
                     capture_values(f2.captures, t2, false), "info_prop_correlation",
                     config_fingerprint(model.config()));
}

DepthTrace activation_gradient_correlation(Model& model, const Tensor& x1,
                                           const Tensor& x2,
                                           const std::vector<std::size_t>& labels,
                                           NormMode mode) {
    Tape t1, t2;
    ForwardResult f1 = model.forward(t1, x1, mode, true);
    ForwardResult f2 = model.forward(t2, x2, mode, true);
    t1.backward(softmax_cross_entropy(f1.logits, labels));
    t2.backward(softmax_cross_entropy(f2.logits, labels));
    return correlate(capture_values(f1.captures, t1, true),
                     capture_values(f2.captures, t2, true), "gradient_correlation",
                     config_fingerprint(model.config()));
}

DepthTrace info_prop_correlation(Model& model, const Tensor& x, const NoiseSpec& noise,
                                 NormMode mode, Rng rng) {
    Tensor x1 = perturb(x, noise, rng);
    Tensor x2 = perturb(x, noise, rng);
    return activation_correlation(model, x1, x2, mode);
}

DepthTrace gradient_correlation_layers(Model& model, const Tensor& x,
                                       const std::vector<std::size_t>& labels,
                                       const NoiseSpec& noise, NormMode mode, Rng rng) {
    Tensor x1 = perturb(x, noise, rng);
    Tensor x2 = perturb(x, noise, rng);
    return activation_gradient_correlation(model, x1, x2, labels, mode);
}

ConfusionResult gradient_confusion(Model& model, const std::vector<Tensor>& batches,
                                   const std::vector<std::vector<std::size_t>>& labels,
                                   NormMode mode) {
    if (batches.size() < 2) throw ParamError("gradient confusion needs >= 2 minibatches");
    if (labels.size() != batches.size()) {
        throw ParamError("gradient confusion: one label set per minibatch");
    }
    std::vector<std::vector<double>> grads;
    grads.reserve(batches.size());
    for (std::size_t i = 0; i < batches.size(); ++i) {
        grads.push_back(classifier_param_grads(model, batches[i], labels[i], mode));
    }
    ConfusionResult result;
    double sum = 0.0;
    bool all_ok = true;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        for (std::size_t j = i + 1; j < grads.size(); ++j) {
            Correlation c = pearson(grads[i], grads[j]);
            result.pairwise.push_back(c.value);
            all_ok = all_ok && c.ok;
            if (c.ok) sum += c.value;
        }
    }
    if (all_ok) {
        result.mean = {sum / static_cast<double>(result.pairwise.size()), true};
    } else {
        result.mean = {std::nan(""), false};
    }
    return result;
}

GradNormProfile gradient_norm_profile(Model& model, const Tensor& x,
                                      const std::vector<std::size_t>& labels,
                                      NormMode mode) {
    Tape tape;
    ForwardResult fr = model.forward(tape, x, mode, false);
    tape.backward(softmax_cross_entropy(fr.logits, labels));

    std::vector<double> sq(model.depth(), 0.0);
    const auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor g = tape.grad(fr.param_vars[i]);
        double s = 0.0;
        for (double v : g.data()) s += v * v;
        sq[params[i].layer] += s;
    }

    GradNormProfile profile;
    profile.trace.metric = "gradient_norm";
    profile.trace.fingerprint = config_fingerprint(model.config());
    profile.trace.values.reserve(sq.size());
    for (double s : sq) profile.trace.values.push_back({std::sqrt(s), true});
    const double first = profile.trace.values.front().value;
    const double last = profile.trace.values.back().value;
    profile.ratio = last == 0.0 ? Flagged{std::nan(""), false} : Flagged{first / last, true};
    return profile;
}

}  // namespace normlab
