#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "normlab/autograd.hpp"
#include "normlab/normalizers.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

enum class ModelArch { mlp, wideresnet };
enum class Activation { relu, tanh };

std::string model_arch_name(ModelArch arch);
ModelArch parse_model_arch(const std::string& name);
std::string activation_name(Activation act);
Activation parse_activation(const std::string& name);

struct ModelConfig {
    ModelArch arch = ModelArch::mlp;
    std::size_t depth = 4;   // affine layers, classifier included
    std::size_t width = 64;  // hidden width (mlp) or width multiplier (wideresnet)
    bool skip = false;       // shortcut connections (wideresnet only)
    Activation activation = Activation::relu;
    NormKind norm = NormKind::none;
    std::size_t classes = 10;
    Shape input;             // (D) for mlp, (H, W, C) for wideresnet
    NormOptions norm_opts;
    std::uint64_t seed = 0;
};

enum class ParamRole { weight, bias, gamma, beta };

struct Param {
    std::string name;
    Tensor value;
    std::size_t layer;  // index of the affine layer this parameter feeds
    ParamRole role;
};

// One record per normalization site plus a final record for the logits.
// `pre` is the normalized pre-activation before gamma/beta (the raw affine
// output for kinds with no statistic), `post` the activation output. The
// logits record has pre == post == logits.
struct LayerCapture {
    std::size_t layer;
    Var pre;
    Var post;
};

struct ForwardResult {
    Var logits;
    std::vector<Var> param_vars;         // tape nodes, one per Model param
    std::vector<LayerCapture> captures;  // depth entries when requested
    std::vector<Var> penalties;          // one per rms-normalized site
    std::vector<std::string> warnings;
};

// A feed-forward classifier with a normalization scheme baked into every
// hidden layer. Depth counts affine layers; the classifier layer is never
// normalized. The residual architecture requires depth = 6n + 2 and follows
// the pre-activation arrangement (normalize -> activate -> convolve), with
// one extra normalization site after the last block.
class Model {
  public:
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

    explicit Model(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    std::size_t depth() const { return config_.depth; }

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    std::vector<RunningStats>& running_stats() { return stats_; }

    ForwardResult forward(Tape& tape, const Tensor& x, NormMode mode,
                          bool capture = false);

    std::size_t param_count() const;  // total scalar parameters
    std::vector<double> pack() const;
    void unpack(const std::vector<double>& flat);

    std::uint64_t state_hash() const;  // parameters + running statistics

  private:
    struct SiteDesc {
        std::size_t gamma = npos;
        std::size_t beta = npos;
        std::size_t stats = npos;
    };
    struct AffineDesc {
        std::size_t w = npos;
        std::size_t b = npos;        // npos when the layer has no bias
        std::size_t stride = 1;
        bool weight_normed = false;
        bool center_input = false;   // subtract per-sample mean before the affine
    };
    struct BlockDesc {
        SiteDesc site_a;
        AffineDesc conv1;
        SiteDesc site_b;
        AffineDesc conv2;
        bool has_projection = false;
        AffineDesc projection;
    };

    void build_mlp();
    void build_wideresnet();
    std::size_t add_param(std::string name, Tensor value, std::size_t layer,
                          ParamRole role);
    std::size_t add_weight(std::string name, Shape shape, std::size_t layer,
                           std::size_t fan_in, Rng& rng);
    SiteDesc add_site(const std::string& name, std::size_t channels, std::size_t rank,
                      std::size_t layer);

    ModelConfig config_;
    std::vector<Param> params_;
    std::vector<RunningStats> stats_;

    // mlp
    std::vector<AffineDesc> hidden_;
    std::vector<SiteDesc> hidden_sites_;

    // wideresnet
    AffineDesc stem_;
    std::vector<BlockDesc> blocks_;
    SiteDesc final_site_;

    AffineDesc classifier_;
};

// Sum of the forward's rms penalties; a zero scalar when there are none.
Var total_penalty(Tape& tape, const ForwardResult& fr);

}  // namespace normlab
