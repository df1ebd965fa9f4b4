#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "normlab/errors.hpp"
#include "normlab/model.hpp"

using namespace normlab;
using namespace normlab::testing;

namespace {

ModelConfig mlp_config(NormKind norm, std::size_t depth = 3, std::size_t width = 4,
                       std::size_t input = 6, std::size_t classes = 3,
                       std::uint64_t seed = 1) {
    ModelConfig mc;
    mc.arch = ModelArch::mlp;
    mc.depth = depth;
    mc.width = width;
    mc.norm = norm;
    mc.classes = classes;
    mc.input = {input};
    mc.seed = seed;
    return mc;
}

ModelConfig wrn_config(NormKind norm, bool skip, std::size_t depth = 8) {
    ModelConfig mc;
    mc.arch = ModelArch::wideresnet;
    mc.depth = depth;
    mc.width = 1;
    mc.skip = skip;
    mc.norm = norm;
    mc.classes = 10;
    mc.input = {8, 8, 3};
    mc.seed = 2;
    return mc;
}

const Param* find_param(const Model& m, const std::string& name) {
    for (const Param& p : m.params()) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

}  // namespace

TEST_CASE("mlp parameters: names, shapes, count") {
    Model m(mlp_config(NormKind::layer));
    REQUIRE(find_param(m, "layer0.weight") != nullptr);
    CHECK(find_param(m, "layer0.weight")->value.shape() == Shape{6, 4});
    CHECK(find_param(m, "layer0.bias")->value.shape() == Shape{4});
    CHECK(find_param(m, "layer0.gamma")->value.shape() == Shape{4});
    CHECK(find_param(m, "layer1.gamma") != nullptr);
    CHECK(find_param(m, "classifier.weight")->value.shape() == Shape{4, 3});
    CHECK(find_param(m, "classifier.bias")->value.shape() == Shape{3});
    CHECK(find_param(m, "classifier.gamma") == nullptr);  // classifier unnormalized
    // 6*4+4+4+4 + 4*4+4+4+4 + 4*3+3 = 79
    CHECK(m.param_count() == 79);
}

TEST_CASE("norm kinds without affine parameters carry no gamma/beta") {
    Model none(mlp_config(NormKind::none));
    CHECK(find_param(none, "layer0.gamma") == nullptr);
    Model weight(mlp_config(NormKind::weight));
    CHECK(find_param(weight, "layer0.gamma") == nullptr);
}

TEST_CASE("initialization is deterministic and shared across norm kinds") {
    Model a(mlp_config(NormKind::none));
    Model b(mlp_config(NormKind::batch));
    Model c(mlp_config(NormKind::none));
    CHECK(find_param(a, "layer0.weight")
              ->value.bitwise_equal(find_param(b, "layer0.weight")->value));
    CHECK(find_param(a, "classifier.weight")
              ->value.bitwise_equal(find_param(c, "classifier.weight")->value));
    Model d(mlp_config(NormKind::none, 3, 4, 6, 3, /*seed=*/99));
    CHECK_FALSE(find_param(a, "layer0.weight")
                    ->value.bitwise_equal(find_param(d, "layer0.weight")->value));
}

TEST_CASE("initialization scales follow the activation") {
    // He for relu: std = sqrt(2/fan_in); Xavier-style sqrt(1/fan_in) for tanh
    ModelConfig relu_cfg = mlp_config(NormKind::none, 3, 256, 256);
    ModelConfig tanh_cfg = relu_cfg;
    tanh_cfg.activation = Activation::tanh;
    Model r(relu_cfg), t(tanh_cfg);
    const Tensor& rw = find_param(r, "layer0.weight")->value;
    const Tensor& tw = find_param(t, "layer0.weight")->value;
    double rs = 0.0, ts = 0.0;
    for (double v : rw.data()) rs += v * v;
    for (double v : tw.data()) ts += v * v;
    const double r_std = std::sqrt(rs / double(rw.numel()));
    const double t_std = std::sqrt(ts / double(tw.numel()));
    CHECK(r_std == doctest::Approx(std::sqrt(2.0 / 256.0)).epsilon(0.05));
    CHECK(t_std == doctest::Approx(std::sqrt(1.0 / 256.0)).epsilon(0.05));
}

TEST_CASE("rms-penalty kinds drop hidden biases but keep the classifier's") {
    Model m(mlp_config(NormKind::regnorm));
    CHECK(find_param(m, "layer0.bias") == nullptr);
    CHECK(find_param(m, "layer0.gamma") != nullptr);
    CHECK(find_param(m, "classifier.bias") != nullptr);
}

TEST_CASE("forward shapes and captures") {
    Model m(mlp_config(NormKind::layer, 4));
    Rng rng(5);
    const Tensor x = random_tensor({7, 6}, rng);
    Tape tape;
    const ForwardResult fr = m.forward(tape, x, NormMode::batch_train, true);
    CHECK(fr.logits.shape() == Shape{7, 3});
    CHECK(fr.captures.size() == 4);  // depth entries, logits last
    CHECK(fr.captures.back().pre.id == fr.logits.id);
    CHECK(fr.param_vars.size() == m.params().size());
}

TEST_CASE("capture entries expose normalized pre-activations") {
    Model m(mlp_config(NormKind::layer, 3));
    Rng rng(6);
    const Tensor x = random_tensor({5, 6}, rng);
    Tape tape;
    const ForwardResult fr = m.forward(tape, x, NormMode::batch_train, true);
    const Tensor& pre = fr.captures[0].pre.value();
    for (std::size_t i = 0; i < pre.dim(0); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < pre.dim(1); ++j) mean += pre.at2(i, j);
        CHECK(std::abs(mean / double(pre.dim(1))) < 1e-9);
    }
}

TEST_CASE("eval before any running-statistics update warns once") {
    Model m(mlp_config(NormKind::batch));
    Rng rng(7);
    const Tensor x = random_tensor({4, 6}, rng);
    Tape tape;
    const ForwardResult fr = m.forward(tape, x, NormMode::eval, false);
    REQUIRE(fr.warnings.size() == 1);
    CHECK(fr.warnings[0].find("running") != std::string::npos);

    // after one train forward the warning disappears
    Tape t2;
    m.forward(t2, x, NormMode::train, false);
    Tape t3;
    CHECK(m.forward(t3, x, NormMode::eval, false).warnings.empty());
}

TEST_CASE("batch_train forwards leave the model state untouched") {
    Model m(mlp_config(NormKind::batch));
    Rng rng(8);
    const Tensor x = random_tensor({6, 6}, rng);
    const std::uint64_t before = m.state_hash();
    Tape tape;
    m.forward(tape, x, NormMode::batch_train, true);
    CHECK(m.state_hash() == before);
    Tape t2;
    m.forward(t2, x, NormMode::train, false);
    CHECK(m.state_hash() != before);  // train mode must update statistics
}

TEST_CASE("regnorm forward produces one penalty per normalized site") {
    Model m(mlp_config(NormKind::regnorm, 4));
    Rng rng(9);
    const Tensor x = random_tensor({5, 6}, rng);
    Tape tape;
    const ForwardResult fr = m.forward(tape, x, NormMode::batch_train, false);
    CHECK(fr.penalties.size() == 3);  // depth - 1 sites
    const Var total = total_penalty(tape, fr);
    CHECK(total.value()[0] >= 0.0);

    Model plain(mlp_config(NormKind::none, 4));
    Tape t2;
    const ForwardResult fr2 = plain.forward(t2, x, NormMode::batch_train, false);
    CHECK(fr2.penalties.empty());
    CHECK(total_penalty(t2, fr2).value()[0] == 0.0);
}

TEST_CASE("prelayernorm keeps logits invariant to a constant input shift") {
    Model m(mlp_config(NormKind::prelayernorm, 3));
    // rows sum to zero, so both row means (0 and 16) are exact and the
    // centered inputs are bitwise identical
    Tensor x(Shape{4, 6}, {-3, -2, -1, 1, 2, 3,  //
                           3, -1, -2, 2, 1, -3,  //
                           1, 2, -3, 3, -1, -2,  //
                           -2, 3, 1, -1, -3, 2});
    Tensor shifted = x.clone();
    for (auto& v : shifted.vec()) v += 16.0;
    Tape ta, tb;
    const Tensor la = m.forward(ta, x, NormMode::batch_train, false).logits.value();
    const Tensor lb = m.forward(tb, shifted, NormMode::batch_train, false).logits.value();
    CHECK(la.bitwise_equal(lb));
}

TEST_CASE("pack/unpack round-trips and state_hash tracks parameter bytes") {
    Model m(mlp_config(NormKind::layer));
    const std::vector<double> theta = m.pack();
    CHECK(theta.size() == m.param_count());
    const std::uint64_t h0 = m.state_hash();

    std::vector<double> other = theta;
    other[0] += 1.0;
    m.unpack(other);
    CHECK(m.state_hash() != h0);
    m.unpack(theta);
    CHECK(m.state_hash() == h0);

    other.pop_back();
    CHECK_THROWS_AS(m.unpack(other), ParamError);
}

TEST_CASE("full-model gradients pass central differences") {
    for (NormKind kind : {NormKind::none, NormKind::layer, NormKind::batch_train,
                          NormKind::regnorm, NormKind::prelayernorm}) {
        CAPTURE(norm_kind_name(kind));
        ModelConfig mc = mlp_config(kind, 2, 4, 5, 3);
        mc.activation = Activation::tanh;  // smooth everywhere, kind to finite differences
        Model m(mc);
        Rng rng(11);
        const Tensor x = random_tensor({6, 5}, rng);
        const std::vector<std::size_t> labels = {0, 1, 2, 0, 1, 2};

        const std::vector<double> theta = m.pack();
        Tape tape;
        ForwardResult fr = m.forward(tape, x, NormMode::batch_train, false);
        Var loss = softmax_cross_entropy(fr.logits, labels);
        if (!fr.penalties.empty()) {
            loss = add(loss, mul_scalar(total_penalty(tape, fr), 0.5));
        }
        tape.backward(loss);
        std::vector<double> analytic;
        for (std::size_t i = 0; i < m.params().size(); ++i) {
            for (double g : tape.grad(fr.param_vars[i]).data()) analytic.push_back(g);
        }

        const auto loss_at = [&](const std::vector<double>& t) {
            m.unpack(t);
            Tape t2;
            ForwardResult f2 = m.forward(t2, x, NormMode::batch_train, false);
            Var l2 = softmax_cross_entropy(f2.logits, labels);
            if (!f2.penalties.empty()) {
                l2 = add(l2, mul_scalar(total_penalty(t2, f2), 0.5));
            }
            return l2.value()[0];
        };

        double max_rel = 0.0;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double h = 1e-5 * (1.0 + std::abs(theta[j]));
            std::vector<double> plus = theta, minus = theta;
            plus[j] += h;
            minus[j] -= h;
            const double numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
            if (std::abs(numeric) < 1e-8 && std::abs(analytic[j]) < 1e-8) continue;
            max_rel = std::max(max_rel, std::abs(numeric - analytic[j]) /
                                            std::max({std::abs(numeric),
                                                      std::abs(analytic[j]), 1e-12}));
        }
        m.unpack(theta);
        CHECK(max_rel < 1e-5);
    }
}

TEST_CASE("residual architecture: shapes, projections, penalties") {
    Rng rng(12);
    const Tensor x = random_tensor({3, 8, 8, 3}, rng);

    SUBCASE("plain stack") {
        Model m(wrn_config(NormKind::batch, false));
        Tape tape;
        const ForwardResult fr = m.forward(tape, x, NormMode::batch_train, true);
        CHECK(fr.logits.shape() == Shape{3, 10});
        CHECK(fr.captures.size() == 8);
    }

    SUBCASE("skip connections add projections on shape changes") {
        Model with(wrn_config(NormKind::batch, true));
        Model without(wrn_config(NormKind::batch, false));
        CHECK(with.param_count() > without.param_count());
        bool has_projection = false;
        for (const Param& p : with.params()) {
            if (p.name.find("shortcut") != std::string::npos) has_projection = true;
        }
        CHECK(has_projection);
        Tape tape;
        CHECK(with.forward(tape, x, NormMode::batch_train, false)
                  .logits.value()
                  .all_finite());
    }

    SUBCASE("weight-normalized variant runs") {
        Model m(wrn_config(NormKind::weight, true));
        Tape tape;
        CHECK(m.forward(tape, x, NormMode::batch_train, false).logits.value().all_finite());
    }
}

TEST_CASE("config validation rejects malformed models") {
    CHECK_THROWS_AS(Model(mlp_config(NormKind::none, /*depth=*/1)), ConfigError);
    CHECK_THROWS_AS(Model(wrn_config(NormKind::none, false, /*depth=*/7)), ConfigError);

    ModelConfig no_input = mlp_config(NormKind::none);
    no_input.input.clear();
    CHECK_THROWS_AS(Model{no_input}, ConfigError);

    ModelConfig one_class = mlp_config(NormKind::none);
    one_class.classes = 1;
    CHECK_THROWS_AS(Model{one_class}, ConfigError);

    ModelConfig bad_momentum = mlp_config(NormKind::batch);
    bad_momentum.norm_opts.momentum = 1.0;
    CHECK_THROWS_AS(Model{bad_momentum}, ConfigError);
}

TEST_CASE("mlp flattens image-shaped inputs") {
    ModelConfig mc = mlp_config(NormKind::none);
    mc.input = {2, 3, 1};
    Model m(mc);
    Rng rng(13);
    const Tensor x = random_tensor({4, 2, 3, 1}, rng);
    Tape tape;
    CHECK(m.forward(tape, x, NormMode::batch_train, false).logits.shape() == Shape{4, 3});
}
