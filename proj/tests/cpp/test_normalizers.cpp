#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "normlab/errors.hpp"
#include "normlab/normalizers.hpp"

using namespace normlab;
using namespace normlab::testing;

namespace {

// Plain-loop batch/feature moments for oracles.
double column_mean(const Tensor& t, std::size_t j) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.dim(0); ++i) s += t.at2(i, j);
    return s / double(t.dim(0));
}

double column_var(const Tensor& t, std::size_t j) {
    const double m = column_mean(t, j);
    double s = 0.0;
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        const double d = t.at2(i, j) - m;
        s += d * d;
    }
    return s / double(t.dim(0));
}

double row_mean(const Tensor& t, std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < t.dim(1); ++j) s += t.at2(i, j);
    return s / double(t.dim(1));
}

double row_var(const Tensor& t, std::size_t i) {
    const double m = row_mean(t, i);
    double s = 0.0;
    for (std::size_t j = 0; j < t.dim(1); ++j) {
        const double d = t.at2(i, j) - m;
        s += d * d;
    }
    return s / double(t.dim(1));
}

constexpr double kTenEps = 10.0 * std::numeric_limits<double>::epsilon();

}  // namespace

TEST_CASE("kind names round-trip and parsing rejects typos") {
    for (NormKind k : all_norm_kinds()) {
        CHECK(parse_norm_kind(norm_kind_name(k)) == k);
    }
    CHECK_THROWS_AS(parse_norm_kind("batchnorm2"), ConfigError);
    CHECK_THROWS_AS(parse_norm_mode("training"), ConfigError);
}

TEST_CASE("batch normalization: exact batch moments in train mode") {
    Rng rng(21);
    const Tensor z = random_tensor({16, 5}, rng, 3.0);
    RunningStats stats = make_running_stats(2, 5);
    Tape tape;
    const Var out = batch_norm(tape.leaf(z), NormMode::train, stats, {0.0, 0.9});
    const Tensor& y = out.value();
    for (std::size_t j = 0; j < 5; ++j) {
        CHECK(std::abs(column_mean(y, j)) < 1e-10);
        CHECK(std::abs(column_var(y, j) - 1.0) < 100 * kTenEps);
    }
    CHECK(stats.seen);
}

TEST_CASE("batch normalization: rank-4 pools over batch and space") {
    Rng rng(22);
    const Tensor z = random_tensor({4, 3, 3, 2}, rng, 2.0);
    RunningStats stats = make_running_stats(4, 2);
    Tape tape;
    const Var out = batch_norm(tape.leaf(z), NormMode::train, stats, {0.0, 0.9});
    const Tensor& y = out.value();
    for (std::size_t c = 0; c < 2; ++c) {
        double sum = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t h = 0; h < 3; ++h)
                for (std::size_t w = 0; w < 3; ++w) {
                    const double v = y.at4(b, h, w, c);
                    sum += v;
                    sq += v * v;
                    ++n;
                }
        CHECK(std::abs(sum / double(n)) < 1e-10);
        CHECK(std::abs(sq / double(n) - 1.0) < 1e-12);
    }
}

TEST_CASE("batch normalization: EMA update and eval formula") {
    Rng rng(23);
    const Tensor z = random_tensor({8, 3}, rng);
    RunningStats stats = make_running_stats(2, 3);
    const NormOptions opts{1e-5, 0.9};
    {
        Tape tape;
        batch_norm(tape.leaf(z), NormMode::train, stats, opts);
    }
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(stats.mean[j] ==
              doctest::Approx(0.1 * column_mean(z, j)).epsilon(1e-12));
        CHECK(stats.var[j] ==
              doctest::Approx(0.9 * 1.0 + 0.1 * column_var(z, j)).epsilon(1e-12));
    }

    Tape tape;
    const Var out = batch_norm(tape.leaf(z), NormMode::eval, stats, opts);
    for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            const double expected =
                (z.at2(i, j) - stats.mean[j]) / std::sqrt(stats.var[j] + opts.eps);
            CHECK(out.value().at2(i, j) == doctest::Approx(expected).epsilon(1e-14));
        }
    }
}

TEST_CASE("batch-dependent kinds reject single-sample batches") {
    RunningStats stats = make_running_stats(2, 3);
    const Tensor z(Shape{1, 3}, {1, 2, 3});
    Tape tape;
    CHECK_THROWS_AS(batch_norm(tape.leaf(z), NormMode::train, stats, {}), DataError);
    CHECK_THROWS_AS(batch_norm(tape.leaf(z), NormMode::batch_train, stats, {}), DataError);
    // eval with running statistics handles any batch size
    CHECK_NOTHROW(batch_norm(tape.leaf(z), NormMode::eval, stats, {}));
}

TEST_CASE("batch_train mode never touches the running statistics") {
    Rng rng(24);
    const Tensor z = random_tensor({8, 3}, rng);
    RunningStats stats = make_running_stats(2, 3);
    Tape tape;
    batch_norm(tape.leaf(z), NormMode::batch_train, stats, {});
    CHECK_FALSE(stats.seen);
    CHECK(stats.mean.bitwise_equal(make_running_stats(2, 3).mean));
    CHECK(stats.var.bitwise_equal(make_running_stats(2, 3).var));
}

TEST_CASE("layer normalization: per-sample moments, any mode") {
    Rng rng(25);
    const Tensor z = random_tensor({6, 9}, rng, 4.0);
    Tape tape;
    const Var out = layer_norm(tape.leaf(z), {0.0, 0.9});
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(std::abs(row_mean(out.value(), i)) < 1e-10);
        CHECK(std::abs(row_var(out.value(), i) - 1.0) < 1e-12);
    }
}

TEST_CASE("layer normalization is shift invariant") {
    // Integer inputs and an integer shift keep the arithmetic exact, so the
    // invariance is bitwise here.
    Tensor z(Shape{2, 4}, {1, 2, 3, 4, -5, 0, 3, 6});
    Tensor shifted = z.clone();
    for (auto& v : shifted.vec()) v += 10.0;
    Tape tape;
    const Var a = layer_norm(tape.leaf(z), {0.0, 0.9});
    const Var b = layer_norm(tape.leaf(shifted), {0.0, 0.9});
    CHECK(a.value().bitwise_equal(b.value()));
}

TEST_CASE("bmlv: batch-centered numerator, per-sample unit variance") {
    Rng rng(26);
    const Tensor z = random_tensor({12, 6}, rng, 2.5);
    RunningStats stats = make_running_stats(2, 6);
    Tape tape;
    const Var out = bmlv_norm(tape.leaf(z), NormMode::train, stats, {0.0, 0.9});
    const Tensor& y = out.value();

    // dividing by the per-sample std makes each row unit-variance...
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(std::abs(row_var(y, i) - 1.0) < 1e-12);
    }
    // ...and the numerator (undo the row scale) has zero batch mean
    Tensor numer(Shape{12, 6});
    for (std::size_t i = 0; i < 12; ++i) {
        Tensor centered(Shape{1, 6});
        for (std::size_t j = 0; j < 6; ++j) {
            centered.vec()[j] = z.at2(i, j) - column_mean(z, j);
        }
        const double sd = std::sqrt(row_var(centered, 0));
        for (std::size_t j = 0; j < 6; ++j) numer.vec()[i * 6 + j] = y.at2(i, j) * sd;
    }
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(std::abs(column_mean(numer, j)) < 1e-10);
    }
}

TEST_CASE("lmbv: per-sample centered numerator, per-channel unit batch variance") {
    Rng rng(27);
    const Tensor z = random_tensor({12, 6}, rng, 2.5);
    RunningStats stats = make_running_stats(2, 6);
    Tape tape;
    const Var out = lmbv_norm(tape.leaf(z), NormMode::train, stats, {0.0, 0.9});
    const Tensor& y = out.value();
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(std::abs(column_var(y, j) - 1.0) < 1e-12);
    }
    // undo the per-channel scale: numerator rows must each average to zero
    Tensor centered(Shape{12, 6});
    for (std::size_t i = 0; i < 12; ++i) {
        const double m = row_mean(z, i);
        for (std::size_t j = 0; j < 6; ++j) centered.vec()[i * 6 + j] = z.at2(i, j) - m;
    }
    for (std::size_t i = 0; i < 12; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            s += y.at2(i, j) * std::sqrt(column_var(centered, j));
        }
        CHECK(std::abs(s / 6.0) < 1e-10);
    }
}

TEST_CASE("bmlv/lmbv eval replaces exactly the batch statistic") {
    Rng rng(28);
    const Tensor z = random_tensor({8, 4}, rng);
    const NormOptions opts{1e-5, 0.9};

    SUBCASE("bmlv eval centers with the running mean") {
        RunningStats stats = make_running_stats(2, 4);
        {
            Tape t;
            bmlv_norm(t.leaf(z), NormMode::train, stats, opts);
        }
        Tape tape;
        const Var out = bmlv_norm(tape.leaf(z), NormMode::eval, stats, opts);
        // oracle: y = (z - running_mean) then scale by per-sample std
        Tensor c(Shape{8, 4});
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                c.vec()[i * 4 + j] = z.at2(i, j) - stats.mean[j];
        for (std::size_t i = 0; i < 8; ++i) {
            const double sd = std::sqrt(row_var(c, i) + opts.eps);
            for (std::size_t j = 0; j < 4; ++j) {
                CHECK(out.value().at2(i, j) ==
                      doctest::Approx(c.at2(i, j) / sd).epsilon(1e-13));
            }
        }
    }

    SUBCASE("lmbv eval divides by the running variance") {
        RunningStats stats = make_running_stats(2, 4);
        {
            Tape t;
            lmbv_norm(t.leaf(z), NormMode::train, stats, opts);
        }
        Tape tape;
        const Var out = lmbv_norm(tape.leaf(z), NormMode::eval, stats, opts);
        for (std::size_t i = 0; i < 8; ++i) {
            const double m = row_mean(z, i);
            for (std::size_t j = 0; j < 4; ++j) {
                const double expected =
                    (z.at2(i, j) - m) / std::sqrt(stats.var[j] + opts.eps);
                CHECK(out.value().at2(i, j) == doctest::Approx(expected).epsilon(1e-13));
            }
        }
    }
}

TEST_CASE("weight normalization: unit Frobenius norm, direction kept") {
    Rng rng(29);
    const Tensor w = random_tensor({5, 4}, rng, 3.0);
    Tape tape;
    const Var out = weight_norm(tape.leaf(w));
    double n2 = 0.0;
    for (double v : out.value().data()) n2 += v * v;
    CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-12));
    const double scale = out.value()[0] / w[0];
    for (std::size_t i = 0; i < w.numel(); ++i) {
        CHECK(out.value()[i] == doctest::Approx(w[i] * scale).epsilon(1e-12));
    }

    CHECK_THROWS_AS(weight_norm(tape.leaf(Tensor::zeros({2, 2}))), NumericError);
    Tensor bad(Shape{1, 1}, {std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(weight_norm(tape.leaf(bad)), NumericError);
}

TEST_CASE("weight normalization gradient passes central differences") {
    Rng rng(30);
    const Tensor w = random_tensor({3, 3}, rng);
    const Tensor c = random_tensor({3, 3}, rng);
    const auto report = gradcheck(
        [&](Tape& t, const std::vector<Var>& in) {
            return sum_all(mul(weight_norm(in[0]), t.leaf(c)));
        },
        {w});
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("rms normalization: unit mean square per sample") {
    Rng rng(31);
    const Tensor z = random_tensor({7, 5}, rng, 2.0);
    Tape tape;
    const Var out = rms_normalize(tape.leaf(z), {0.0, 0.9});
    for (std::size_t i = 0; i < 7; ++i) {
        double ms = 0.0;
        for (std::size_t j = 0; j < 5; ++j) ms += out.value().at2(i, j) * out.value().at2(i, j);
        CHECK(ms / 5.0 == doctest::Approx(1.0).epsilon(1e-13));
    }
}

TEST_CASE("rms penalty equals the brute-force pairwise average") {
    Rng rng(32);
    const std::size_t B = 8, D = 16;
    const Tensor z = random_tensor({B, D}, rng, 1.5);
    Tape tape;
    const Var zbar = rms_normalize(tape.leaf(z), {0.0, 0.9});
    const double closed = reg_norm_penalty(zbar).value()[0];

    // independent oracle: average over all ordered sample pairs of
    // sum_i ((a_i + b_i)^2 - 2), valid because each row of zbar has unit
    // mean square (so sum_i a_i^2 = D)
    const Tensor& zb = zbar.value();
    long double acc = 0.0L;
    for (std::size_t a = 0; a < B; ++a) {
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t i = 0; i < D; ++i) {
                const long double s = (long double)zb.at2(a, i) + (long double)zb.at2(b, i);
                acc += s * s - 2.0L;
            }
        }
    }
    const double pairwise = double(acc / (long double)(B * B));
    CHECK(closed == doctest::Approx(pairwise).epsilon(1e-10));

    // closed form itself: 2 * sum_i mean_i^2
    long double direct = 0.0L;
    for (std::size_t i = 0; i < D; ++i) {
        long double m = 0.0L;
        for (std::size_t a = 0; a < B; ++a) m += zb.at2(a, i);
        m /= B;
        direct += m * m;
    }
    CHECK(closed == doctest::Approx(double(2.0L * direct)).epsilon(1e-12));
}

TEST_CASE("rms penalty is zero exactly when feature means vanish") {
    Tensor balanced(Shape{2, 2}, {1.0, -1.0, -1.0, 1.0});
    Tape tape;
    const Var zb = tape.leaf(balanced);  // already unit mean square per row
    CHECK(reg_norm_penalty(zb).value()[0] == 0.0);

    Tensor lopsided(Shape{2, 2}, {1.0, 1.0, 1.0, 1.0});
    const Var zl = tape.leaf(lopsided);
    CHECK(reg_norm_penalty(zl).value()[0] == doctest::Approx(4.0));

    CHECK_THROWS_AS(reg_norm_penalty(tape.leaf(Tensor::scalar(1.0))), ShapeError);
}

TEST_CASE("rms penalty gradient passes central differences") {
    Rng rng(33);
    const Tensor z = random_tensor({4, 6}, rng);
    const auto report = gradcheck(
        [](Tape&, const std::vector<Var>& in) {
            return reg_norm_penalty(rms_normalize(in[0], {0.0, 0.9}));
        },
        {z});
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("normalizers reject unsupported ranks") {
    Tape tape;
    const Var bad = tape.leaf(Tensor::zeros({2, 2, 2}));
    RunningStats stats = make_running_stats(2, 2);
    CHECK_THROWS_AS(layer_norm(bad, {}), ShapeError);
    CHECK_THROWS_AS(batch_norm(bad, NormMode::train, stats, {}), ShapeError);
}

TEST_CASE("moment_normalize gradients pass central differences") {
    Rng rng(34);
    const Tensor z = random_tensor({5, 4}, rng);
    const Tensor c = random_tensor({5, 4}, rng);
    for (int variant = 0; variant < 3; ++variant) {
        const auto report = gradcheck(
            [&](Tape& t, const std::vector<Var>& in) {
                const auto B = batch_axes(2);
                const auto F = feature_axes(2);
                const Var y = variant == 0 ? moment_normalize(in[0], B, B, 1e-5)
                              : variant == 1 ? moment_normalize(in[0], F, F, 1e-5)
                                             : moment_normalize(in[0], B, F, 1e-5);
                return sum_all(mul(y, t.leaf(c)));
            },
            {z});
        CHECK(report.max_rel_err < 1e-6);
    }
}
