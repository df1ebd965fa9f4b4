#include "normlab/trainer.hpp"

#include <cmath>

#include "normlab/autograd.hpp"
#include "normlab/errors.hpp"

namespace normlab {

namespace {

constexpr double kDivergenceCeiling = 1e6;

std::vector<std::size_t> sample_batch(std::size_t n, std::size_t batch, Rng& rng) {
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng.uniform_int(n);
    return idx;
}

std::vector<std::size_t> slice_labels(const std::vector<std::size_t>& y, std::size_t lo,
                                      std::size_t hi) {
    return {y.begin() + std::ptrdiff_t(lo), y.begin() + std::ptrdiff_t(hi)};
}

}  // namespace

StepResult sgd_step(Model& model, const Tensor& x, const std::vector<std::size_t>& labels,
                    double lr, double lambda_reg) {
    if (lr < 0.0) throw ParamError("learning rate must be non-negative");
    if (lambda_reg < 0.0) throw ParamError("penalty coefficient must be non-negative");

    Tape tape;
    ForwardResult fr = model.forward(tape, x, NormMode::train, false);
    Var loss = softmax_cross_entropy(fr.logits, labels);
    if (lambda_reg > 0.0 && !fr.penalties.empty()) {
        loss = add(loss, mul_scalar(total_penalty(tape, fr), lambda_reg));
    }
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value) || loss_value > kDivergenceCeiling) {
        return {loss_value, true};
    }
    tape.backward(loss);

    auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor g = tape.grad(fr.param_vars[i]);
        Tensor next = params[i].value.clone();
        auto& nv = next.vec();
        const auto gv = g.data();
        for (std::size_t j = 0; j < nv.size(); ++j) nv[j] -= lr * gv[j];
        params[i].value = next;
    }
    return {loss_value, false};
}

EvalResult evaluate(Model& model, const Tensor& x, const std::vector<std::size_t>& y,
                    std::size_t batch_size, NormMode mode) {
    if (mode == NormMode::train) {
        throw ParamError("evaluate must not run in train mode");
    }
    if (batch_size == 0) throw ParamError("evaluate: batch size must be positive");
    const std::size_t n = x.rank() == 0 ? 0 : x.dim(0);
    if (n == 0 || y.size() != n) throw DataError("evaluate: empty or mismatched data");

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    for (std::size_t lo = 0; lo < n; lo += batch_size) {
        const std::size_t hi = std::min(n, lo + batch_size);
        Tensor bx = gather_rows(x, slice_labels(all, lo, hi));
        const std::vector<std::size_t> by = slice_labels(y, lo, hi);
        Tape tape;
        ForwardResult fr = model.forward(tape, bx, mode, false);
        Var loss = softmax_cross_entropy(fr.logits, by);
        loss_sum += loss.value()[0] * double(hi - lo);
        const Tensor& logits = fr.logits.value();
        const std::size_t k = logits.dim(1);
        for (std::size_t i = 0; i < hi - lo; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j) {
                if (logits[i * k + j] > logits[i * k + best]) best = j;
            }
            if (best == by[i]) ++correct;
        }
    }
    return {double(correct) / double(n), loss_sum / double(n)};
}

TrainResult train(Model& model, const Dataset& data, const TrainOptions& opts,
                  const DiagCallback& on_diag) {
    if (opts.steps == 0) throw ParamError("train: steps must be >= 1");
    if (opts.batch_size == 0) throw ParamError("train: batch size must be positive");
    const std::size_t n = data.train_x.dim(0);
    if (n == 0) throw DataError("train: empty dataset");

    Rng rng = Rng(opts.seed).split(0x7261696eULL);
    TrainResult result;
    result.lr = opts.lr;
    const NormMode eval_mode = NormMode::eval;

    for (std::size_t step = 0; step < opts.steps; ++step) {
        const auto idx = sample_batch(n, opts.batch_size, rng);
        Tensor bx = gather_rows(data.train_x, idx);
        std::vector<std::size_t> by(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) by[i] = data.train_y[idx[i]];

        StepResult sr = sgd_step(model, bx, by, opts.lr, opts.lambda_reg);
        if (sr.diverged) {
            result.diverged = true;
            result.diverged_step = step;
            TrainRecord rec;
            rec.step = step;
            rec.loss = sr.loss;
            rec.lr = opts.lr;
            result.records.push_back(std::move(rec));
            return result;
        }

        const bool record = opts.record_period != 0 && step % opts.record_period == 0;
        const bool diag = opts.diag_period != 0 && step % opts.diag_period == 0;
        const bool last = step + 1 == opts.steps;
        if (record || diag || last) {
            TrainRecord rec;
            rec.step = step;
            rec.loss = sr.loss;
            rec.lr = opts.lr;
            if (diag || last) {
                rec.train_acc = evaluate(model, data.train_x, data.train_y,
                                         opts.eval_batch_size, eval_mode)
                                    .accuracy;
                rec.test_acc = evaluate(model, data.test_x, data.test_y,
                                        opts.eval_batch_size, eval_mode)
                                   .accuracy;
                if (on_diag) on_diag(model, step, rec);
            }
            if (last) {
                result.final_train_acc = *rec.train_acc;
                result.final_test_acc = *rec.test_acc;
            }
            result.records.push_back(std::move(rec));
        }
    }
    return result;
}

GridResult lr_grid_search(const ModelConfig& config, const Dataset& data,
                          const TrainOptions& base, const std::vector<double>& grid) {
    if (grid.empty()) throw ParamError("lr grid search: empty grid");
    GridResult out;
    for (double lr : grid) {
        Model model(config);
        TrainOptions opts = base;
        opts.lr = lr;
        opts.record_period = 0;  // only the final record matters here
        opts.diag_period = 0;
        TrainResult tr = train(model, data, opts);
        GridCell cell;
        cell.lr = lr;
        cell.diverged = tr.diverged;
        cell.diverged_step = tr.diverged_step;
        if (!tr.diverged) {
            cell.final_test_acc = tr.final_test_acc;
            cell.final_loss = tr.records.empty() ? 0.0 : tr.records.back().loss;
        }
        out.cells.push_back(cell);
    }
    double best_acc = -1.0;
    for (const GridCell& c : out.cells) {
        if (c.diverged) continue;
        if (c.final_test_acc > best_acc ||
            (out.found && c.final_test_acc == best_acc && c.lr < out.best_lr)) {
            best_acc = c.final_test_acc;
            out.best_lr = c.lr;
            out.found = true;
        }
    }
    return out;
}

std::vector<SweepCell> batch_size_sweep(const ModelConfig& config, const Dataset& data,
                                        const TrainOptions& base,
                                        const std::vector<std::size_t>& train_sizes,
                                        const std::vector<std::size_t>& eval_sizes) {
    if (train_sizes.empty() || eval_sizes.empty()) {
        throw ParamError("batch size sweep: empty size list");
    }
    std::vector<SweepCell> cells;
    for (std::size_t tb : train_sizes) {
        Model model(config);
        TrainOptions opts = base;
        opts.batch_size = tb;
        opts.record_period = 0;
        opts.diag_period = 0;
        TrainResult tr = train(model, data, opts);
        for (std::size_t eb : eval_sizes) {
            SweepCell cell;
            cell.train_batch = tb;
            cell.eval_batch = eb;
            if (tr.diverged) {
                cell.missing = true;
            } else {
                cell.acc_running_stats =
                    evaluate(model, data.test_x, data.test_y, eb, NormMode::eval).accuracy;
                cell.acc_batch_stats =
                    evaluate(model, data.test_x, data.test_y, eb, NormMode::batch_train)
                        .accuracy;
            }
            cells.push_back(cell);
        }
    }
    return cells;
}

}  // namespace normlab
