#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "normlab/dataset.hpp"
#include "normlab/diagnostics.hpp"
#include "normlab/lanczos.hpp"
#include "normlab/model.hpp"

namespace normlab {

struct StepResult {
    double loss = 0.0;
    bool diverged = false;
};

// One forward/backward on the batch, then theta <- theta - lr * grad of
// cross-entropy + lambda_reg * (sum of rms penalties). Running statistics
// update inside the same forward. A non-finite loss, or loss > 1e6, is a
// divergence: parameters stay untouched and the caller decides what to do.
StepResult sgd_step(Model& model, const Tensor& x, const std::vector<std::size_t>& labels,
                    double lr, double lambda_reg);

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;
};

// Sequential pass over (x, y) in fixed-size batches (final partial batch
// included); never mutates parameters or running statistics.
EvalResult evaluate(Model& model, const Tensor& x, const std::vector<std::size_t>& y,
                    std::size_t batch_size, NormMode mode);

struct TrainRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    std::optional<double> train_acc;
    std::optional<double> test_acc;
    std::vector<DepthTrace> traces;
    std::vector<SpectrumEstimate> spectra;
};

struct TrainOptions {
    double lr = 0.1;
    double lambda_reg = 0.0;
    std::size_t steps = 1000;
    std::size_t batch_size = 32;
    std::size_t eval_batch_size = 256;
    std::size_t record_period = 1;  // loss record cadence
    std::size_t diag_period = 0;    // 0: accuracies/diagnostics only at the end
    std::uint64_t seed = 0;         // batch-sampling stream
};

// Invoked at diagnostic steps so callers can attach whatever measurements
// their experiment needs to the record.
using DiagCallback = std::function<void(Model&, std::size_t step, TrainRecord&)>;

struct TrainResult {
    std::vector<TrainRecord> records;
    bool diverged = false;
    std::size_t diverged_step = 0;
    double final_train_acc = 0.0;
    double final_test_acc = 0.0;
    double lr = 0.0;
};

TrainResult train(Model& model, const Dataset& data, const TrainOptions& opts,
                  const DiagCallback& on_diag = nullptr);

struct GridCell {
    double lr = 0.0;
    bool diverged = false;
    std::size_t diverged_step = 0;
    double final_test_acc = 0.0;
    double final_loss = 0.0;
};

struct GridResult {
    bool found = false;
    double best_lr = 0.0;
    std::vector<GridCell> cells;
};

inline const std::vector<double>& default_lr_grid() {
    static const std::vector<double> grid = {1e-3, 1e-2, 1e-1, 1.0, 10.0};
    return grid;
}

// Trains a fresh model per learning rate (identical seed-derived init),
// ranks by final eval accuracy, breaks ties toward the smaller rate.
// Divergence disqualifies; found=false when everything diverged.
GridResult lr_grid_search(const ModelConfig& config, const Dataset& data,
                          const TrainOptions& base, const std::vector<double>& grid);

struct SweepCell {
    std::size_t train_batch = 0;
    std::size_t eval_batch = 0;
    double acc_running_stats = 0.0;  // eval mode
    double acc_batch_stats = 0.0;    // batch_train mode
    bool missing = false;            // training diverged
};

// One model per train batch size at a fixed lr, evaluated at every eval
// batch size under both statistic sources.
std::vector<SweepCell> batch_size_sweep(const ModelConfig& config, const Dataset& data,
                                        const TrainOptions& base,
                                        const std::vector<std::size_t>& train_sizes,
                                        const std::vector<std::size_t>& eval_sizes);

}  // namespace normlab
