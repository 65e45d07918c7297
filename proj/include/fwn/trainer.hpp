#pragma once

#include <functional>
#include <vector>

#include "fwn/network.hpp"
#include "fwn/synthdata.hpp"

namespace fwn {

struct TrainOptions {
    int steps = 500;
    double lambda1 = 5.0;
    double lambda2 = 0.5;
    std::uint64_t seed = 1;
};

struct StepRecord {
    int step = 0;
    int sequence = 0;
    int frame = 0;
    LossReport report;
};

struct TrainResult {
    C2fState state;
    std::vector<StepRecord> records;
};

using StepCallback = std::function<void(const StepRecord&, const C2fState&)>;

// Trains round-robin over the sequences, walking each one in temporal order
// and feeding predicted flows forward as the chi_3 input and FTC history.
// The callback (optional) sees every successful step.
TrainResult train_on(const std::vector<Dataset>& datasets, const TrainOptions& options,
                     const StepCallback& callback = nullptr);

struct EvalResult {
    double ssim = 0.0;
    double psnr = 0.0;
    double tcm = 0.0;
    double ssim_coarse = 0.0;
    double psnr_coarse = 0.0;
};

// Runs the model over the dataset's layout sequence and scores warped outputs
// against the ground-truth clothing foreground. PSNR aggregates MSE over all
// frames; TCM uses the dataset's lag-1 flows.
EvalResult evaluate_on(const C2fState& state, const Dataset& dataset,
                       std::vector<C2fOutput>* outputs = nullptr);

// JSON object keyed by metric name; non-finite values (infinite PSNR of an
// exact match) serialize as null.
std::string eval_metrics_json(const EvalResult& metrics);

}  // namespace fwn
