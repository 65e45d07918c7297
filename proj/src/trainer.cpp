#include "fwn/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>

#include "fwn/metrics.hpp"

namespace fwn {

namespace {

struct Cursor {
    const Dataset* ds = nullptr;
    ImageTensor fg_c;
    SemanticLayout lo_c;
    int next = 0;
    std::vector<FlowField> predicted;
};

TrainSample cursor_sample(const Cursor& cur) {
    const Dataset& ds = *cur.ds;
    const int t = cur.next;
    TrainSample s;
    s.fg_c = cur.fg_c;
    s.lo_c = cur.lo_c;
    s.motion_layout = ds.frames[t].layout;
    s.target_image = clothing_foreground(ds.frames[t].image, ds.frames[t].layout);
    s.prev_flow = t > 0 ? cur.predicted[t - 1] : FlowField(ds.height, ds.width);
    for (int lag : {1, 3, 9}) {
        if (t - lag < 0) continue;
        auto it = ds.frames[t].lag_flows.find(lag);
        if (it == ds.frames[t].lag_flows.end()) continue;
        s.ftc_terms.push_back({lag, cur.predicted[t - lag], it->second});
    }
    return s;
}

}  // namespace

TrainResult train_on(const std::vector<Dataset>& datasets, const TrainOptions& options,
                     const StepCallback& callback) {
    if (datasets.empty()) throw ContractError("train_on: no datasets");
    for (const Dataset& ds : datasets) {
        if (ds.frames.empty()) throw ContractError("train_on: empty dataset");
        if (ds.width != datasets[0].width || ds.height != datasets[0].height)
            throw ContractError("train_on: datasets disagree on dimensions");
    }

    std::vector<Cursor> cursors;
    cursors.reserve(datasets.size());
    for (const Dataset& ds : datasets) {
        Cursor cur;
        cur.ds = &ds;
        cur.fg_c = clothing_foreground(ds.frames[0].image, ds.frames[0].layout);
        cur.lo_c = ds.frames[0].layout;
        cursors.push_back(std::move(cur));
    }

    C2fConfig config;
    config.height = datasets[0].height;
    config.width = datasets[0].width;
    config.num_classes = datasets[0].num_classes;

    TrainResult result{init_state(config, options.seed), {}};
    AdamOptimizer opt;
    result.records.reserve(options.steps);

    for (int step = 0; step < options.steps; ++step) {
        Cursor& cur = cursors[step % cursors.size()];
        const TrainSample sample = cursor_sample(cur);
        C2fOutput out;
        const LossReport report =
            train_step(result.state, sample, opt, options.lambda1, options.lambda2, &out);

        StepRecord record{step, static_cast<int>(step % cursors.size()), cur.next, report};
        result.records.push_back(record);
        if (callback) callback(record, result.state);

        if (cur.next < static_cast<int>(cur.predicted.size()))
            cur.predicted[cur.next] = out.flow_final;
        else
            cur.predicted.push_back(out.flow_final);
        cur.next += 1;
        if (cur.next >= static_cast<int>(cur.ds->frames.size())) {
            cur.next = 0;
            cur.predicted.clear();
        }
    }
    return result;
}

EvalResult evaluate_on(const C2fState& state, const Dataset& dataset,
                       std::vector<C2fOutput>* outputs_out) {
    if (dataset.frames.empty()) throw ContractError("evaluate_on: empty dataset");
    const ImageTensor fg_c = clothing_foreground(dataset.frames[0].image, dataset.frames[0].layout);
    std::vector<SemanticLayout> layouts;
    layouts.reserve(dataset.frames.size());
    for (const FrameData& fd : dataset.frames) layouts.push_back(fd.layout);
    const std::vector<C2fOutput> outputs = run_sequence(state, fg_c, dataset.frames[0].layout, layouts);

    EvalResult m;
    std::vector<ImageTensor> fine_frames;
    std::vector<FlowField> lag1;
    double mse_fine = 0.0, mse_coarse = 0.0;
    for (std::size_t t = 0; t < outputs.size(); ++t) {
        const ImageTensor target =
            clothing_foreground(dataset.frames[t].image, dataset.frames[t].layout);
        m.ssim += ssim(outputs[t].warped_fine, target);
        m.ssim_coarse += ssim(outputs[t].warped_coarse, target);
        for (std::size_t i = 0; i < target.data.size(); ++i) {
            const double df = outputs[t].warped_fine.data[i] - target.data[i];
            const double dc = outputs[t].warped_coarse.data[i] - target.data[i];
            mse_fine += df * df;
            mse_coarse += dc * dc;
        }
        fine_frames.push_back(outputs[t].warped_fine);
        if (t >= 1) lag1.push_back(dataset.frames[t].lag_flows.at(1));
    }
    const double n = static_cast<double>(outputs.size());
    const double cells = n * static_cast<double>(fine_frames[0].data.size());
    m.ssim /= n;
    m.ssim_coarse /= n;
    m.psnr = mse_fine == 0.0 ? std::numeric_limits<double>::infinity()
                             : 10.0 * std::log10(cells / mse_fine);
    m.psnr_coarse = mse_coarse == 0.0 ? std::numeric_limits<double>::infinity()
                                      : 10.0 * std::log10(cells / mse_coarse);
    m.tcm = outputs.size() > 1 ? tcm(fine_frames, lag1) : 1.0;
    if (outputs_out) *outputs_out = outputs;
    return m;
}

std::string eval_metrics_json(const EvalResult& metrics) {
    auto value = [](double v) -> nlohmann::json {
        if (!std::isfinite(v)) return nullptr;
        return v;
    };
    nlohmann::json j{{"ssim", value(metrics.ssim)},
                     {"psnr", value(metrics.psnr)},
                     {"tcm", value(metrics.tcm)},
                     {"ssim_coarse", value(metrics.ssim_coarse)},
                     {"psnr_coarse", value(metrics.psnr_coarse)}};
    return j.dump();
}

}  // namespace fwn
