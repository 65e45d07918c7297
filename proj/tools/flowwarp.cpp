// Experiment CLI: synthetic data generation, gradient checks, training,
// evaluation, and single-operator utilities.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "fwn/gradcheck.hpp"
#include "fwn/io.hpp"
#include "fwn/metrics.hpp"
#include "fwn/network.hpp"
#include "fwn/synthdata.hpp"
#include "fwn/tps.hpp"
#include "fwn/trainer.hpp"
#include "fwn/warp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GenArgs {
    std::uint64_t seed = 1;
    int frames = 20;
    std::string motion = "affine";
    std::string out;
};

int cmd_gen_data(const GenArgs& args) {
    fwn::SpriteScene scene;
    scene.seed = args.seed;
    scene.motion = args.motion == "tps" ? fwn::MotionKind::kTps : fwn::MotionKind::kAffine;
    const fwn::Dataset ds = fwn::generate(scene, args.frames);
    fwn::export_dataset(ds, args.out);
    std::cout << (fs::path(args.out) / "manifest.json").string() << "\n";
    return 0;
}

struct TrainArgs {
    std::vector<std::string> data;
    int steps = 500;
    double lambda1 = 5.0;
    double lambda2 = 0.5;
    std::uint64_t seed = 1;
    std::string out = "model.bin";
    std::string log = "losses.jsonl";
};

int cmd_train(const TrainArgs& args) {
    std::vector<fwn::Dataset> datasets;
    for (const std::string& dir : args.data) datasets.push_back(fwn::import_dataset(dir));

    std::ofstream log(args.log);
    if (!log) throw fwn::IoError("train: cannot open log " + args.log);

    fwn::TrainOptions options;
    options.steps = args.steps;
    options.lambda1 = args.lambda1;
    options.lambda2 = args.lambda2;
    options.seed = args.seed;

    fwn::C2fState last_good;
    bool have_checkpoint = false;
    int failed_step = -1;
    try {
        const fwn::TrainResult result = fwn::train_on(
            datasets, options, [&](const fwn::StepRecord& rec, const fwn::C2fState& state) {
                json record{{"step", rec.step}, {"sequence", rec.sequence}, {"frame", rec.frame}};
                record.update(json::parse(rec.report.to_json()));
                log << record.dump() << "\n";
                last_good = state;
                have_checkpoint = true;
                failed_step = rec.step + 1;
            });
        fwn::save_model(result.state, args.out);
    } catch (const fwn::NumericalError& e) {
        if (have_checkpoint) fwn::save_model(last_good, args.out);
        std::cerr << "train: aborted at step " << failed_step << ": " << e.what()
                  << (have_checkpoint ? " (last-good checkpoint written to " + args.out + ")" : "")
                  << "\n";
        return 1;
    }

    json config_json{{"steps", args.steps},   {"lambda1", args.lambda1},
                     {"lambda2", args.lambda2}, {"seed", args.seed},
                     {"data", args.data},     {"model", args.out},
                     {"height", datasets[0].height}, {"width", datasets[0].width}};
    std::ofstream cfg(args.out + ".config.json");
    cfg << config_json.dump(2) << "\n";
    return 0;
}

json metrics_to_json(const fwn::EvalResult& m) {
    return json::parse(fwn::eval_metrics_json(m));
}

// Ground-truth frames evaluated as if they were predictions.
fwn::EvalResult evaluate_ground_truth(const fwn::Dataset& ds) {
    fwn::EvalResult m;
    std::vector<fwn::ImageTensor> frames;
    std::vector<fwn::FlowField> lag1;
    for (std::size_t t = 0; t < ds.frames.size(); ++t) {
        const fwn::ImageTensor target =
            fwn::clothing_foreground(ds.frames[t].image, ds.frames[t].layout);
        m.ssim += fwn::ssim(target, target);
        frames.push_back(target);
        if (t >= 1) lag1.push_back(ds.frames[t].lag_flows.at(1));
    }
    m.ssim /= ds.frames.size();
    m.ssim_coarse = m.ssim;
    m.psnr = std::numeric_limits<double>::infinity();
    m.psnr_coarse = m.psnr;
    m.tcm = ds.frames.size() > 1 ? fwn::tcm(frames, lag1) : 1.0;
    return m;
}

struct EvalArgs {
    std::string model;
    std::string model_b;
    std::string data;
    std::string out = "metrics.json";
};

int cmd_eval(const EvalArgs& args) {
    const fwn::Dataset ds = fwn::import_dataset(args.data);
    json result{{"data", args.data}, {"frames", ds.frames.size()}};

    std::vector<fwn::C2fOutput> outputs;
    fwn::EvalResult m;
    if (args.model.empty()) {
        m = evaluate_ground_truth(ds);
        result["mode"] = "ground-truth";
    } else {
        const fwn::C2fState state = fwn::load_model(args.model);
        m = fwn::evaluate_on(state, ds, &outputs);
        result["mode"] = "model";
        result["model"] = args.model;
    }
    result.update(metrics_to_json(m));

    if (!args.model_b.empty()) {
        const fwn::C2fState state_b = fwn::load_model(args.model_b);
        const fwn::EvalResult mb = fwn::evaluate_on(state_b, ds, nullptr);
        result["comparison"] = {{"model_b", args.model_b},
                                {"a", metrics_to_json(m)},
                                {"b", metrics_to_json(mb)},
                                {"delta", {{"ssim", m.ssim - mb.ssim}, {"tcm", m.tcm - mb.tcm}}}};
    }

    {
        std::ofstream out(args.out);
        if (!out) throw fwn::IoError("eval: cannot open " + args.out);
        out << result.dump(2) << "\n";
    }

    // Per-frame artifacts next to the metrics file.
    if (!outputs.empty()) {
        const fs::path dir = fs::path(args.out).parent_path() /
                             (fs::path(args.out).stem().string() + "_frames");
        fs::create_directories(dir);
        char name[64];
        for (std::size_t t = 0; t < outputs.size(); ++t) {
            std::snprintf(name, sizeof(name), "warped_%04zu.png", t);
            fwn::write_image(outputs[t].warped_fine, (dir / name).string());
            std::snprintf(name, sizeof(name), "flow_%04zu.flo", t);
            fwn::write_flo(outputs[t].flow_final, (dir / name).string());
        }
    }
    std::cout << args.out << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& op, std::uint64_t seed) {
    const fwn::GradCheckResult res = fwn::gradcheck(op, seed);
    std::printf("op=%s max_rel_err=%.3e threshold=%.0e probes=%d %s\n", res.op.c_str(),
                res.max_rel_err, res.threshold, res.probes, res.pass() ? "PASS" : "FAIL");
    return res.pass() ? 0 : 1;
}

int cmd_warp(const std::string& image_path, const std::string& flow_path, const std::string& out) {
    const fwn::ImageTensor image = fwn::read_image(image_path);
    const fwn::FlowField flow = fwn::read_flo(flow_path);
    fwn::write_image(fwn::warp_backward(image, flow), out);
    return 0;
}

int cmd_tps(const std::string& theta_json, const std::string& size, const std::string& out_flo) {
    std::ifstream in(theta_json);
    if (!in) throw fwn::IoError("tps: cannot open " + theta_json);
    json spec = json::parse(in);
    const json& arr = spec.is_object() ? spec.at("theta") : spec;
    if (!arr.is_array() || arr.size() != fwn::kTpsPoints)
        throw fwn::FormatError("tps: expected 9 [x, y] control points");
    fwn::TpsPoints theta;
    for (int k = 0; k < fwn::kTpsPoints; ++k) {
        theta[k].x = arr.at(k).at(0).get<double>();
        theta[k].y = arr.at(k).at(1).get<double>();
    }
    int w = 0, h = 0;
    if (std::sscanf(size.c_str(), "%dx%d", &w, &h) != 2) {
        if (std::sscanf(size.c_str(), "%d", &w) == 1)
            h = w;
        else
            throw fwn::ContractError("tps: --size expects WxH or N");
    }
    const fwn::TpsTransform t = fwn::fit_tps(fwn::tps_lattice(), theta);
    fwn::write_flo(fwn::tps_to_flow(t, h, w), out_flo);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coarse-to-fine flow warping experiments"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic sprite sequence");
    gen_cmd->add_option("--seed", gen.seed, "Scene seed");
    gen_cmd->add_option("--frames", gen.frames, "Frame count")->check(CLI::PositiveNumber);
    gen_cmd->add_option("--motion", gen.motion, "Motion script")
        ->check(CLI::IsMember({"affine", "tps"}));
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();

    std::string gc_op;
    std::uint64_t gc_seed = 1;
    CLI::App* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    gc_cmd->add_option("--op", gc_op, "Operator suite")
        ->required()
        ->check(CLI::IsMember({"warp", "lcdconv", "ftc", "tvl1", "tps", "network"}));
    gc_cmd->add_option("--seed", gc_seed, "Probe seed");

    TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "Train the flow warping network");
    train_cmd->add_option("--data", train.data, "Dataset directory (repeatable)")->required();
    train_cmd->add_option("--steps", train.steps, "Training steps")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--lambda1", train.lambda1, "FTC loss weight");
    train_cmd->add_option("--lambda2", train.lambda2, "TVL1 loss weight");
    train_cmd->add_option("--seed", train.seed, "Initialization seed");
    train_cmd->add_option("--out", train.out, "Model output path");
    train_cmd->add_option("--log", train.log, "JSONL loss log path");

    EvalArgs eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a dataset");
    eval_cmd->add_option("--model", eval.model, "Model path (omit to score ground truth)");
    eval_cmd->add_option("--model-b", eval.model_b, "Second model for an ablation comparison");
    eval_cmd->add_option("--data", eval.data, "Dataset directory")->required();
    eval_cmd->add_option("--out", eval.out, "Metrics JSON path");

    std::string warp_image, warp_flow_path, warp_out;
    CLI::App* warp_cmd = app.add_subcommand("warp", "Warp an image by a .flo field");
    warp_cmd->add_option("--image", warp_image)->required();
    warp_cmd->add_option("--flow", warp_flow_path)->required();
    warp_cmd->add_option("--out", warp_out)->required();

    std::string tps_theta, tps_size = "64x64", tps_out;
    CLI::App* tps_cmd = app.add_subcommand("tps", "Convert TPS control points to a .flo field");
    tps_cmd->add_option("--theta-json", tps_theta, "JSON file with 9 [x, y] points")->required();
    tps_cmd->add_option("--size", tps_size, "WxH or N");
    tps_cmd->add_option("--out-flo", tps_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen_data(gen);
        if (gc_cmd->parsed()) return cmd_gradcheck(gc_op, gc_seed);
        if (train_cmd->parsed()) return cmd_train(train);
        if (eval_cmd->parsed()) return cmd_eval(eval);
        if (warp_cmd->parsed()) return cmd_warp(warp_image, warp_flow_path, warp_out);
        if (tps_cmd->parsed()) return cmd_tps(tps_theta, tps_size, tps_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
