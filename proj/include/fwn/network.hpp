#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fwn/grid.hpp"
#include "fwn/losses.hpp"
#include "fwn/tps.hpp"

namespace fwn {

// Toy-scale coarse-to-fine flow warping network: three feature pyramids
// (appearance, motion, previous flow), a correlation-driven TPS control-point
// regressor for the coarse flow, coarse warping of the appearance pyramid,
// and a refinement head that predicts the fine flow from the concatenated
// largest top-down features.

struct C2fConfig {
    int height = 64;
    int width = 64;
    int levels = 3;
    int base_channels = 8;
    int num_classes = 3;
    int image_channels = 3;
    int regressor_hidden = 64;
    int fine_hidden = 16;
    double leaky_slope = 0.1;
    double theta_scale = 0.5;
};

// Standard convolution parameters, kernel 1 or 3, stride 1, zero padding.
struct Conv {
    int in_c = 0;
    int out_c = 0;
    int ksize = 3;
    std::vector<double> w;  // [out][in][ky][kx]
    std::vector<double> b;  // [out]
};

struct Affine {
    int in_dim = 0;
    int out_dim = 0;
    std::vector<double> w;  // [out][in]
    std::vector<double> b;  // [out]
};

// One feature pyramid. Bottom-up convs are layout-gated deformable convs when
// offset predictors are present (appearance and motion pyramids) and plain
// convs otherwise (flow pyramid).
struct FpnParams {
    std::vector<Conv> bottom_up;
    std::vector<Conv> offset_pred;  // empty for the flow pyramid
    std::vector<Conv> lateral;      // 1x1
};

struct C2fState {
    C2fConfig config;
    FpnParams fpn_a, fpn_m, fpn_f;
    Affine reg_fc1, reg_fc2;  // correlation GAP -> hidden(tanh) -> 18 displacements
    Conv fine1, fine2;        // refinement head, fine2 zero-initialized
};

// Deterministic initialization; offset predictors, the final regressor layer
// and the final fine-head layer start at zero so the network opens at the
// identity transform.
C2fState init_state(const C2fConfig& config, std::uint64_t seed);

// Visits every parameter tensor as (name, vector). Enumeration order is fixed.
void for_each_param(C2fState& state,
                    const std::function<void(const std::string&, std::vector<double>&)>& fn);
void for_each_param(const C2fState& state,
                    const std::function<void(const std::string&, const std::vector<double>&)>& fn);

struct C2fOutput {
    FlowField flow_coarse, flow_fine, flow_final;
    ImageTensor warped_coarse, warped_fine;
    TpsPoints theta;
};

C2fOutput forward(const C2fState& state, const ImageTensor& fg_c, const SemanticLayout& lo_c,
                  const SemanticLayout& motion_layout, const FlowField& prev_flow);

// One Eq. 3 term available at the current frame.
struct FtcTerm {
    int lag = 1;
    FlowField f_prev;  // predicted flow at t - lag (treated as constant)
    FlowField u;       // ground-truth backward optical flow from t to t - lag
};

struct TrainSample {
    ImageTensor fg_c;
    SemanticLayout lo_c;
    SemanticLayout motion_layout;
    ImageTensor target_image;  // ground-truth clothing foreground at t
    FlowField prev_flow;       // previous predicted flow (zero for the first frame)
    std::vector<FtcTerm> ftc_terms;
};

// Full objective and reverse-mode gradients for one sample. grads (when
// given) must be a zero- or accumulator-initialized state of the same shape.
// Returns l_full; fills report/output when provided.
double loss_and_grad(const C2fState& state, const TrainSample& sample, double lambda1,
                     double lambda2, C2fState* grads, LossReport* report = nullptr,
                     C2fOutput* output = nullptr);

struct AdamOptimizer {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step_count = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};

// One gradient step on l_full. Throws NumericalError (state untouched beyond
// the report) if the loss is non-finite.
LossReport train_step(C2fState& state, const TrainSample& sample, AdamOptimizer& opt,
                      double lambda1 = 5.0, double lambda2 = 0.5, C2fOutput* output = nullptr);

// Runs a frame sequence, feeding each frame's flow_final as the next frame's
// previous-flow input; the first frame sees a zero flow.
std::vector<C2fOutput> run_sequence(const C2fState& state, const ImageTensor& fg_c,
                                    const SemanticLayout& lo_c,
                                    const std::vector<SemanticLayout>& motion_layouts);

// Binary model file: magic, version, config block, then a named tensor table
// (name length, name, dims, float64 little-endian payload).
void save_model(const C2fState& state, const std::string& path);
C2fState load_model(const std::string& path);

}  // namespace fwn
