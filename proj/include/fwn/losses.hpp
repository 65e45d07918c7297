#pragma once

#include <map>
#include <string>
#include <vector>

#include "fwn/grid.hpp"

namespace fwn {

// Named loss terms of one training step. l_full is the weighted sum
// l_rec_fine + l_rec_coarse + lambda1 * l_ftc + lambda2 * l_tvl1.
struct LossReport {
    double l_rec_fine = 0.0;
    double l_rec_coarse = 0.0;
    double l_ftc = 0.0;
    double l_tvl1 = 0.0;
    double l_full = 0.0;
    double lambda1 = 5.0;
    double lambda2 = 0.5;

    std::string to_json() const;
    static LossReport from_json(const std::string& text);
};

// Flow temporal-consistency loss: mean over pixels of the L1 norm of
// f_t - W_u(f_prev) - u, where u is the backward optical flow from t to t-l.
// Optional adjoints on f_t and f_prev (f_prev's goes through the warp).
double ftc_loss(const FlowField& f_t, const FlowField& f_prev, const FlowField& u,
                FlowField* d_ft = nullptr, FlowField* d_fprev = nullptr);

// Sum of ftc_loss over lags {1, 3, 9}: flows holds the predicted flow per
// frame in time order (last entry = current frame t); gt_u maps lag -> U.
// Lags without enough history or without a U field are skipped; if none is
// usable this is a contract error.
double ftc_multiscale(const std::vector<FlowField>& flows, const std::map<int, FlowField>& gt_u);

// Total-variation L1 smoothness: forward differences of both components,
// summed over horizontal and vertical neighbor pairs, divided by pixel count.
double tvl1_loss(const FlowField& f, FlowField* d_f = nullptr);

// Reconstruction loss: per-pixel L1 summed over a 3-level Gaussian pyramid
// (sigma 1, factor 2), each level normalized by its pixel count. Stands in
// for a perceptual loss; see PyramidFeatureExtractor to substitute features.
double rec_loss(const ImageTensor& pred, const ImageTensor& target, ImageTensor* d_pred = nullptr);

// Feature extractor behind rec_loss. Implementations map an image to a stack
// of feature volumes compared with per-level mean-normalized L1; the default
// is the 3-level Gaussian pyramid of the input itself.
class PyramidFeatureExtractor {
  public:
    virtual ~PyramidFeatureExtractor() = default;
    virtual std::vector<ImageTensor> extract(const ImageTensor& image) const = 0;
    // Adjoint: push per-level adjoints back to the input image.
    virtual ImageTensor extract_grad(const ImageTensor& image,
                                     const std::vector<ImageTensor>& d_levels) const = 0;
};

const PyramidFeatureExtractor& gaussian_pyramid_extractor();

double rec_loss_with(const PyramidFeatureExtractor& features, const ImageTensor& pred,
                     const ImageTensor& target, ImageTensor* d_pred = nullptr);

// Eq. 4 weighted sum; throws NumericalError on non-finite components.
LossReport full_objective(double rec_fine, double rec_coarse, double ftc, double tvl1,
                          double lambda1 = 5.0, double lambda2 = 0.5);

}  // namespace fwn
