#ifndef BIREF_LOSSES_HPP
#define BIREF_LOSSES_HPP

#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "biref/model.hpp"

namespace biref {

struct LossConfig {
    double lambda_bce = 30.0;
    double lambda_iou = 0.5;
    double lambda_ssim = 10.0;
    double lambda_ce = 5.0;
    int ssim_window = 11;
    double ssim_sigma = 1.5;
    double ssim_c1 = 0.01 * 0.01;
    double ssim_c2 = 0.03 * 0.03;
    std::vector<double> stage_weights = {1.0, 1.0, 1.0};  // {M3,M2,M1}
    double gradient_weight = 1.0;
    bool ssim_on_stages = true;
    int dilation_radius = 2;  // mask radius at the deepest stage, doubled per stage up
    bool finetune_mode = false;

    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    std::map<std::string, double> per_term;   // weighted term values
    std::map<std::string, double> per_stage;  // weighted per-stage sums
};

// Mean binary cross-entropy; pred clamped to [eps, 1-eps] before logs.
torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& gt);

// Soft IoU loss: 1 - sum(p*g) / sum(p + g - p*g).
torch::Tensor iou_loss(const torch::Tensor& pred, const torch::Tensor& gt);

// 1 - mean Gaussian-windowed SSIM. Maps smaller than the window use the
// largest odd window that fits.
torch::Tensor ssim_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                        const LossConfig& cfg = {});

// Softmax cross-entropy, mean over the batch.
torch::Tensor ce_loss(const torch::Tensor& logits, const torch::Tensor& labels);

// BCE between a predicted gradient map and the masked GT gradient.
torch::Tensor gradient_loss(const torch::Tensor& pred_grad, const torch::Tensor& masked_gt_grad);

struct LossTargets {
    torch::Tensor gt;      // [B,1,H,W]
    torch::Tensor labels;  // [B]
    // Masked gradient GT per stage, same order/resolution as stage_grads;
    // empty when gradient supervision is off.
    std::vector<torch::Tensor> stage_grad_gts;
};

struct HybridLoss {
    // Total loss tensor (differentiable) plus the reported breakdown.
    torch::Tensor total;
    LossBreakdown breakdown;
};

// The four-term objective with multi-stage supervision and gradient terms.
HybridLoss hybrid_loss(const PredictionSet& preds, const LossTargets& targets,
                       const LossConfig& cfg);

// Region-only fine-tune objective: IoU on the final map.
torch::Tensor finetune_loss(const PredictionSet& preds, const LossTargets& targets);

}  // namespace biref

#endif
