#include "biref/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace biref {

namespace F = torch::nn::functional;

namespace {
constexpr double kProbEps = 1e-7;

torch::Tensor as_4d(const torch::Tensor& t) {
    switch (t.dim()) {
        case 2: return t.unsqueeze(0).unsqueeze(0);
        case 3: return t.unsqueeze(0);
        case 4: return t;
        default: throw std::invalid_argument("loss maps must be 2-4 dimensional");
    }
}

void check_shapes(const torch::Tensor& pred, const torch::Tensor& gt) {
    if (pred.sizes() != gt.sizes())
        throw std::invalid_argument("loss: prediction/GT shape mismatch");
}

torch::Tensor gaussian_window(int n, double sigma, const torch::TensorOptions& opts) {
    auto coords = torch::arange(n, opts) - (n - 1) / 2.0;
    auto g = torch::exp(-coords * coords / (2.0 * sigma * sigma));
    g = g / g.sum();
    return torch::outer(g, g).view({1, 1, n, n});
}

}  // namespace

void LossConfig::validate() const {
    if (lambda_bce < 0 || lambda_iou < 0 || lambda_ssim < 0 || lambda_ce < 0 ||
        gradient_weight < 0)
        throw std::invalid_argument("loss weights must be nonnegative");
    if (ssim_window < 3 || ssim_window % 2 == 0)
        throw std::invalid_argument("ssim window must be odd and >= 3");
    for (double w : stage_weights)
        if (w < 0) throw std::invalid_argument("stage weights must be nonnegative");
}

torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
    check_shapes(pred, gt);
    auto p = pred.clamp(kProbEps, 1.0 - kProbEps);
    return -(gt * torch::log(p) + (1.0 - gt) * torch::log(1.0 - p)).mean();
}

torch::Tensor iou_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
    check_shapes(pred, gt);
    auto inter = (pred * gt).sum();
    auto uni = (pred + gt - pred * gt).sum();
    if (uni.item<double>() == 0.0) return torch::zeros({}, pred.options());
    return 1.0 - inter / uni;
}

torch::Tensor ssim_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                        const LossConfig& cfg) {
    check_shapes(pred, gt);
    auto x = as_4d(pred);
    auto y = as_4d(gt);
    // maps smaller than the window use the largest odd window that fits
    int n = int(std::min<int64_t>({cfg.ssim_window, x.size(2), x.size(3)}));
    if (n % 2 == 0) --n;
    n = std::max(n, 1);
    auto w = gaussian_window(n, cfg.ssim_sigma, x.options());
    auto mu_x = F::conv2d(x, w);
    auto mu_y = F::conv2d(y, w);
    auto mu_xx = mu_x * mu_x, mu_yy = mu_y * mu_y, mu_xy = mu_x * mu_y;
    auto sigma_x = F::conv2d(x * x, w) - mu_xx;
    auto sigma_y = F::conv2d(y * y, w) - mu_yy;
    auto sigma_xy = F::conv2d(x * y, w) - mu_xy;
    auto ssim = ((2.0 * mu_xy + cfg.ssim_c1) * (2.0 * sigma_xy + cfg.ssim_c2)) /
                ((mu_xx + mu_yy + cfg.ssim_c1) * (sigma_x + sigma_y + cfg.ssim_c2));
    return 1.0 - ssim.mean();
}

torch::Tensor ce_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
    auto l = logits.dim() == 1 ? logits.unsqueeze(0) : logits;
    auto t = labels.dim() == 0 ? labels.unsqueeze(0) : labels;
    return F::nll_loss(F::log_softmax(l, F::LogSoftmaxFuncOptions(1)), t);
}

torch::Tensor gradient_loss(const torch::Tensor& pred_grad, const torch::Tensor& masked_gt_grad) {
    return bce_loss(pred_grad, masked_gt_grad);
}

namespace {

torch::Tensor resize_gt(const torch::Tensor& gt, int64_t h, int64_t w, bool rebinarize) {
    auto g = F::interpolate(gt, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{h, w})
                                    .mode(torch::kArea));
    if (rebinarize) g = (g >= 0.5).to(gt.dtype());
    return g;
}

}  // namespace

HybridLoss hybrid_loss(const PredictionSet& preds, const LossTargets& targets,
                       const LossConfig& cfg) {
    cfg.validate();
    HybridLoss out;
    auto total = torch::zeros({}, preds.final_map.options());
    auto add_term = [&](const std::string& term, const std::string& stage, torch::Tensor value) {
        total = total + value;
        double v = value.item<double>();
        out.breakdown.per_term[term] += v;
        out.breakdown.per_stage[stage] += v;
    };

    // final map: Eq.(1) pixel/region/boundary terms
    add_term("bce", "final", cfg.lambda_bce * bce_loss(preds.final_map, targets.gt));
    add_term("iou", "final", cfg.lambda_iou * iou_loss(preds.final_map, targets.gt));
    add_term("ssim", "final", cfg.lambda_ssim * ssim_loss(preds.final_map, targets.gt, cfg));
    if (preds.logits.defined())
        add_term("ce", "final", cfg.lambda_ce * ce_loss(preds.logits, targets.labels));

    // multi-stage supervision on the intermediate maps
    for (size_t s = 0; s < cfg.stage_weights.size(); ++s) {
        if (cfg.stage_weights[s] == 0.0) continue;
        if (s >= preds.stage_maps.size())
            throw std::invalid_argument("hybrid_loss: stage weight set but stage map missing");
        const auto& m = preds.stage_maps[s];
        std::string stage = "stage" + std::to_string(3 - s);
        // soft (area-averaged) targets: re-binarizing at coarse strides erases
        // thin structures entirely and supervises the stage against noise
        auto gt_stage = resize_gt(targets.gt, m.size(2), m.size(3), false);
        double w = cfg.stage_weights[s];
        add_term("bce", stage, w * cfg.lambda_bce * bce_loss(m, gt_stage));
        add_term("iou", stage, w * cfg.lambda_iou * iou_loss(m, gt_stage));
        if (cfg.ssim_on_stages)
            add_term("ssim", stage, w * cfg.lambda_ssim * ssim_loss(m, gt_stage, cfg));
    }

    // gradient supervision
    if (cfg.gradient_weight > 0.0 && !targets.stage_grad_gts.empty()) {
        for (size_t s = 0; s < targets.stage_grad_gts.size() && s < preds.stage_grads.size(); ++s) {
            // stage-level supervision, so it scales with the stage weight
            double w = s < cfg.stage_weights.size() ? cfg.stage_weights[s] : 1.0;
            if (w == 0.0) continue;
            std::string stage = "stage" + std::to_string(3 - s);
            add_term("grad", stage,
                     w * cfg.gradient_weight *
                         gradient_loss(preds.stage_grads[s], targets.stage_grad_gts[s]));
        }
    }

    out.total = total;
    out.breakdown.total = total.item<double>();
    return out;
}

torch::Tensor finetune_loss(const PredictionSet& preds, const LossTargets& targets) {
    return iou_loss(preds.final_map, targets.gt);
}

}  // namespace biref
