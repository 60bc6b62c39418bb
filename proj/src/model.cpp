#include "biref/model.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace biref {

namespace F = torch::nn::functional;
using json = nlohmann::json;

void ModelConfig::validate() const {
    if (height % 32 != 0 || width % 32 != 0)
        throw std::invalid_argument("model resolution must be divisible by 32");
    for (int w : stage_widths)
        if (w <= 0) throw std::invalid_argument("stage widths must be positive");
    if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
    if (rf_kernels.empty()) throw std::invalid_argument("receptive-field kernel set empty");
    for (int k : rf_kernels)
        if (k < 1 || k % 2 == 0) throw std::invalid_argument("RF kernels must be odd and >= 1");
}

namespace {

torch::Tensor up2(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{x.size(2) * 2, x.size(3) * 2})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

torch::nn::Conv2d conv(int in, int out, int k, int stride = 1, int dilation = 1) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k)
                                 .stride(stride)
                                 .padding(dilation * (k / 2))
                                 .dilation(dilation));
}

// Row-major space-to-channel tiling of a batch; tile k of sample b occupies
// channels [k*C,(k+1)*C). Matches patchify()'s per-sample ordering.
torch::Tensor batch_patch_stack(const torch::Tensor& images, int64_t tile_h, int64_t tile_w) {
    const auto b = images.size(0), c = images.size(1);
    const auto rows = images.size(2) / tile_h, cols = images.size(3) / tile_w;
    return images.view({b, c, rows, tile_h, cols, tile_w})
        .permute({0, 2, 4, 1, 3, 5})
        .reshape({b, rows * cols * c, tile_h, tile_w})
        .contiguous();
}

}  // namespace

// ---------------------------------------------------------------- encoder

EncoderStageImpl::EncoderStageImpl(int in_ch, int out_ch, int stride) {
    const int s1 = std::min(stride, 2);
    const int s2 = stride / s1;
    conv1 = register_module("conv1", conv(in_ch, out_ch, 3, s1));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(out_ch));
    conv2 = register_module("conv2", conv(out_ch, out_ch, 3, s2));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(out_ch));
}

torch::Tensor EncoderStageImpl::forward(const torch::Tensor& x) {
    auto y = torch::relu(bn1(conv1(x)));
    return torch::relu(bn2(conv2(y)));
}

// ------------------------------------------------------------- bottleneck

AsppBottleneckImpl::AsppBottleneckImpl(int in_ch, int out_ch, bool with_pool_branch)
    : with_pool(with_pool_branch) {
    b1 = register_module("b1", conv(in_ch, out_ch, 1));
    b2 = register_module("b2", conv(in_ch, out_ch, 3, 1, 2));
    b3 = register_module("b3", conv(in_ch, out_ch, 3, 1, 4));
    if (with_pool) pool_conv = register_module("pool_conv", conv(in_ch, out_ch, 1));
    const int branches = with_pool ? 4 : 3;
    project = register_module("project", conv(branches * out_ch, out_ch, 1));
    bn = register_module("bn", torch::nn::BatchNorm2d(out_ch));
}

torch::Tensor AsppBottleneckImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> outs = {torch::relu(b1(x)), torch::relu(b2(x)), torch::relu(b3(x))};
    if (with_pool) {
        auto pooled = torch::relu(pool_conv(F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions(1))));
        outs.push_back(pooled.expand({x.size(0), pooled.size(1), x.size(2), x.size(3)}));
    }
    return torch::relu(bn(project(torch::cat(outs, 1))));
}

// ---------------------------------------------------- reconstruction block

ReconstructionBlockImpl::ReconstructionBlockImpl(int in_ch, int branch_width, int out_ch,
                                                 std::vector<int> kernels, bool multi_rf,
                                                 bool offset_sampling)
    : kernel_sizes(std::move(kernels)),
      branch_w(branch_width),
      multi_rf_(multi_rf),
      offset_(offset_sampling) {
    branches = register_module("branches", torch::nn::ModuleList());
    if (multi_rf_) {
        for (int k : kernel_sizes) branches->push_back(conv(in_ch, branch_w, k));
        pool_conv = register_module("pool_conv", conv(in_ch, branch_w, 1));
        const int theta_ch = int(kernel_sizes.size() + 1) * branch_w;
        project = register_module("project", conv(theta_ch, out_ch, 1));
        if (offset_) offset_head = register_module("offset_head", conv(in_ch, 2, 3));
    } else {
        // vanilla two-conv block; the hidden state stands in for f_theta
        branches->push_back(conv(in_ch, branch_w, 3));
        project = register_module("project", conv(branch_w, out_ch, 3));
    }
    bn = register_module("bn", torch::nn::BatchNorm2d(out_ch));
}

std::pair<torch::Tensor, torch::Tensor> ReconstructionBlockImpl::forward(const torch::Tensor& x) {
    if (!multi_rf_) {
        auto hidden = torch::relu(branches[0]->as<torch::nn::Conv2d>()->forward(x));
        return {hidden, bn(project(hidden))};
    }
    torch::Tensor sampled = x;
    if (offset_) {
        // one learned sampling offset per position, shared by all branches
        auto off = torch::tanh(offset_head(x));  // [B,2,H,W], in feature-size units
        const auto h = x.size(2), w = x.size(3);
        auto ys = torch::linspace(-1.0, 1.0, h, x.options());
        auto xs = torch::linspace(-1.0, 1.0, w, x.options());
        auto mesh = torch::meshgrid({ys, xs}, "ij");
        auto base = torch::stack({mesh[1], mesh[0]}, -1).unsqueeze(0);  // [1,H,W,2] (x,y)
        auto shift = torch::stack({off.select(1, 0) * (2.0 / double(w)),
                                   off.select(1, 1) * (2.0 / double(h))},
                                  -1);
        sampled = F::grid_sample(x, (base + shift).clamp(-1.0, 1.0),
                                 F::GridSampleFuncOptions()
                                     .mode(torch::kBilinear)
                                     .padding_mode(torch::kBorder)
                                     .align_corners(true));
    }
    std::vector<torch::Tensor> outs;
    for (size_t i = 0; i < kernel_sizes.size(); ++i) {
        const auto& input = (kernel_sizes[i] > 1) ? sampled : x;
        outs.push_back(torch::relu(branches[i]->as<torch::nn::Conv2d>()->forward(input)));
    }
    auto pooled = torch::relu(pool_conv(F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions(1))));
    outs.push_back(pooled.expand({x.size(0), branch_w, x.size(2), x.size(3)}));
    auto f_theta = torch::cat(outs, 1);
    return {f_theta, bn(project(f_theta))};
}

// ------------------------------------------------------- outward reference

OutwardReferenceImpl::OutwardReferenceImpl(int theta_ch, int feat_ch) {
    feat_conv = register_module("feat_conv", conv(theta_ch, feat_ch, 3));
    bn = register_module("bn", torch::nn::BatchNorm2d(feat_ch));
    grad_head = register_module("grad_head", conv(feat_ch, 1, 1));
    attn_head = register_module("attn_head", conv(feat_ch, 1, 1));
}

std::pair<torch::Tensor, torch::Tensor> OutwardReferenceImpl::forward(const torch::Tensor& f_theta) {
    auto fg = torch::relu(bn(feat_conv(f_theta)));
    return {torch::sigmoid(grad_head(fg)), torch::sigmoid(attn_head(fg))};
}

// ------------------------------------------------------------ BiRef block

BiRefBlockImpl::BiRefBlockImpl(const ModelConfig& cfg, int stage, int in_ch, int patch_ch,
                               int out_ch)
    : inref_(cfg.use_inref), outref_on_(cfg.use_outref), patch_channels(patch_ch) {
    (void)stage;
    recon = register_module(
        "recon", ReconstructionBlock(in_ch + patch_ch, out_ch, out_ch, cfg.rf_kernels,
                                     cfg.use_rm, cfg.use_offset_convs));
    const int theta_ch = cfg.use_rm ? int(cfg.rf_kernels.size() + 1) * out_ch : out_ch;
    outref = register_module("outref", OutwardReference(theta_ch, out_ch));
    map_head = register_module("map_head", conv(out_ch, 1, 1));
}

BiRefBlockImpl::Output BiRefBlockImpl::forward(const torch::Tensor& fused,
                                               const torch::Tensor& patches) {
    auto p = inref_ ? patches : torch::zeros_like(patches);
    auto x = torch::cat({fused, p}, 1);
    auto [f_theta, f_dp] = recon(x);
    auto [g_hat, attn] = outref(f_theta);
    if (!outref_on_) {
        attn = torch::ones_like(attn);
        g_hat = torch::Tensor();  // no gradient supervision without the outward reference
    }
    Output out;
    // residual boundary attention: emphasizes gradient-salient locations
    // without attenuating the decoder features (a plain multiplicative gate
    // cascaded over three stages washes out the un-normalized final head)
    out.next_fd = outref_on_ ? f_dp * (1.0 + attn) : f_dp;
    out.stage_map = torch::sigmoid(map_head(out.next_fd));
    out.grad_map = g_hat;
    out.attention = attn;
    return out;
}

// -------------------------------------------------------------- full net

SegNetImpl::SegNetImpl(ModelConfig cfg) : config(std::move(cfg)) {
    config.validate();
    const auto& w = config.stage_widths;
    stage1 = register_module("stage1", EncoderStage(3, w[0], 4));
    stage2 = register_module("stage2", EncoderStage(w[0], w[1], 2));
    stage3 = register_module("stage3", EncoderStage(w[1], w[2], 2));
    stage4 = register_module("stage4", EncoderStage(w[2], w[3], 2));
    lat1 = register_module("lat1", conv(w[0], config.decoder_width(1), 1));
    lat2 = register_module("lat2", conv(w[1], config.decoder_width(2), 1));
    lat3 = register_module("lat3", conv(w[2], config.decoder_width(3), 1));
    if (config.use_cff) {
        cff1 = register_module("cff1", conv(w[3], config.decoder_width(1), 1));
        cff2 = register_module("cff2", conv(w[3], config.decoder_width(2), 1));
        cff3 = register_module("cff3", conv(w[3], config.decoder_width(3), 1));
    }
    class_head = register_module("class_head", torch::nn::Linear(w[3], config.num_classes));
    bottleneck = register_module("bottleneck", AsppBottleneck(w[3], config.decoder_width(3)));

    const int d3 = config.decoder_width(3), d2 = config.decoder_width(2),
              d1 = config.decoder_width(1);
    block3 = register_module("block3", BiRefBlock(config, 3, d3, 3 * 8 * 8, d2));
    block2 = register_module("block2", BiRefBlock(config, 2, d2, 3 * 4 * 4, d1));
    block1 = register_module("block1", BiRefBlock(config, 1, d1, 3 * 2 * 2, d1));
    final_head = register_module("final_head", conv(d1, 1, 1));
}

FeaturePyramid SegNetImpl::encode(const torch::Tensor& images) {
    if (images.size(2) % 32 != 0 || images.size(3) % 32 != 0)
        throw std::invalid_argument("encode: resolution not divisible by 32");
    FeaturePyramid py;
    py.f1e = stage1(images);
    py.f2e = stage2(py.f1e);
    py.f3e = stage3(py.f2e);
    py.fe = stage4(py.f3e);
    if (config.use_ipt) {
        // auxiliary half-resolution pass through the same stages
        auto half = F::interpolate(images, F::InterpolateFuncOptions()
                                               .size(std::vector<int64_t>{images.size(2) / 2,
                                                                          images.size(3) / 2})
                                               .mode(torch::kBilinear)
                                               .align_corners(false));
        auto h1 = stage1(half);
        auto h2 = stage2(h1);
        auto h3 = stage3(h2);
        auto h4 = stage4(h3);
        py.f1e = py.f1e + up2(h1);
        py.f2e = py.f2e + up2(h2);
        py.f3e = py.f3e + up2(h3);
        py.fe = py.fe + up2(h4);
    }
    py.f1l = lat1(py.f1e);
    py.f2l = lat2(py.f2e);
    py.f3l = lat3(py.f3e);
    if (config.use_cff) {
        // spatially-pooled deepest context broadcast into the laterals
        auto pooled = F::adaptive_avg_pool2d(py.fe, F::AdaptiveAvgPool2dFuncOptions(1));
        py.f1l = py.f1l + cff1(pooled);
        py.f2l = py.f2l + cff2(pooled);
        py.f3l = py.f3l + cff3(pooled);
    }
    return py;
}

torch::Tensor SegNetImpl::classify(const torch::Tensor& fe) {
    auto pooled = F::adaptive_avg_pool2d(fe, F::AdaptiveAvgPool2dFuncOptions(1)).flatten(1);
    return class_head(pooled);
}

torch::Tensor SegNetImpl::squeeze_bottleneck(const torch::Tensor& fe) { return bottleneck(fe); }

PredictionSet SegNetImpl::forward(const torch::Tensor& images) {
    const auto H = images.size(2), W = images.size(3);
    auto py = encode(images);
    PredictionSet preds;
    preds.logits = classify(py.fe);
    auto fd = squeeze_bottleneck(py.fe);  // stride 32

    // stage 3 @ stride 8
    auto f3d = up2(fd);                       // stride 16
    auto f3 = up2(f3d + py.f3l);              // stride 8
    auto out3 = block3(f3, batch_patch_stack(images, H / 8, W / 8));
    // stage 2 @ stride 4
    auto f2 = up2(out3.next_fd + py.f2l);
    auto out2 = block2(f2, batch_patch_stack(images, H / 4, W / 4));
    // stage 1 @ stride 2
    auto f1 = up2(out2.next_fd + py.f1l);
    auto out1 = block1(f1, batch_patch_stack(images, H / 2, W / 2));

    preds.final_map = torch::sigmoid(final_head(up2(out1.next_fd)));
    preds.stage_maps = {out3.stage_map, out2.stage_map, out1.stage_map};
    if (config.use_outref) preds.stage_grads = {out3.grad_map, out2.grad_map, out1.grad_map};
    preds.stage_attn = {out3.attention, out2.attention, out1.attention};
    return preds;
}

// ------------------------------------------------------------- checkpoints

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"stage_widths", c.stage_widths},
                {"height", c.height},
                {"width", c.width},
                {"num_classes", c.num_classes},
                {"use_rm", c.use_rm},
                {"use_inref", c.use_inref},
                {"use_outref", c.use_outref},
                {"use_cff", c.use_cff},
                {"use_ipt", c.use_ipt},
                {"use_offset_convs", c.use_offset_convs},
                {"outref_all_stages", c.outref_all_stages},
                {"rf_kernels", c.rf_kernels}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    j.at("stage_widths").get_to(c.stage_widths);
    j.at("height").get_to(c.height);
    j.at("width").get_to(c.width);
    j.at("num_classes").get_to(c.num_classes);
    j.at("use_rm").get_to(c.use_rm);
    j.at("use_inref").get_to(c.use_inref);
    j.at("use_outref").get_to(c.use_outref);
    j.at("use_cff").get_to(c.use_cff);
    j.at("use_ipt").get_to(c.use_ipt);
    j.at("use_offset_convs").get_to(c.use_offset_convs);
    j.at("outref_all_stages").get_to(c.outref_all_stages);
    j.at("rf_kernels").get_to(c.rf_kernels);
    return c;
}

}  // namespace

void save_checkpoint(const SegNet& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
    torch::serialize::OutputArchive archive;
    torch::serialize::OutputArchive params;
    const_cast<SegNet&>(model)->save(params);
    archive.write("params", params);
    json meta_j{{"version", meta.version},
                {"epoch", meta.epoch},
                {"rng_state", meta.rng_state},
                {"model_config", config_to_json(meta.model_config)}};
    archive.write("meta_json", meta_j.dump());
    archive.save_to(path.string());
}

static CheckpointMeta read_meta(torch::serialize::InputArchive& archive) {
    torch::IValue meta_str;
    archive.read("meta_json", meta_str);
    json j = json::parse(meta_str.toStringRef());
    if (!j.contains("version")) throw std::runtime_error("checkpoint missing version field");
    CheckpointMeta meta;
    meta.version = j.at("version").get<int>();
    meta.epoch = j.at("epoch").get<int>();
    meta.rng_state = j.at("rng_state").get<uint64_t>();
    meta.model_config = config_from_json(j.at("model_config"));
    return meta;
}

CheckpointMeta load_checkpoint(SegNet& model, const std::filesystem::path& path) {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    auto meta = read_meta(archive);
    torch::serialize::InputArchive params;
    archive.read("params", params);
    model->load(params);
    return meta;
}

CheckpointMeta peek_checkpoint(const std::filesystem::path& path) {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    return read_meta(archive);
}

}  // namespace biref
