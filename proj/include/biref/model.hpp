#ifndef BIREF_MODEL_HPP
#define BIREF_MODEL_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace biref {

struct ModelConfig {
    std::array<int, 4> stage_widths = {16, 32, 64, 96};
    int height = 128;        // base training resolution, divisible by 32
    int width = 128;
    int num_classes = 4;
    bool use_rm = true;      // multi-receptive-field reconstruction block
    bool use_inref = true;   // full-resolution patch stacking
    bool use_outref = true;  // gradient-referring attention
    bool use_cff = false;    // deepest feature broadcast into laterals
    bool use_ipt = false;    // auxiliary half-resolution encoding pass
    bool use_offset_convs = false;  // learned-offset sampling in RM branches
    bool outref_all_stages = true;  // emit gradient predictions at all stages
    std::vector<int> rf_kernels = {1, 3, 7};

    void validate() const;  // throws std::invalid_argument

    // Decoder width of stage i (i in {1,2,3}).
    int decoder_width(int stage) const { return stage_widths[stage - 1]; }
};

struct FeaturePyramid {
    torch::Tensor f1e, f2e, f3e;  // strides 4, 8, 16
    torch::Tensor fe;             // stride 32
    torch::Tensor f1l, f2l, f3l;  // laterals, channel-matched to decoder widths
};

struct PredictionSet {
    torch::Tensor final_map;                 // [B,1,H,W] in [0,1]
    std::vector<torch::Tensor> stage_maps;   // {M3,M2,M1}, ascending resolution
    std::vector<torch::Tensor> stage_grads;  // {G3,G2,G1} predicted gradients
    std::vector<torch::Tensor> stage_attn;   // {A3,A2,A1} attention maps
    torch::Tensor logits;                    // [B,C]
};

// Conv-BN-ReLU encoder stage; stride halves the resolution.
struct EncoderStageImpl : torch::nn::Module {
    EncoderStageImpl(int in_ch, int out_ch, int stride);
    torch::Tensor forward(const torch::Tensor& x);
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(EncoderStage);

// Dilated-branch bottleneck squeeze (dilations 1/2/4 + image pooling).
struct AsppBottleneckImpl : torch::nn::Module {
    AsppBottleneckImpl(int in_ch, int out_ch, bool with_pool_branch = true);
    torch::Tensor forward(const torch::Tensor& x);
    torch::nn::Conv2d b1{nullptr}, b2{nullptr}, b3{nullptr}, pool_conv{nullptr}, project{nullptr};
    torch::nn::BatchNorm2d bn{nullptr};
    bool with_pool;
};
TORCH_MODULE(AsppBottleneck);

// Multi-receptive-field reconstruction block: parallel 1/3/7 convolutions
// plus a pooled global branch, concatenated (f_theta) then projected (f_d').
// With use_rm=false falls back to a plain two-conv block whose hidden state
// stands in for f_theta.
struct ReconstructionBlockImpl : torch::nn::Module {
    ReconstructionBlockImpl(int in_ch, int branch_width, int out_ch,
                            std::vector<int> kernels, bool multi_rf, bool offset_sampling);
    // Returns {f_theta, f_d_prime}.
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x);

    torch::nn::ModuleList branches;
    torch::nn::Conv2d pool_conv{nullptr}, project{nullptr}, offset_head{nullptr};
    torch::nn::BatchNorm2d bn{nullptr};
    std::vector<int> kernel_sizes;
    int branch_w;
    bool multi_rf_;
    bool offset_;
};
TORCH_MODULE(ReconstructionBlock);

// Gradient branch of the outward reference: f_theta -> gradient feature ->
// (predicted gradient map, attention map). Attention is derived from the
// gradient feature, not from the predicted map.
struct OutwardReferenceImpl : torch::nn::Module {
    OutwardReferenceImpl(int theta_ch, int feat_ch);
    // Returns {g_hat, attention}, both single-channel in (0,1).
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& f_theta);
    torch::nn::Conv2d feat_conv{nullptr}, grad_head{nullptr}, attn_head{nullptr};
    torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(OutwardReference);

// One decoder stage: inward patch stacking, reconstruction block, outward
// gradient attention, intermediate prediction head.
struct BiRefBlockImpl : torch::nn::Module {
    BiRefBlockImpl(const ModelConfig& cfg, int stage, int in_ch, int patch_ch, int out_ch);

    struct Output {
        torch::Tensor next_fd;   // A * f_d'
        torch::Tensor stage_map; // M_i, sigmoid, stage resolution
        torch::Tensor grad_map;  // predicted gradient map
        torch::Tensor attention;
    };
    // fused: F_i^{d+}; patches: channel-stacked tiles aligned with fused
    // (ignored unless inref enabled).
    Output forward(const torch::Tensor& fused, const torch::Tensor& patches);

    ReconstructionBlock recon{nullptr};
    OutwardReference outref{nullptr};
    torch::nn::Conv2d map_head{nullptr};
    bool inref_, outref_on_;
    int patch_channels;
};
TORCH_MODULE(BiRefBlock);

// The full network: hierarchical encoder with classification head and
// squeezed bottleneck, plus three BiRef decoder stages and a final head.
struct SegNetImpl : torch::nn::Module {
    explicit SegNetImpl(ModelConfig cfg);

    FeaturePyramid encode(const torch::Tensor& images);
    torch::Tensor classify(const torch::Tensor& fe);
    torch::Tensor squeeze_bottleneck(const torch::Tensor& fe);
    PredictionSet forward(const torch::Tensor& images);

    ModelConfig config;

    EncoderStage stage1{nullptr}, stage2{nullptr}, stage3{nullptr}, stage4{nullptr};
    torch::nn::Conv2d lat1{nullptr}, lat2{nullptr}, lat3{nullptr};
    torch::nn::Conv2d cff1{nullptr}, cff2{nullptr}, cff3{nullptr};
    torch::nn::Linear class_head{nullptr};
    AsppBottleneck bottleneck{nullptr};
    BiRefBlock block3{nullptr}, block2{nullptr}, block1{nullptr};
    torch::nn::Conv2d final_head{nullptr};
};
TORCH_MODULE(SegNet);

// Self-describing checkpoint: parameters plus a JSON metadata record
// (format version, model config echo, epoch counter, RNG state).
struct CheckpointMeta {
    int version = 1;
    int epoch = 0;
    uint64_t rng_state = 0;
    ModelConfig model_config;
};

void save_checkpoint(const SegNet& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
CheckpointMeta load_checkpoint(SegNet& model, const std::filesystem::path& path);
// Reads only the metadata (constructs the model from the stored config).
CheckpointMeta peek_checkpoint(const std::filesystem::path& path);

}  // namespace biref

#endif
