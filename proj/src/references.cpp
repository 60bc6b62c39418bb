#include "biref/references.hpp"

#include <stdexcept>

namespace biref {

namespace F = torch::nn::functional;

namespace {

torch::Tensor to_gray_2d(const torch::Tensor& image) {
    if (image.dim() == 2) return image;
    if (image.dim() == 3) return image.mean(0);
    throw std::invalid_argument("gradient_map: expected [H,W], [1,H,W] or [3,H,W]");
}

}  // namespace

torch::Tensor gradient_map(const torch::Tensor& image) {
    auto gray = to_gray_2d(image);
    if (gray.size(0) < 3 || gray.size(1) < 3)
        throw std::invalid_argument("gradient_map: image smaller than the 3x3 kernel");
    auto opts = torch::TensorOptions().dtype(gray.dtype());
    auto kx = torch::tensor({{-1.f, 0.f, 1.f}, {-2.f, 0.f, 2.f}, {-1.f, 0.f, 1.f}}, opts)
                  .view({1, 1, 3, 3});
    auto ky = kx.transpose(2, 3).contiguous();
    auto x = gray.unsqueeze(0).unsqueeze(0);
    x = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
    auto gx = F::conv2d(x, kx);
    auto gy = F::conv2d(x, ky);
    // a unit step edge yields |g| = 4; normalize by it and clip
    auto mag = torch::sqrt(gx * gx + gy * gy) / 4.0;
    return mag.clamp(0.0, 1.0).squeeze(0).squeeze(0);
}

torch::Tensor PatchGrid::stacked() const {
    const auto n = patches.size(0), c = patches.size(1);
    return patches.reshape({n * c, patches.size(2), patches.size(3)});
}

PatchGrid patchify(const torch::Tensor& image, int tile_h, int tile_w) {
    if (image.dim() != 3) throw std::invalid_argument("patchify: expected [C,H,W]");
    const int C = int(image.size(0)), H = int(image.size(1)), W = int(image.size(2));
    if (tile_h <= 0 || tile_w <= 0 || tile_h > H || tile_w > W)
        throw std::invalid_argument("patchify: tile size must be in [1, image size]");

    PatchGrid grid;
    grid.orig_height = H;
    grid.orig_width = W;
    grid.pad_bottom = (tile_h - H % tile_h) % tile_h;
    grid.pad_right = (tile_w - W % tile_w) % tile_w;

    auto x = image;
    if (grid.pad_bottom || grid.pad_right)
        x = F::pad(x.unsqueeze(0),
                   F::PadFuncOptions({0, grid.pad_right, 0, grid.pad_bottom}).mode(torch::kReflect))
                .squeeze(0);
    grid.rows = int(x.size(1)) / tile_h;
    grid.cols = int(x.size(2)) / tile_w;
    // [C,R,h,S,w] -> [R,S,C,h,w] -> [N,C,h,w], row-major tiles
    grid.patches = x.view({C, grid.rows, tile_h, grid.cols, tile_w})
                       .permute({1, 3, 0, 2, 4})
                       .reshape({int64_t(grid.rows) * grid.cols, C, tile_h, tile_w})
                       .contiguous();
    return grid;
}

torch::Tensor unpatchify(const PatchGrid& grid) {
    const auto& p = grid.patches;
    if (p.dim() != 4 || p.size(0) != int64_t(grid.rows) * grid.cols)
        throw std::invalid_argument("unpatchify: grid metadata inconsistent with patches");
    const int C = int(p.size(1)), h = int(p.size(2)), w = int(p.size(3));
    auto img = p.view({grid.rows, grid.cols, C, h, w})
                   .permute({2, 0, 3, 1, 4})
                   .reshape({C, int64_t(grid.rows) * h, int64_t(grid.cols) * w});
    return img.index({torch::indexing::Slice(),
                      torch::indexing::Slice(0, grid.orig_height),
                      torch::indexing::Slice(0, grid.orig_width)})
        .contiguous();
}

torch::Tensor dilate(const torch::Tensor& map, int radius) {
    if (radius < 0) throw std::invalid_argument("dilate: radius must be >= 0");
    auto x = map;
    bool had_channel = false;
    if (x.dim() == 3) {
        x = x.squeeze(0);
        had_channel = true;
    }
    if (x.dim() != 2) throw std::invalid_argument("dilate: expected [H,W] or [1,H,W]");
    auto binary = (x > 0.5).to(torch::kFloat32);
    if (radius > 0)
        binary = F::max_pool2d(binary.unsqueeze(0).unsqueeze(0),
                               F::MaxPool2dFuncOptions(2 * radius + 1).stride(1).padding(radius))
                     .squeeze(0)
                     .squeeze(0);
    return had_channel ? binary.unsqueeze(0) : binary;
}

MaskedGradient masked_gradient(const torch::Tensor& grad, const torch::Tensor& pred, int radius) {
    auto g = grad.dim() == 3 ? grad.squeeze(0) : grad;
    auto p = pred.dim() == 3 ? pred.squeeze(0) : pred;
    if (g.sizes() != p.sizes())
        throw std::invalid_argument("masked_gradient: gradient/prediction size mismatch");
    MaskedGradient out;
    out.mask = dilate((p >= 0.5).to(torch::kFloat32), radius);
    out.values = g * out.mask;
    return out;
}

}  // namespace biref
