#ifndef BIREF_REFERENCES_HPP
#define BIREF_REFERENCES_HPP

#include <torch/torch.h>

namespace biref {

// Sobel-magnitude gradient map of an image, normalized to [0,1].
// Accepts [3,H,W], [1,H,W] or [H,W]; converts to grayscale by channel mean,
// applies 3x3 Sobel in x and y (replicate border) and divides the magnitude
// by the maximum response of a unit step edge so a hard 0->1 edge maps to ~1.
torch::Tensor gradient_map(const torch::Tensor& image);

// Disjoint tiling of an image into patches of a fixed size, channel-stacked.
struct PatchGrid {
    torch::Tensor patches;  // [N, C, h, w], row-major tile order
    int rows = 0;
    int cols = 0;
    int orig_height = 0;    // size before padding
    int orig_width = 0;
    int pad_bottom = 0;     // reflect padding applied before tiling
    int pad_right = 0;

    // [C*N, h, w]: tile k occupies channels [k*C, (k+1)*C), k row-major.
    torch::Tensor stacked() const;
};

// Crops `image` ([C,H,W]) into tiles of size (tile_h, tile_w). Non-divisible
// sizes are reflect-padded on the bottom/right; the pad amounts are recorded
// in the grid.
PatchGrid patchify(const torch::Tensor& image, int tile_h, int tile_w);

// Exact inverse of patchify; strips any recorded padding.
torch::Tensor unpatchify(const PatchGrid& grid);

// Morphological dilation of a binary map ([H,W] or [1,H,W], values {0,1})
// with a square structuring element of side 2*radius+1.
torch::Tensor dilate(const torch::Tensor& map, int radius);

struct MaskedGradient {
    torch::Tensor values;  // gradient restricted to the mask
    torch::Tensor mask;    // dilated binarized prediction
};

// Removes gradients outside the dilated prediction: mask =
// dilate(pred > 0.5, radius), values = grad * mask.
MaskedGradient masked_gradient(const torch::Tensor& grad, const torch::Tensor& pred, int radius);

}  // namespace biref

#endif
