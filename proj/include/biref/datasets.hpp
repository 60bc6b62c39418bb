#ifndef BIREF_DATASETS_HPP
#define BIREF_DATASETS_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace biref {

// One image/ground-truth pair. `image` is HxWx3 float in [0,1] (CHW torch
// tensor), `gt` is HxW float holding exactly {0,1}.
struct ImageSample {
    torch::Tensor image;   // [3,H,W] float32 in [0,1]
    torch::Tensor gt;      // [1,H,W] float32 in {0,1}
    int64_t category = 0;
    std::string id;
    std::filesystem::path source;  // empty for synthetic samples
};

struct Corpus {
    std::vector<ImageSample> samples;
    std::vector<std::string> categories;
    int height = 0;
    int width = 0;

    int64_t size() const { return static_cast<int64_t>(samples.size()); }
    int64_t num_categories() const { return static_cast<int64_t>(categories.size()); }
};

// Structure families of the synthetic corpus; the category id of a sample is
// its family index.
enum class StructureFamily : int { ThinCurve = 0, Grid = 1, Star = 2, BlobWithHoles = 3 };
inline constexpr int kNumStructureFamilies = 4;

struct SyntheticSpec {
    int count = 16;
    int height = 256;
    int width = 256;
    // Proportions of {thin-curve, grid, star, blob-with-holes}; must sum to 1.
    std::array<double, kNumStructureFamilies> mix = {0.25, 0.25, 0.25, 0.25};
    int min_stroke = 1;
    int max_stroke = 3;
    uint64_t seed = 0;

    void validate() const;  // throws std::invalid_argument
};

struct Batch {
    torch::Tensor images;  // [B,3,H,W]
    torch::Tensor gts;     // [B,1,H,W]
    torch::Tensor labels;  // [B] int64
    std::vector<std::string> ids;
};

// Deterministic synthetic corpus: pure function of the spec.
Corpus generate_synthetic_corpus(const SyntheticSpec& spec);

// Loads `root/split/{im,gt}` pairs matched by file stem. gt binarized at
// 128/255. Optional manifest `root/class_manifest.txt` with
// `classname<TAB>id` lines maps id prefixes (text before the last '#') to
// category ids; without it every sample gets class 0.
Corpus load_corpus(const std::filesystem::path& root, const std::string& split);

// Writes a corpus in the same on-disk layout load_corpus reads.
void save_corpus(const Corpus& corpus, const std::filesystem::path& root, const std::string& split);

// Assembles a batch at the given resolution. Images are resized bilinearly,
// gts nearest-neighbor and re-binarized. When flip is true each sample is
// mirrored with probability 0.5 drawn from `rng`.
Batch make_batch(const Corpus& corpus, const std::vector<int64_t>& indices,
                 int height, int width, bool flip, std::mt19937_64& rng);

}  // namespace biref

#endif
