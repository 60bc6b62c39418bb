#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <filesystem>
#include <random>
#include <set>

#include "biref/datasets.hpp"

// doctest last so its CHECK macro wins over c10's
#include <doctest.h>

using namespace biref;
namespace fs = std::filesystem;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.count = 12;
    spec.height = 64;
    spec.width = 64;
    spec.seed = 7;
    return spec;
}

}  // namespace

TEST_CASE("spec validation rejects bad inputs") {
    SyntheticSpec spec = small_spec();
    CHECK_NOTHROW(spec.validate());
    spec.count = 0;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = small_spec();
    spec.mix = {0.5, 0.5, 0.5, 0.5};
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = small_spec();
    spec.min_stroke = 4;
    spec.max_stroke = 2;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("synthetic corpus shape and value ranges") {
    auto corpus = generate_synthetic_corpus(small_spec());
    REQUIRE(corpus.size() == 12);
    CHECK(corpus.num_categories() == kNumStructureFamilies);
    for (const auto& s : corpus.samples) {
        REQUIRE(s.image.sizes() == torch::IntArrayRef({3, 64, 64}));
        REQUIRE(s.gt.sizes() == torch::IntArrayRef({1, 64, 64}));
        CHECK(s.image.min().item<float>() >= 0.0f);
        CHECK(s.image.max().item<float>() <= 1.0f);
        // gt holds exactly {0,1}
        auto gt = s.gt;
        CHECK(gt.eq(0).logical_or(gt.eq(1)).all().item<bool>());
        CHECK(gt.sum().item<float>() > 0.0f);  // never an empty mask
        CHECK(s.category >= 0);
        CHECK(s.category < kNumStructureFamilies);
    }
}

TEST_CASE("generation is a pure function of the spec") {
    auto a = generate_synthetic_corpus(small_spec());
    auto b = generate_synthetic_corpus(small_spec());
    for (int64_t i = 0; i < a.size(); ++i) {
        CHECK(torch::equal(a.samples[i].image, b.samples[i].image));
        CHECK(torch::equal(a.samples[i].gt, b.samples[i].gt));
        CHECK(a.samples[i].id == b.samples[i].id);
    }
    auto spec2 = small_spec();
    spec2.seed = 8;
    auto c = generate_synthetic_corpus(spec2);
    bool any_diff = false;
    for (int64_t i = 0; i < a.size(); ++i)
        if (!torch::equal(a.samples[i].image, c.samples[i].image)) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("family mix follows the requested proportions") {
    SyntheticSpec spec = small_spec();
    spec.count = 40;
    spec.mix = {0.5, 0.25, 0.25, 0.0};
    auto corpus = generate_synthetic_corpus(spec);
    std::array<int, kNumStructureFamilies> counts{};
    for (const auto& s : corpus.samples) counts[s.category]++;
    CHECK(counts[0] == 20);
    CHECK(counts[1] == 10);
    CHECK(counts[2] == 10);
    CHECK(counts[3] == 0);
}

TEST_CASE("structure families differ in mask statistics") {
    SyntheticSpec spec = small_spec();
    spec.count = 40;
    spec.height = spec.width = 128;
    auto corpus = generate_synthetic_corpus(spec);
    std::array<double, kNumStructureFamilies> fg_frac{};
    std::array<int, kNumStructureFamilies> n{};
    for (const auto& s : corpus.samples) {
        fg_frac[s.category] += s.gt.mean().item<float>();
        n[s.category]++;
    }
    for (int f = 0; f < kNumStructureFamilies; ++f) {
        REQUIRE(n[f] > 0);
        fg_frac[f] /= n[f];
    }
    // Thin curves cover far less area than hole-punched blobs.
    CHECK(fg_frac[int(StructureFamily::ThinCurve)] <
          fg_frac[int(StructureFamily::BlobWithHoles)]);
}

TEST_CASE("save and load round-trip preserves masks exactly") {
    auto corpus = generate_synthetic_corpus(small_spec());
    fs::path root = fs::temp_directory_path() / "biref_ds_roundtrip";
    fs::remove_all(root);
    save_corpus(corpus, root, "train");
    auto loaded = load_corpus(root, "train");
    REQUIRE(loaded.size() == corpus.size());
    CHECK(loaded.num_categories() == corpus.num_categories());
    for (int64_t i = 0; i < corpus.size(); ++i) {
        CHECK(torch::equal(loaded.samples[i].gt, corpus.samples[i].gt));
        // images pass through 8-bit PNG: allow one quantization step
        CHECK((loaded.samples[i].image - corpus.samples[i].image)
                  .abs().max().item<float>() <= 1.0f / 255.0f + 1e-6f);
        CHECK(loaded.samples[i].category == corpus.samples[i].category);
    }
    fs::remove_all(root);
}

TEST_CASE("load_corpus reports missing pairs") {
    auto corpus = generate_synthetic_corpus(small_spec());
    fs::path root = fs::temp_directory_path() / "biref_ds_missing";
    fs::remove_all(root);
    save_corpus(corpus, root, "train");
    fs::remove(root / "train" / "gt" / (corpus.samples[0].id + ".png"));
    CHECK_THROWS_AS(load_corpus(root, "train"), std::runtime_error);
    fs::remove_all(root);
}

TEST_CASE("make_batch resizes, keeps masks binary and flips deterministically") {
    auto corpus = generate_synthetic_corpus(small_spec());
    std::mt19937_64 rng(3);
    auto b = make_batch(corpus, {0, 1, 2, 3}, 32, 32, false, rng);
    CHECK(b.images.sizes() == torch::IntArrayRef({4, 3, 32, 32}));
    CHECK(b.gts.sizes() == torch::IntArrayRef({4, 1, 32, 32}));
    CHECK(b.labels.sizes() == torch::IntArrayRef({4}));
    CHECK(b.gts.eq(0).logical_or(b.gts.eq(1)).all().item<bool>());
    CHECK(b.ids.size() == 4);

    std::mt19937_64 r1(5), r2(5);
    auto f1 = make_batch(corpus, {0, 1, 2, 3}, 32, 32, true, r1);
    auto f2 = make_batch(corpus, {0, 1, 2, 3}, 32, 32, true, r2);
    CHECK(torch::equal(f1.images, f2.images));
    CHECK(torch::equal(f1.gts, f2.gts));

    // flipping is a mirror: every flipped sample equals flip(non-flipped)
    for (int64_t i = 0; i < 4; ++i) {
        auto plain = b.images[i];
        auto got = f1.images[i];
        bool same = torch::equal(got, plain);
        bool mirrored = torch::equal(got, plain.flip({2}));
        CHECK((same || mirrored));
        if (mirrored) CHECK(torch::equal(f1.gts[i], b.gts[i].flip({2})));
    }
}

TEST_CASE("class manifest maps stems to category ids") {
    auto corpus = generate_synthetic_corpus(small_spec());
    fs::path root = fs::temp_directory_path() / "biref_ds_manifest";
    fs::remove_all(root);
    save_corpus(corpus, root, "val");
    auto loaded = load_corpus(root, "val");
    std::set<int64_t> cats;
    for (const auto& s : loaded.samples) cats.insert(s.category);
    CHECK(cats.size() > 1);  // manifest written by save_corpus restores classes
    for (int64_t i = 0; i < corpus.size(); ++i)
        CHECK(loaded.samples[i].category == corpus.samples[i].category);
    fs::remove_all(root);
}
