#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <random>

#include "biref/references.hpp"

// doctest last so its CHECK macro wins over c10's
#include <doctest.h>

using namespace biref;

TEST_CASE("gradient map of a constant image is zero") {
    auto img = torch::full({3, 16, 16}, 0.37);
    auto g = gradient_map(img);
    CHECK(g.sizes() == torch::IntArrayRef({16, 16}));
    CHECK(g.abs().max().item<double>() == doctest::Approx(0.0));
}

TEST_CASE("gradient map of a hard vertical step edge peaks at one") {
    // gray 0 on the left half, 1 on the right; Sobel x response at the edge
    // columns is 4, and the map normalizes by that
    auto img = torch::zeros({1, 8, 8});
    img.index_put_({0, torch::indexing::Slice(), torch::indexing::Slice(4, 8)}, 1.0);
    auto g = gradient_map(img);
    CHECK(g.sizes() == torch::IntArrayRef({8, 8}));
    // edge columns 3 and 4 read 1, interior reads 0
    CHECK(g[4][3].item<double>() == doctest::Approx(1.0));
    CHECK(g[4][4].item<double>() == doctest::Approx(1.0));
    CHECK(g[4][1].item<double>() == doctest::Approx(0.0));
    CHECK(g[4][6].item<double>() == doctest::Approx(0.0));
    CHECK(g.max().item<double>() <= 1.0 + 1e-6);
}

TEST_CASE("gradient map hand check on a 3x3 ramp") {
    // gray(r,c) = c/4: Sobel x = 4*(gray(c+1)-gray(c-1)) = 2 at the center,
    // so the normalized map reads 2/4 = 0.5
    auto img = torch::tensor({{0.0, 0.25, 0.5},
                              {0.0, 0.25, 0.5},
                              {0.0, 0.25, 0.5}}).unsqueeze(0);
    auto g = gradient_map(img);
    CHECK(g[1][1].item<double>() == doctest::Approx(0.5));
}

TEST_CASE("patchify tiles exactly and unpatchify inverts, 100 random cases") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        int c = 1 + int(rng() % 4);
        int th = 2 + int(rng() % 7);
        int tw = 2 + int(rng() % 7);
        int h = th * (1 + int(rng() % 4)) + int(rng() % th);  // often non-divisible
        int w = tw * (1 + int(rng() % 4)) + int(rng() % tw);
        torch::manual_seed(trial);
        auto img = torch::rand({c, h, w});
        auto grid = patchify(img, th, tw);
        CHECK(grid.patches.size(1) == c);
        CHECK(grid.patches.size(2) == th);
        CHECK(grid.patches.size(3) == tw);
        CHECK(grid.rows * grid.cols == grid.patches.size(0));
        auto back = unpatchify(grid);
        REQUIRE(back.sizes() == img.sizes());
        CHECK(torch::equal(back, img));  // bit-exact
    }
}

TEST_CASE("patch order is row-major and stacking matches the documented layout") {
    // value encodes its tile: v(r,c) = tile_row*10 + tile_col
    auto img = torch::zeros({2, 4, 6});
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 6; ++c) {
            img[0][r][c] = (r / 2) * 10 + (c / 2);
            img[1][r][c] = 100 + (r / 2) * 10 + (c / 2);
        }
    auto grid = patchify(img, 2, 2);
    REQUIRE(grid.rows == 2);
    REQUIRE(grid.cols == 3);
    int k = 0;
    for (int tr = 0; tr < 2; ++tr)
        for (int tc = 0; tc < 3; ++tc, ++k) {
            CHECK(grid.patches[k][0][0][0].item<double>() == doctest::Approx(tr * 10 + tc));
            CHECK(grid.patches[k][1][0][0].item<double>() ==
                  doctest::Approx(100 + tr * 10 + tc));
        }
    auto stacked = grid.stacked();
    REQUIRE(stacked.sizes() == torch::IntArrayRef({2 * 6, 2, 2}));
    // tile k occupies channels [2k, 2k+2)
    CHECK(torch::equal(stacked.index({torch::indexing::Slice(2, 4)}), grid.patches[1]));
}

TEST_CASE("patchify channel count matches the quarter-scale example") {
    // a 3-channel image tiled into a 4x4 grid stacks to 48 channels
    auto img = torch::rand({3, 64, 64});
    auto grid = patchify(img, 16, 16);
    CHECK(grid.rows == 4);
    CHECK(grid.cols == 4);
    CHECK(grid.stacked().size(0) == 48);
}

TEST_CASE("non-divisible sizes record their padding and still invert") {
    auto img = torch::rand({3, 32, 48});
    auto grid = patchify(img, 5, 7);
    CHECK(grid.pad_bottom == 3);   // 35 - 32
    CHECK(grid.pad_right == 1);    // 49 - 48
    CHECK(grid.rows == 7);
    CHECK(grid.cols == 7);
    CHECK(torch::equal(unpatchify(grid), img));
}

TEST_CASE("dilation grows a point into a square and is monotone") {
    auto m = torch::zeros({9, 9});
    m[4][4] = 1.0;
    auto d1 = dilate(m, 1);
    CHECK(d1.sum().item<double>() == doctest::Approx(9.0));
    CHECK(d1[3][3].item<double>() == doctest::Approx(1.0));
    CHECK(d1[2][4].item<double>() == doctest::Approx(0.0));
    auto d2 = dilate(m, 2);
    CHECK(d2.sum().item<double>() == doctest::Approx(25.0));
    // monotone: d1 subset of d2
    CHECK((d2 - d1).min().item<double>() >= 0.0);
    // radius 0 is the identity
    CHECK(torch::equal(dilate(m, 0), m));
}

TEST_CASE("dilation clips at the border") {
    auto m = torch::zeros({5, 5});
    m[0][0] = 1.0;
    CHECK(dilate(m, 1).sum().item<double>() == doctest::Approx(4.0));
}

TEST_CASE("masked gradient zeroes support away from the prediction") {
    auto grad = torch::ones({1, 9, 9});
    auto pred = torch::zeros({1, 9, 9});
    pred[0][4][4] = 0.9;
    auto mg = masked_gradient(grad, pred, 1);
    CHECK(mg.mask.sum().item<double>() == doctest::Approx(9.0));
    CHECK(mg.values.sum().item<double>() == doctest::Approx(9.0));
    CHECK(mg.values[0][0].item<double>() == doctest::Approx(0.0));

    // sub-threshold predictions contribute nothing
    auto weak = torch::full({1, 9, 9}, 0.4);
    auto mg2 = masked_gradient(grad, weak, 2);
    CHECK(mg2.values.abs().sum().item<double>() == doctest::Approx(0.0));
}

TEST_CASE("gradient map is translation equivariant away from borders") {
    torch::manual_seed(0);
    auto base = torch::rand({1, 12, 12});
    auto img = torch::zeros({1, 20, 20});
    img.index_put_({0, torch::indexing::Slice(2, 14), torch::indexing::Slice(2, 14)}, base[0]);
    auto shifted = torch::zeros({1, 20, 20});
    shifted.index_put_({0, torch::indexing::Slice(5, 17), torch::indexing::Slice(5, 17)},
                       base[0]);
    auto g1 = gradient_map(img);
    auto g2 = gradient_map(shifted);
    auto inner1 = g1.index({torch::indexing::Slice(4, 12), torch::indexing::Slice(4, 12)});
    auto inner2 = g2.index({torch::indexing::Slice(7, 15), torch::indexing::Slice(7, 15)});
    CHECK((inner1 - inner2).abs().max().item<double>() < 1e-6);
}
