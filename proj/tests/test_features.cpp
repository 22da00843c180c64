#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "v2lab/features.hpp"
#include "v2lab/rng.hpp"
#include "v2lab/synth.hpp"

using namespace v2lab;

namespace {
std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Image random_image(int w, int h, std::uint64_t seed) {
    Image img(w, h, 3);
    Rng rng(seed);
    for (float& v : img.data) v = static_cast<float>(rng.uniform());
    return img;
}
}  // namespace

TEST_CASE("grid geometry and patch centers") {
    const Image img = random_image(64, 64, 1);
    const FeatureGrid g = encode_patches(img, visual_encoder_settings());
    CHECK(g.rows == 8);
    CHECK(g.cols == 8);
    CHECK(g.dim == 64);
    CHECK(g.patch_size == 8);
    CHECK(g.orig_width == 64);
    CHECK(g.orig_height == 64);

    double x = 0.0, y = 0.0;
    g.patch_center(0, x, y);
    CHECK(x == doctest::Approx(4.0));
    CHECK(y == doctest::Approx(4.0));
    g.patch_center(g.cols + 2, x, y);  // row 1, col 2
    CHECK(x == doctest::Approx(20.0));
    CHECK(y == doctest::Approx(12.0));
}

TEST_CASE("descriptors are unit norm and deterministic") {
    const Image img = random_image(64, 48, 2);
    const FeatureGrid a = encode_patches(img, 8, 32, 555);
    const FeatureGrid b = encode_patches(img, 8, 32, 555);
    CHECK(a.data == b.data);

    for (int p = 0; p < a.num_patches(); ++p) {
        const std::vector<float> d = a.descriptor(p);
        double norm = 0.0;
        for (float v : d) norm += static_cast<double>(v) * v;
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));
    }

    // a different projection seed changes the features
    const FeatureGrid c = encode_patches(img, 8, 32, 556);
    CHECK_FALSE(a.data == c.data);
}

TEST_CASE("identical pixel content gives identical descriptors") {
    Image img(32, 32, 3);
    for (float& v : img.data) v = 0.25f;
    const FeatureGrid g = encode_patches(img, 8, 16, 9);
    const std::vector<float> first = g.descriptor(0);
    for (int p = 1; p < g.num_patches(); ++p) {
        CHECK(g.descriptor(p) == first);
    }
}

TEST_CASE("the two standing encoder roles differ") {
    const EncoderSettings vis = visual_encoder_settings();
    const EncoderSettings anc = anchor_encoder_settings();
    CHECK(vis.dim > anc.dim);
    CHECK(vis.seed != anc.seed);
}

TEST_CASE("feature grid container round trip") {
    const Image img = random_image(40, 24, 3);
    const FeatureGrid g = encode_patches(img, 8, 16, 1234);
    const std::string path = temp_path("v2lab_grid_test.v2fg");
    save_feature_grid(g, path);
    const FeatureGrid back = load_feature_grid(path);
    CHECK(back.dim == g.dim);
    CHECK(back.rows == g.rows);
    CHECK(back.cols == g.cols);
    CHECK(back.patch_size == g.patch_size);
    CHECK(back.orig_width == g.orig_width);
    CHECK(back.orig_height == g.orig_height);
    CHECK(back.data == g.data);
    std::filesystem::remove(path);
}

TEST_CASE("container rejects corruption") {
    const Image img = random_image(16, 16, 4);
    const FeatureGrid g = encode_patches(img, 8, 8, 7);
    const std::string path = temp_path("v2lab_grid_corrupt.v2fg");
    save_feature_grid(g, path);

    // truncate the payload
    const auto full_size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full_size - 5);
    CHECK_THROWS_AS(load_feature_grid(path), std::runtime_error);

    // break the magic
    save_feature_grid(g, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    CHECK_THROWS_AS(load_feature_grid(path), std::runtime_error);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(load_feature_grid(temp_path("v2lab_grid_missing.v2fg")), std::runtime_error);
}

TEST_CASE("mask projection thresholds patch coverage") {
    // 16x16 image, patch 8 -> 2x2 grid of patches
    const Image img = random_image(16, 16, 5);
    const FeatureGrid g = encode_patches(img, 8, 8, 7);

    Mask m(16, 16);
    // fill patch (0,0) completely and half of patch (1,0): coverage 1.0 and 0.5
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) m.set(x, y, 1);
    for (int y = 0; y < 4; ++y)
        for (int x = 8; x < 16; ++x) m.set(x, y, 1);

    CHECK(project_mask_to_grid(m, g, 0.5) == std::vector<int>{0, 1});
    CHECK(project_mask_to_grid(m, g, 0.6) == std::vector<int>{0});
    CHECK(project_mask_to_grid(m, g, 0.25) == std::vector<int>{0, 1});
    CHECK(project_mask_to_grid(Mask(16, 16), g, 0.5).empty());
}
