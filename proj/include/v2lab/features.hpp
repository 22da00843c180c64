#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "v2lab/image.hpp"
#include "v2lab/mask.hpp"

namespace v2lab {

/// Patch-level feature tensor for one view, stored dim-major (F x H x W)
/// together with the image-space geometry it was computed from.
struct FeatureGrid {
    int dim = 0;
    int rows = 0;
    int cols = 0;
    int patch_size = 0;
    int orig_height = 0;
    int orig_width = 0;
    std::vector<float> data;  // data[(f * rows + r) * cols + c]

    float value(int f, int r, int c) const {
        return data[(static_cast<std::size_t>(f) * rows + r) * cols + c];
    }
    void set_value(int f, int r, int c, float v) {
        data[(static_cast<std::size_t>(f) * rows + r) * cols + c] = v;
    }
    int num_patches() const { return rows * cols; }

    /// Copy of one patch descriptor, indexed by flattened patch id r*cols+c.
    std::vector<float> descriptor(int patch_index) const;

    /// Pixel-space center of a patch (x = (c+0.5)*patch_size, same for y).
    void patch_center(int patch_index, double& x, double& y) const;
};

/// Synthetic encoder settings: a fixed seeded random projection of each
/// patch's raw pixel block, L2-normalized. Two standing roles are used
/// throughout the pipeline — a decoder-facing grid with wide descriptors
/// and a matching-facing grid with compact ones.
struct EncoderSettings {
    int patch_size = 8;
    int dim = 64;
    std::uint64_t seed = 0x76326c6162666561ull;
};

/// Decoder-facing features: wide descriptors.
EncoderSettings visual_encoder_settings();
/// Matching-facing features: compact descriptors.
EncoderSettings anchor_encoder_settings();

/// Per-patch descriptor = seeded random projection of the patch's raw pixel
/// block (zero-padded outside the image), L2-normalized. Deterministic, and
/// position-independent: identical pixel content gives identical descriptors.
FeatureGrid encode_patches(const Image& image, int patch_size, int dim,
                           std::uint64_t projection_seed);
FeatureGrid encode_patches(const Image& image, const EncoderSettings& settings);

/// `.v2fg` container: "V2FG", u32 version=1, then u32 dim/rows/cols/
/// patch_size/orig_height/orig_width, then float32 little-endian payload.
void save_feature_grid(const FeatureGrid& grid, const std::string& path);
FeatureGrid load_feature_grid(const std::string& path);

/// Flattened indices of patches whose in-image foreground fraction is
/// >= threshold, ascending.
std::vector<int> project_mask_to_grid(const Mask& mask, const FeatureGrid& grid, double threshold);

}  // namespace v2lab
