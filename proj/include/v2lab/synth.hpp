#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "v2lab/config.hpp"
#include "v2lab/geometry.hpp"
#include "v2lab/image.hpp"
#include "v2lab/mask.hpp"

namespace v2lab {

/// Thrown when object placement cannot satisfy the visibility constraints.
struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SceneConfig {
    int image_size = 64;
    int n_objects = 3;
    double texture_granularity = 7.0;  // noise feature size in pixels
    double rotation_range = 25.0;      // degrees, sampled in [-r, r]
    double scale_range = 1.12;         // ratio bound; sampled log-uniform in [1/r, r]
    double translation_range = 8.0;    // pixels, per axis, sampled in [-t, t]
    double photometric_jitter = 0.12;  // per-channel gain/bias amplitude
    std::uint64_t seed = 0;

    void validate() const;

    static SceneConfig from_config(const KeyValueConfig& kv);
    KeyValueConfig to_config() const;
};

/// A query/target view pair of the same scene related by `transform`
/// (query pixel coordinates -> target pixel coordinates).
struct ViewPair {
    Image query_image;
    Image target_image;
    Mask query_mask;
    Mask target_mask;
    Affine2 transform;
    std::uint64_t seed = 0;
    int object_index = 0;
};

/// Renders a two-view pair with a transform sampled from the config ranges.
ViewPair generate_pair(const SceneConfig& cfg);

/// Same scene and object choice, but with a caller-supplied view transform.
ViewPair generate_pair_with_transform(const SceneConfig& cfg, const Affine2& transform);

/// Maps image-pixel points through `t`. Throws if a point is not in the
/// ImagePixels frame.
PointSet warp_points(const PointSet& points, const Affine2& t);

/// Nearest-neighbor warp of a binary mask into an out_w x out_h raster:
/// out(p) = mask(round(t^-1(p))), zero outside the source bounds.
Mask warp_mask_nn(const Mask& mask, const Affine2& t, int out_w, int out_h);

/// On-disk layout of one pair inside a directory:
///   query.ppm target.ppm query_mask.pgm target_mask.pgm transform.txt meta.txt
void write_view_pair(const ViewPair& pair, const std::string& dir);
ViewPair read_view_pair(const std::string& dir);

Affine2 read_transform_file(const std::string& path);
void write_transform_file(const Affine2& t, const std::string& path);

/// Smooth deterministic value noise in [0, 1], continuous over the plane.
double value_noise(double x, double y, std::uint64_t seed);

}  // namespace v2lab
