#include "v2lab/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "v2lab/rng.hpp"

namespace v2lab {
namespace {

constexpr std::uint64_t kSaltPlacement = 0x706c6163656d6e74ull;
constexpr std::uint64_t kSaltTransform = 0x7472616e73666f72ull;
constexpr std::uint64_t kSaltJitter = 0x6a69747465720000ull;
constexpr std::uint64_t kSaltPick = 0x7069636b00000000ull;
constexpr std::uint64_t kSaltTexture = 0x7465787475726500ull;

double splitmix_unit(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z = z ^ (z >> 31);
    return static_cast<double>(z >> 11) * 0x1.0p-53;
}

double lattice_value(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
    const std::uint64_t ux = static_cast<std::uint64_t>(ix) * 0xC2B2AE3D27D4EB4Full;
    const std::uint64_t uy = static_cast<std::uint64_t>(iy) * 0x165667B19E3779F9ull;
    return splitmix_unit(seed ^ ux ^ uy);
}

struct Rgb {
    double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
    const double i = std::floor(h * 6.0);
    const double f = h * 6.0 - i;
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - f * s);
    const double t = v * (1.0 - (1.0 - f) * s);
    switch (static_cast<int>(i) % 6) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

/// One textured convex blob: ellipse (even index) or superellipse (odd).
struct SceneObject {
    double cx = 0.0, cy = 0.0;
    double rx = 1.0, ry = 1.0;
    double angle = 0.0;  // orientation of the local frame
    bool boxy = false;
    Rgb base{0.5, 0.5, 0.5};
    std::uint64_t texture_seed = 0;

    bool inside(double x, double y) const {
        const double dx = x - cx;
        const double dy = y - cy;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double u = (ca * dx + sa * dy) / rx;
        const double v = (-sa * dx + ca * dy) / ry;
        if (boxy) {
            const double u2 = u * u, v2 = v * v;
            return u2 * u2 + v2 * v2 <= 1.0;
        }
        return u * u + v * v <= 1.0;
    }

    double bound_radius() const { return std::max(rx, ry); }
};

struct Scene {
    std::vector<SceneObject> objects;  // later entries drawn on top
    std::uint64_t background_seed = 0;
    double granularity = 7.0;

    /// Topmost object covering (x, y), or -1 for background.
    int topmost(double x, double y) const {
        for (int k = static_cast<int>(objects.size()) - 1; k >= 0; --k) {
            if (objects[static_cast<std::size_t>(k)].inside(x, y)) return k;
        }
        return -1;
    }

    Rgb color_at(double x, double y) const {
        const int k = topmost(x, y);
        if (k < 0) {
            const double g = granularity * 2.0;
            const double n = value_noise(x / g, y / g, background_seed);
            const double base = 0.16 + 0.08 * (n - 0.5);
            return {base, base + 0.02, base + 0.05};
        }
        const SceneObject& ob = objects[static_cast<std::size_t>(k)];
        Rgb c = ob.base;
        const double g = granularity;
        double* comp[3] = {&c.r, &c.g, &c.b};
        for (int ch = 0; ch < 3; ++ch) {
            const double n = value_noise(x / g + 17.0 * ch, y / g + 31.0 * ch, ob.texture_seed);
            *comp[ch] = std::clamp(*comp[ch] + 0.30 * (n - 0.5), 0.0, 1.0);
        }
        return c;
    }
};

float quantize8(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<float>(std::lround(v * 255.0) / 255.0);
}

Scene build_scene(const SceneConfig& cfg) {
    Scene scene;
    scene.background_seed = mix_seed(cfg.seed, kSaltTexture);
    scene.granularity = cfg.texture_granularity;
    Rng place(mix_seed(cfg.seed, kSaltPlacement));
    const double w = cfg.image_size;
    for (int k = 0; k < cfg.n_objects; ++k) {
        SceneObject ob;
        ob.boxy = (k % 2) == 1;
        ob.rx = place.uniform(0.13, 0.20) * w;
        ob.ry = place.uniform(0.13, 0.20) * w;
        ob.angle = place.uniform(0.0, 3.14159265358979323846);
        const double hue = std::fmod(0.11 + 0.381966011 * k, 1.0);
        ob.base = hsv_to_rgb(hue, 0.55, 0.72);
        ob.texture_seed = mix_seed(cfg.seed, kSaltTexture + 1 + static_cast<std::uint64_t>(k));

        const double rb = ob.bound_radius();
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            const double margin = rb + 2.0;
            if (2.0 * margin >= w) break;  // object too large for the canvas
            ob.cx = place.uniform(margin, w - margin);
            ob.cy = place.uniform(margin, w - margin);
            placed = true;
            for (const SceneObject& other : scene.objects) {
                const double dx = ob.cx - other.cx;
                const double dy = ob.cy - other.cy;
                const double min_dist = rb + other.bound_radius() + 2.0;
                if (dx * dx + dy * dy < min_dist * min_dist) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed) {
            throw GenerationError("generate_pair: object placement failed after 100 attempts");
        }
        scene.objects.push_back(ob);
    }
    return scene;
}

/// True if any integer pixel of the object's own support lands inside the
/// out_w x out_h raster after warping by t.
bool object_visible_after_warp(const SceneObject& ob, const Affine2& t, int src_size, int out_w,
                               int out_h) {
    const int x0 = std::max(0, static_cast<int>(std::floor(ob.cx - ob.bound_radius() - 1)));
    const int x1 = std::min(src_size - 1, static_cast<int>(std::ceil(ob.cx + ob.bound_radius() + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(ob.cy - ob.bound_radius() - 1)));
    const int y1 = std::min(src_size - 1, static_cast<int>(std::ceil(ob.cy + ob.bound_radius() + 1)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (!ob.inside(x, y)) continue;
            double ox = 0.0, oy = 0.0;
            t.apply_xy(x, y, ox, oy);
            if (ox >= -0.5 && ox < out_w - 0.5 && oy >= -0.5 && oy < out_h - 0.5) return true;
        }
    }
    return false;
}

Affine2 sample_transform(const SceneConfig& cfg) {
    Rng rng(mix_seed(cfg.seed, kSaltTransform));
    const double theta = rng.uniform(-cfg.rotation_range, cfg.rotation_range) * 3.14159265358979323846 / 180.0;
    const double hi = std::max(cfg.scale_range, 1.0 / cfg.scale_range);
    const double s = std::exp(rng.uniform(-std::log(hi), std::log(hi)));
    const double tx = rng.uniform(-cfg.translation_range, cfg.translation_range);
    const double ty = rng.uniform(-cfg.translation_range, cfg.translation_range);
    const double c = (cfg.image_size - 1) / 2.0;

    Affine2 rot;
    rot.a = s * std::cos(theta);
    rot.b = -s * std::sin(theta);
    rot.c = s * std::sin(theta);
    rot.d = s * std::cos(theta);
    return Affine2::translation(c + tx, c + ty).compose(rot).compose(Affine2::translation(-c, -c));
}

ViewPair render_pair(const SceneConfig& cfg, const Affine2& transform) {
    cfg.validate();
    Scene scene = build_scene(cfg);
    const int n = cfg.image_size;

    // Re-place objects whose support warps entirely outside the target view.
    Rng replace_rng(mix_seed(cfg.seed, kSaltPlacement + 1));
    for (std::size_t k = 0; k < scene.objects.size(); ++k) {
        SceneObject& ob = scene.objects[k];
        int attempt = 0;
        while (!object_visible_after_warp(ob, transform, n, n, n)) {
            if (++attempt > 100) {
                throw GenerationError(
                    "generate_pair: object stays outside the target view after 100 attempts");
            }
            const double margin = ob.bound_radius() + 2.0;
            ob.cx = replace_rng.uniform(margin, n - margin);
            ob.cy = replace_rng.uniform(margin, n - margin);
        }
    }

    Rng pick(mix_seed(cfg.seed, kSaltPick));
    const int object_index = static_cast<int>(pick.uniform_int(0, cfg.n_objects - 1));

    ViewPair pair;
    pair.seed = cfg.seed;
    pair.object_index = object_index;
    pair.transform = transform;
    pair.query_image = Image(n, n, 3);
    pair.target_image = Image(n, n, 3);
    pair.query_mask = Mask(n, n);

    Rng jit(mix_seed(cfg.seed, kSaltJitter));
    double gain[3], bias[3];
    for (int ch = 0; ch < 3; ++ch) {
        gain[ch] = 1.0 + cfg.photometric_jitter * jit.uniform(-1.0, 1.0);
        bias[ch] = 0.5 * cfg.photometric_jitter * jit.uniform(-1.0, 1.0);
    }

    const Affine2 inv = transform.inverse();
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const Rgb q = scene.color_at(x, y);
            pair.query_image.set(x, y, 0, quantize8(q.r));
            pair.query_image.set(x, y, 1, quantize8(q.g));
            pair.query_image.set(x, y, 2, quantize8(q.b));
            pair.query_mask.set(x, y, scene.topmost(x, y) == object_index ? 1 : 0);

            double sx = 0.0, sy = 0.0;
            inv.apply_xy(x, y, sx, sy);
            const Rgb t = scene.color_at(sx, sy);
            pair.target_image.set(x, y, 0, quantize8(gain[0] * t.r + bias[0]));
            pair.target_image.set(x, y, 1, quantize8(gain[1] * t.g + bias[1]));
            pair.target_image.set(x, y, 2, quantize8(gain[2] * t.b + bias[2]));
        }
    }
    pair.target_mask = warp_mask_nn(pair.query_mask, transform, n, n);
    return pair;
}

}  // namespace

double value_noise(double x, double y, std::uint64_t seed) {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const auto ix = static_cast<std::int64_t>(fx);
    const auto iy = static_cast<std::int64_t>(fy);
    const double tx = x - fx;
    const double ty = y - fy;
    const double ux = tx * tx * (3.0 - 2.0 * tx);
    const double uy = ty * ty * (3.0 - 2.0 * ty);
    const double v00 = lattice_value(ix, iy, seed);
    const double v10 = lattice_value(ix + 1, iy, seed);
    const double v01 = lattice_value(ix, iy + 1, seed);
    const double v11 = lattice_value(ix + 1, iy + 1, seed);
    const double a = v00 + (v10 - v00) * ux;
    const double b = v01 + (v11 - v01) * ux;
    return a + (b - a) * uy;
}

void SceneConfig::validate() const {
    if (image_size < 16) throw std::invalid_argument("SceneConfig: image_size must be >= 16");
    if (n_objects < 1) throw std::invalid_argument("SceneConfig: n_objects must be >= 1");
    if (texture_granularity <= 0.0) {
        throw std::invalid_argument("SceneConfig: texture_granularity must be > 0");
    }
    if (rotation_range < 0.0) throw std::invalid_argument("SceneConfig: rotation_range must be >= 0");
    if (scale_range <= 0.0) throw std::invalid_argument("SceneConfig: scale_range must be > 0");
    if (translation_range < 0.0) {
        throw std::invalid_argument("SceneConfig: translation_range must be >= 0");
    }
    if (photometric_jitter < 0.0 || photometric_jitter > 1.0) {
        throw std::invalid_argument("SceneConfig: photometric_jitter must be in [0, 1]");
    }
}

SceneConfig SceneConfig::from_config(const KeyValueConfig& kv) {
    SceneConfig cfg;
    cfg.image_size = static_cast<int>(kv.get_int("image_size", cfg.image_size));
    cfg.n_objects = static_cast<int>(kv.get_int("n_objects", cfg.n_objects));
    cfg.texture_granularity = kv.get_double("texture_granularity", cfg.texture_granularity);
    cfg.rotation_range = kv.get_double("rotation_range", cfg.rotation_range);
    cfg.scale_range = kv.get_double("scale_range", cfg.scale_range);
    cfg.translation_range = kv.get_double("translation_range", cfg.translation_range);
    cfg.photometric_jitter = kv.get_double("photometric_jitter", cfg.photometric_jitter);
    cfg.seed = kv.get_u64("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

KeyValueConfig SceneConfig::to_config() const {
    KeyValueConfig kv;
    char buf[64];
    kv.set("image_size", std::to_string(image_size));
    kv.set("n_objects", std::to_string(n_objects));
    std::snprintf(buf, sizeof(buf), "%.17g", texture_granularity);
    kv.set("texture_granularity", buf);
    std::snprintf(buf, sizeof(buf), "%.17g", rotation_range);
    kv.set("rotation_range", buf);
    std::snprintf(buf, sizeof(buf), "%.17g", scale_range);
    kv.set("scale_range", buf);
    std::snprintf(buf, sizeof(buf), "%.17g", translation_range);
    kv.set("translation_range", buf);
    std::snprintf(buf, sizeof(buf), "%.17g", photometric_jitter);
    kv.set("photometric_jitter", buf);
    kv.set("seed", std::to_string(seed));
    return kv;
}

ViewPair generate_pair(const SceneConfig& cfg) {
    cfg.validate();
    return render_pair(cfg, sample_transform(cfg));
}

ViewPair generate_pair_with_transform(const SceneConfig& cfg, const Affine2& transform) {
    cfg.validate();
    if (std::abs(transform.det()) < 1e-12) {
        throw std::invalid_argument("generate_pair_with_transform: transform must be invertible");
    }
    return render_pair(cfg, transform);
}

PointSet warp_points(const PointSet& points, const Affine2& t) {
    PointSet out;
    out.reserve(points.size());
    for (const Point2D& p : points) {
        if (p.frame != Frame::ImagePixels) {
            throw std::invalid_argument("warp_points: points must be in the ImagePixels frame");
        }
        out.push_back(t.apply(p));
    }
    return out;
}

Mask warp_mask_nn(const Mask& mask, const Affine2& t, int out_w, int out_h) {
    const Affine2 inv = t.inverse();
    Mask out(out_w, out_h);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double sx = 0.0, sy = 0.0;
            inv.apply_xy(x, y, sx, sy);
            const auto xi = static_cast<long>(std::lround(sx));
            const auto yi = static_cast<long>(std::lround(sy));
            if (xi >= 0 && xi < mask.width && yi >= 0 && yi < mask.height) {
                out.set(x, y, mask.at(static_cast<int>(xi), static_cast<int>(yi)));
            }
        }
    }
    return out;
}

void write_transform_file(const Affine2& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_transform_file: cannot open " + path);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g\n", t.a, t.b, t.tx, t.c,
                  t.d, t.ty);
    out << buf;
}

Affine2 read_transform_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_transform_file: cannot open " + path);
    Affine2 t;
    if (!(in >> t.a >> t.b >> t.tx >> t.c >> t.d >> t.ty)) {
        throw std::runtime_error("read_transform_file: expected 6 floats in " + path);
    }
    return t;
}

void write_view_pair(const ViewPair& pair, const std::string& dir) {
    std::filesystem::create_directories(dir);
    write_ppm(pair.query_image, dir + "/query.ppm");
    write_ppm(pair.target_image, dir + "/target.ppm");
    write_mask_pgm(pair.query_mask, dir + "/query_mask.pgm");
    write_mask_pgm(pair.target_mask, dir + "/target_mask.pgm");
    write_transform_file(pair.transform, dir + "/transform.txt");
    std::ofstream meta(dir + "/meta.txt");
    if (!meta) throw std::runtime_error("write_view_pair: cannot open meta.txt in " + dir);
    meta << "seed=" << pair.seed << "\n";
    meta << "object_index=" << pair.object_index << "\n";
    meta << "image_size=" << pair.query_image.width << "\n";
}

ViewPair read_view_pair(const std::string& dir) {
    ViewPair pair;
    pair.query_image = read_ppm(dir + "/query.ppm");
    pair.target_image = read_ppm(dir + "/target.ppm");
    pair.query_mask = read_mask_pgm(dir + "/query_mask.pgm");
    pair.target_mask = read_mask_pgm(dir + "/target_mask.pgm");
    pair.transform = read_transform_file(dir + "/transform.txt");
    const KeyValueConfig meta = KeyValueConfig::parse_file(dir + "/meta.txt");
    pair.seed = meta.get_u64("seed", 0);
    pair.object_index = static_cast<int>(meta.get_int("object_index", 0));
    return pair;
}

}  // namespace v2lab
