#include "v2lab/features.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <stdexcept>

#include "v2lab/rng.hpp"

namespace v2lab {
namespace {

struct ProjectionKey {
    std::uint64_t seed;
    int dim;
    int block_len;
    bool operator<(const ProjectionKey& o) const {
        if (seed != o.seed) return seed < o.seed;
        if (dim != o.dim) return dim < o.dim;
        return block_len < o.block_len;
    }
};

/// Projection rows are cached: the matrix is a pure function of
/// (seed, dim, block_len), so every call shares the same weights.
const std::vector<double>& projection_matrix(std::uint64_t seed, int dim, int block_len) {
    static std::mutex mu;
    static std::map<ProjectionKey, std::vector<double>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto [it, inserted] = cache.try_emplace(ProjectionKey{seed, dim, block_len});
    if (inserted) {
        Rng rng(mix_seed(seed, (static_cast<std::uint64_t>(dim) << 32) ^
                                   static_cast<std::uint64_t>(block_len)));
        auto& m = it->second;
        m.resize(static_cast<std::size_t>(dim) * block_len);
        const double scale = 1.0 / std::sqrt(static_cast<double>(block_len));
        for (double& w : m) w = rng.normal() * scale;
    }
    return it->second;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

std::vector<float> FeatureGrid::descriptor(int patch_index) const {
    std::vector<float> d(static_cast<std::size_t>(dim));
    const int r = patch_index / cols;
    const int c = patch_index % cols;
    for (int f = 0; f < dim; ++f) d[static_cast<std::size_t>(f)] = value(f, r, c);
    return d;
}

void FeatureGrid::patch_center(int patch_index, double& x, double& y) const {
    const int r = patch_index / cols;
    const int c = patch_index % cols;
    x = (c + 0.5) * patch_size;
    y = (r + 0.5) * patch_size;
}

EncoderSettings visual_encoder_settings() { return EncoderSettings{8, 64, 0x76326c6162666561ull}; }

EncoderSettings anchor_encoder_settings() { return EncoderSettings{8, 32, 0x76326c6162616e63ull}; }

FeatureGrid encode_patches(const Image& image, int patch_size, int dim,
                           std::uint64_t projection_seed) {
    if (patch_size <= 0) throw std::invalid_argument("encode_patches: patch_size must be > 0");
    if (dim <= 0) throw std::invalid_argument("encode_patches: dim must be > 0");
    if (image.width < patch_size || image.height < patch_size) {
        throw std::invalid_argument("encode_patches: image smaller than one patch");
    }

    FeatureGrid grid;
    grid.dim = dim;
    grid.patch_size = patch_size;
    grid.orig_width = image.width;
    grid.orig_height = image.height;
    grid.cols = (image.width + patch_size - 1) / patch_size;
    grid.rows = (image.height + patch_size - 1) / patch_size;
    grid.data.assign(static_cast<std::size_t>(dim) * grid.rows * grid.cols, 0.0f);

    const int block_len = image.channels * patch_size * patch_size;
    const std::vector<double>& proj = projection_matrix(projection_seed, dim, block_len);

    std::vector<double> block(static_cast<std::size_t>(block_len));
    std::vector<double> out(static_cast<std::size_t>(dim));
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            // Gather the raw pixel block, zero-padded past the image border.
            std::size_t bi = 0;
            for (int py = 0; py < patch_size; ++py) {
                for (int px = 0; px < patch_size; ++px) {
                    const int x = c * patch_size + px;
                    const int y = r * patch_size + py;
                    for (int ch = 0; ch < image.channels; ++ch) {
                        block[bi++] = (x < image.width && y < image.height)
                                          ? static_cast<double>(image.at(x, y, ch))
                                          : 0.0;
                    }
                }
            }
            double norm_sq = 0.0;
            for (int f = 0; f < dim; ++f) {
                const double* row = proj.data() + static_cast<std::size_t>(f) * block_len;
                double acc = 0.0;
                for (int i = 0; i < block_len; ++i) acc += row[i] * block[static_cast<std::size_t>(i)];
                out[static_cast<std::size_t>(f)] = acc;
                norm_sq += acc * acc;
            }
            const double norm = std::sqrt(norm_sq);
            if (norm > 1e-12) {
                for (int f = 0; f < dim; ++f) {
                    grid.set_value(f, r, c, static_cast<float>(out[static_cast<std::size_t>(f)] / norm));
                }
            }
            // An exactly-zero block stays a zero descriptor; downstream
            // consumers that need unit vectors reject it explicitly.
        }
    }
    return grid;
}

FeatureGrid encode_patches(const Image& image, const EncoderSettings& settings) {
    return encode_patches(image, settings.patch_size, settings.dim, settings.seed);
}

void save_feature_grid(const FeatureGrid& grid, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_feature_grid: cannot open " + path);
    out.write("V2FG", 4);
    write_u32(out, 1);
    write_u32(out, static_cast<std::uint32_t>(grid.dim));
    write_u32(out, static_cast<std::uint32_t>(grid.rows));
    write_u32(out, static_cast<std::uint32_t>(grid.cols));
    write_u32(out, static_cast<std::uint32_t>(grid.patch_size));
    write_u32(out, static_cast<std::uint32_t>(grid.orig_height));
    write_u32(out, static_cast<std::uint32_t>(grid.orig_width));
    for (float v : grid.data) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_u32(out, bits);
    }
    if (!out) throw std::runtime_error("save_feature_grid: write failed for " + path);
}

FeatureGrid load_feature_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_feature_grid: cannot open " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "V2FG", 4) != 0) {
        throw std::runtime_error("load_feature_grid: bad magic at offset 0 in " + path);
    }
    const std::uint32_t version = read_u32(in);
    if (!in || version != 1) {
        throw std::runtime_error("load_feature_grid: unsupported version at offset 4 in " + path);
    }
    FeatureGrid grid;
    grid.dim = static_cast<int>(read_u32(in));
    grid.rows = static_cast<int>(read_u32(in));
    grid.cols = static_cast<int>(read_u32(in));
    grid.patch_size = static_cast<int>(read_u32(in));
    grid.orig_height = static_cast<int>(read_u32(in));
    grid.orig_width = static_cast<int>(read_u32(in));
    if (!in || grid.dim <= 0 || grid.rows <= 0 || grid.cols <= 0 || grid.patch_size <= 0) {
        throw std::runtime_error("load_feature_grid: bad header field at offset 8 in " + path);
    }
    const std::size_t count = static_cast<std::size_t>(grid.dim) * grid.rows * grid.cols;
    grid.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = read_u32(in);
        if (!in) {
            throw std::runtime_error("load_feature_grid: payload truncated at offset " +
                                     std::to_string(32 + 4 * i) + " in " + path);
        }
        float v;
        std::memcpy(&v, &bits, 4);
        grid.data[i] = v;
    }
    in.peek();
    if (!in.eof()) {
        throw std::runtime_error("load_feature_grid: trailing bytes at offset " +
                                 std::to_string(32 + 4 * count) + " in " + path);
    }
    return grid;
}

std::vector<int> project_mask_to_grid(const Mask& mask, const FeatureGrid& grid, double threshold) {
    if (mask.width != grid.orig_width || mask.height != grid.orig_height) {
        throw std::invalid_argument("project_mask_to_grid: mask dims do not match grid origin");
    }
    std::vector<int> fg;
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            int covered = 0;
            int total = 0;
            for (int py = 0; py < grid.patch_size; ++py) {
                for (int px = 0; px < grid.patch_size; ++px) {
                    const int x = c * grid.patch_size + px;
                    const int y = r * grid.patch_size + py;
                    if (x >= mask.width || y >= mask.height) continue;  // clipped patch
                    ++total;
                    covered += mask.at(x, y);
                }
            }
            if (total > 0 && static_cast<double>(covered) / total >= threshold) {
                fg.push_back(r * grid.cols + c);
            }
        }
    }
    return fg;
}

}  // namespace v2lab
