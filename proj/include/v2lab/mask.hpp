#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace v2lab {

/// Binary mask, row-major, values restricted to {0, 1}.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    void set(int x, int y, std::uint8_t v) { data[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }

    std::size_t count_foreground() const {
        std::size_t n = 0;
        for (std::uint8_t v : data) n += (v != 0);
        return n;
    }

    bool empty_foreground() const { return count_foreground() == 0; }

    bool operator==(const Mask& o) const {
        return width == o.width && height == o.height && data == o.data;
    }
};

/// Reads a binary PGM (P5, maxval 255); any pixel > 127 becomes foreground.
Mask read_mask_pgm(const std::string& path);

/// Writes foreground as 255, background as 0 (P5, maxval 255).
void write_mask_pgm(const Mask& mask, const std::string& path);

}  // namespace v2lab
