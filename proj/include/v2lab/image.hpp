#pragma once

#include <string>
#include <vector>

namespace v2lab {

/// Row-major, channel-interleaved float image with values in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0.0f) {}

    float at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    void set(int x, int y, int c, float v) {
        data[(static_cast<std::size_t>(y) * width + x) * channels + c] = v;
    }

    bool operator==(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels && data == o.data;
    }
};

/// PPM (P6) round trip for 3-channel images; values quantized to 8 bits.
Image read_ppm(const std::string& path);
void write_ppm(const Image& image, const std::string& path);

}  // namespace v2lab
