#include "v2lab/image.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "pnm_util.hpp"

namespace v2lab {

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
    if (detail::next_pnm_token(in) != "P6") {
        throw std::runtime_error("read_ppm: not a P6 file: " + path);
    }
    const int w = std::stoi(detail::next_pnm_token(in));
    const int h = std::stoi(detail::next_pnm_token(in));
    const int maxval = std::stoi(detail::next_pnm_token(in));
    if (w <= 0 || h <= 0 || maxval != 255) {
        throw std::runtime_error("read_ppm: bad header in " + path);
    }
    Image img(w, h, 3);
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw std::runtime_error("read_ppm: truncated payload in " + path);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        img.data[i] = static_cast<float>(raw[i]) / 255.0f;
    }
    return img;
}

void write_ppm(const Image& image, const std::string& path) {
    if (image.channels != 3) throw std::invalid_argument("write_ppm: expected 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::vector<std::uint8_t> raw(image.data.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        float v = image.data[i];
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        raw[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

}  // namespace v2lab
