#include "v2lab/mask.hpp"

#include <fstream>
#include <stdexcept>

#include "pnm_util.hpp"

namespace v2lab {

Mask read_mask_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_mask_pgm: cannot open " + path);
    if (detail::next_pnm_token(in) != "P5") {
        throw std::runtime_error("read_mask_pgm: not a P5 file: " + path);
    }
    const int w = std::stoi(detail::next_pnm_token(in));
    const int h = std::stoi(detail::next_pnm_token(in));
    const int maxval = std::stoi(detail::next_pnm_token(in));
    if (w <= 0 || h <= 0 || maxval != 255) {
        throw std::runtime_error("read_mask_pgm: bad header in " + path);
    }
    Mask m(w, h);
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw std::runtime_error("read_mask_pgm: truncated payload in " + path);
    for (std::size_t i = 0; i < raw.size(); ++i) m.data[i] = raw[i] > 127 ? 1 : 0;
    return m;
}

void write_mask_pgm(const Mask& mask, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_mask_pgm: cannot open " + path);
    out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    std::vector<std::uint8_t> raw(mask.data.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = mask.data[i] ? 255 : 0;
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("write_mask_pgm: write failed for " + path);
}

}  // namespace v2lab
