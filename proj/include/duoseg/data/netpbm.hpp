#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace duoseg {

struct PnmError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary netpbm image: P5 graymap (channels == 1) or P6 pixmap (channels == 3),
// maxval 255, interleaved row-major pixels.
struct PnmImage {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;
};

// Writes without comment lines; header is "P5|P6\n<w> <h>\n255\n".
void write_pnm(const std::string& path, const PnmImage& img);

// Tolerates '#' comments and arbitrary whitespace in the header; requires
// maxval 255. Truncated or malformed files raise PnmError.
PnmImage read_pnm(const std::string& path);

}  // namespace duoseg
