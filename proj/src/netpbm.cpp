#include "duoseg/data/netpbm.hpp"

#include <cstdio>
#include <fstream>

namespace duoseg {

void write_pnm(const std::string& path, const PnmImage& img) {
    if (img.channels != 1 && img.channels != 3)
        throw PnmError("write_pnm: channels must be 1 or 3");
    const size_t expected =
        static_cast<size_t>(img.width) * static_cast<size_t>(img.height) * static_cast<size_t>(img.channels);
    if (img.width < 1 || img.height < 1 || img.pixels.size() != expected)
        throw PnmError("write_pnm: pixel buffer does not match extents");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw PnmError("write_pnm: cannot open " + path);
    f << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(expected));
    if (!f) throw PnmError("write_pnm: write failed for " + path);
}

namespace {

// Reads the next header integer, skipping whitespace and '#' comments.
int next_header_int(std::istream& in, const std::string& path) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c)) throw PnmError("read_pnm: malformed header in " + path);
    long value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        if (value > 1 << 30) throw PnmError("read_pnm: header value out of range in " + path);
        c = in.get();
    }
    if (c != EOF) in.unget();
    return static_cast<int>(value);
}

}  // namespace

PnmImage read_pnm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw PnmError("read_pnm: cannot open " + path);
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (!f || m0 != 'P' || (m1 != '5' && m1 != '6'))
        throw PnmError("read_pnm: bad magic in " + path);
    PnmImage img;
    img.channels = m1 == '6' ? 3 : 1;
    img.width = next_header_int(f, path);
    img.height = next_header_int(f, path);
    const int maxval = next_header_int(f, path);
    if (maxval != 255) throw PnmError("read_pnm: unsupported maxval in " + path);
    f.get();  // single whitespace byte before the raster
    if (!f) throw PnmError("read_pnm: truncated header in " + path);
    const size_t expected =
        static_cast<size_t>(img.width) * static_cast<size_t>(img.height) * static_cast<size_t>(img.channels);
    img.pixels.resize(expected);
    f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(expected));
    if (static_cast<size_t>(f.gcount()) != expected)
        throw PnmError("read_pnm: truncated pixel data in " + path);
    return img;
}

}  // namespace duoseg
