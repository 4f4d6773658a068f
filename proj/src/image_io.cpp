#include "pam/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "pam/util.hpp"

namespace pam {

namespace {

unsigned char quantize(double v) {
    double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    return static_cast<unsigned char>(q);
}

int read_pnm_token(std::istream& in) {
    // Skips whitespace and '#' comments, then reads one nonnegative integer.
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = in.get();
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) throw std::invalid_argument("image: malformed netpbm header");
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        if (value > 1 << 30) throw std::invalid_argument("image: header value out of range");
        c = in.get();
    }
    in.unget();
    return value;
}

std::vector<unsigned char> read_pnm(const std::string& path, const std::string& magic, int channels,
                                    int& height, int& width) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("image: cannot open " + path);
    std::string tag(2, '\0');
    in.read(tag.data(), 2);
    if (tag != magic) throw std::invalid_argument("image: " + path + " is not a " + magic + " file");
    width = read_pnm_token(in);
    height = read_pnm_token(in);
    int maxval = read_pnm_token(in);
    if (maxval != 255) throw std::invalid_argument("image: only 8-bit depth supported: " + path);
    in.get();  // single whitespace byte before raster
    std::vector<unsigned char> raster(static_cast<std::size_t>(height) * width * channels);
    in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    if (in.gcount() != static_cast<std::streamsize>(raster.size()))
        throw std::invalid_argument("image: truncated raster in " + path);
    return raster;
}

}  // namespace

void write_pgm(const Tensor& gray, const std::string& path) {
    if (gray.dims().size() != 2) throw std::invalid_argument("write_pgm: expected an H×W tensor");
    int h = gray.dims()[0], w = gray.dims()[1];
    atomic_write(path, [&](std::ostream& os) {
        os << "P5\n" << w << " " << h << "\n255\n";
        for (std::int64_t i = 0; i < gray.numel(); ++i) os.put(static_cast<char>(quantize(gray[i])));
    });
}

Tensor read_pgm(const std::string& path) {
    int h = 0, w = 0;
    std::vector<unsigned char> raster = read_pnm(path, "P5", 1, h, w);
    Tensor out({h, w});
    for (std::size_t i = 0; i < raster.size(); ++i) out.data()[i] = raster[i] / 255.0;
    return out;
}

void write_ppm(const Tensor& rgb, const std::string& path) {
    if (rgb.dims().size() != 3 || rgb.dims()[0] != 3)
        throw std::invalid_argument("write_ppm: expected a 3×H×W tensor");
    int h = rgb.dims()[1], w = rgb.dims()[2];
    atomic_write(path, [&](std::ostream& os) {
        os << "P6\n" << w << " " << h << "\n255\n";
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) os.put(static_cast<char>(quantize(rgb.at(c, y, x))));
    });
}

Tensor read_ppm(const std::string& path) {
    int h = 0, w = 0;
    std::vector<unsigned char> raster = read_pnm(path, "P6", 3, h, w);
    Tensor out({3, h, w});
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = raster[i++] / 255.0;
    return out;
}

}  // namespace pam
