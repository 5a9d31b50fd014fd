#include "puzzleseq/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "puzzleseq/errors.hpp"
#include "puzzleseq/rng.hpp"

namespace puzzleseq {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

double hash_unit(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    // stateless counter hash -> [0,1)
    const std::uint64_t h = splitmix64(seed ^ (a * 0x9e3779b97f4a7c15ULL) ^
                                       (b + 0xbf58476d1ce4e5b9ULL));
    return double(h >> 11) * 0x1.0p-53;
}

}  // namespace

Image synth_image(std::uint64_t seed, std::size_t side) {
    if (side < 2) throw ConfigError("synth_image: side must be >= 2");
    Rng rng(seed);
    const std::size_t channels = 3;
    Image img(side, side, channels);

    // dominant luminance ramps anchor absolute position, but the corner they
    // grow from varies per image, so piece brightness alone never fixes the
    // layout without inferring the image's orientation first
    const double ramp_v = 0.95 + 0.25 * rng.uniform();
    const double ramp_h = 0.50 + 0.15 * rng.uniform();
    const bool flip_v = rng.below(2) == 1;
    const bool flip_h = rng.below(2) == 1;

    struct Wave {
        double amp, freq, dx, dy, phase;
    };
    std::vector<Wave> waves(3);
    for (auto& w : waves) {
        w.amp = 0.03 + 0.06 * rng.uniform();
        w.freq = 0.5 + 1.5 * rng.uniform();
        const double theta = 2.0 * kPi * rng.uniform();
        w.dx = std::cos(theta);
        w.dy = std::sin(theta);
        w.phase = 2.0 * kPi * rng.uniform();
    }

    const double band_theta = 2.0 * kPi * rng.uniform();
    const double band_dx = std::cos(band_theta);
    const double band_dy = std::sin(band_theta);
    const double band_width = 4.0 + 5.0 * rng.uniform();
    const double band_amp = 0.02 + 0.04 * rng.uniform();
    const std::uint64_t band_tag = rng.next_u64();

    double chan_base[3], chan_tex[3];
    for (std::size_t c = 0; c < 3; ++c) chan_base[c] = 0.9 + 0.2 * rng.uniform();
    for (std::size_t c = 0; c < 3; ++c) chan_tex[c] = 0.7 + 0.6 * rng.uniform();
    const std::uint64_t noise_tag = rng.next_u64();

    const double inv = 1.0 / double(side);
    for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
            const double fx = double(x) * inv;
            const double fy = double(y) * inv;
            double wave_sum = 0.0;
            for (const auto& w : waves) {
                wave_sum += w.amp * std::cos(2.0 * kPi * w.freq * (fx * w.dx + fy * w.dy) +
                                             w.phase);
            }
            const double band_u =
                std::floor((double(x) * band_dx + double(y) * band_dy) / band_width);
            const double band =
                band_amp * (2.0 * hash_unit(band_tag, (std::uint64_t)(std::int64_t)band_u,
                                            0x42) - 1.0);
            const double base = ramp_v * (flip_v ? 1.0 - fy : fy) +
                                ramp_h * (flip_h ? 1.0 - fx : fx);
            for (std::size_t c = 0; c < channels; ++c) {
                const double grain =
                    0.01 * (2.0 * hash_unit(noise_tag, y * side + x, c) - 1.0);
                const double v = chan_base[c] * base + chan_tex[c] * (wave_sum + band) +
                                 grain - 0.5;
                // fixed logistic squash into (0,1); absolute levels stay
                // comparable across images, unlike per-image rescaling
                img.at(y, x, c) = 1.0 / (1.0 + std::exp(-3.2 * v));
            }
        }
    }
    return img;
}

Image center_crop_square(const Image& img, std::size_t multiple) {
    if (multiple == 0) throw ConfigError("center_crop_square: multiple must be > 0");
    std::size_t side = std::min(img.height, img.width);
    side -= side % multiple;
    if (side == 0) {
        throw DataError("image too small to crop to a multiple of " + std::to_string(multiple));
    }
    const std::size_t y0 = (img.height - side) / 2;
    const std::size_t x0 = (img.width - side) / 2;
    Image out(side, side, img.channels);
    for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) {
                out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
            }
        }
    }
    return out;
}

Image resize(const Image& img, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) throw ConfigError("resize: zero output size");
    if (out_h == img.height && out_w == img.width) return img;
    Image out(out_h, out_w, img.channels);
    const double sy = double(img.height) / double(out_h);
    const double sx = double(img.width) / double(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double fy = (double(y) + 0.5) * sy - 0.5;
        const double fy0 = std::floor(fy);
        const std::size_t y0 = (std::size_t)std::max(0.0, fy0);
        const std::size_t y1 = std::min(img.height - 1, (std::size_t)std::max(0.0, fy0 + 1.0));
        const double wy = std::min(1.0, std::max(0.0, fy - fy0));
        for (std::size_t x = 0; x < out_w; ++x) {
            const double fx = (double(x) + 0.5) * sx - 0.5;
            const double fx0 = std::floor(fx);
            const std::size_t x0 = (std::size_t)std::max(0.0, fx0);
            const std::size_t x1 =
                std::min(img.width - 1, (std::size_t)std::max(0.0, fx0 + 1.0));
            const double wx = std::min(1.0, std::max(0.0, fx - fx0));
            for (std::size_t c = 0; c < img.channels; ++c) {
                const double top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
                const double bot = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
                out.at(y, x, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

namespace {

// skips PPM whitespace and '#' comments
std::size_t ppm_next_int(const std::vector<std::uint8_t>& b, std::size_t& pos) {
    while (pos < b.size()) {
        if (b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else if (std::isspace(b[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) throw DataError("malformed PPM header");
    std::size_t v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
        v = v * 10 + (b[pos] - '0');
        ++pos;
    }
    return v;
}

}  // namespace

Image read_ppm(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        throw DataError("not a binary PPM (P6): " + path);
    }
    std::size_t pos = 2;
    const std::size_t w = ppm_next_int(bytes, pos);
    const std::size_t h = ppm_next_int(bytes, pos);
    const std::size_t maxval = ppm_next_int(bytes, pos);
    if (maxval != 255) throw DataError("PPM maxval must be 255: " + path);
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + w * h * 3) throw DataError("truncated PPM: " + path);
    Image img(h, w, 3);
    for (std::size_t i = 0; i < w * h * 3; ++i) {
        img.data[i] = double(bytes[pos + i]) / 255.0;
    }
    return img;
}

void write_ppm(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<std::uint8_t> bytes(img.width * img.height * 3);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = img.channels == 3 ? img.at(y, x, c) : img.at(y, x, 0);
                const double clamped = std::min(1.0, std::max(0.0, v));
                bytes[(y * img.width + x) * 3 + c] =
                    (std::uint8_t)std::lround(clamped * 255.0);
            }
        }
    }
    out.write((const char*)bytes.data(), (std::streamsize)bytes.size());
    if (!out) throw DataError("short write: " + path);
}

namespace {

std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

Image read_png(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0) {
        throw DataError("not a PNG file: " + path);
    }

    std::size_t w = 0, h = 0, color_type = 0;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 8 <= bytes.size() && !saw_iend) {
        const std::uint32_t len = be32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw DataError("truncated PNG: " + path);
        const char* type = (const char*)&bytes[pos + 4];
        const std::uint8_t* payload = &bytes[pos + 8];
        const std::uint32_t crc_stored = be32(&bytes[pos + 8 + len]);
        const std::uint32_t crc_calc =
            (std::uint32_t)crc32(crc32(0L, (const Bytef*)type, 4), payload, len);
        if (crc_stored != crc_calc) throw DataError("PNG CRC mismatch: " + path);

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DataError("bad IHDR: " + path);
            w = be32(payload);
            h = be32(payload + 4);
            const int bit_depth = payload[8];
            color_type = payload[9];
            if (bit_depth != 8) throw DataError("PNG bit depth must be 8: " + path);
            if (color_type != 0 && color_type != 2 && color_type != 6) {
                throw DataError("unsupported PNG color type " + std::to_string(color_type) +
                                " (need gray/RGB/RGBA): " + path);
            }
            if (payload[10] != 0 || payload[11] != 0) throw DataError("bad PNG header: " + path);
            if (payload[12] != 0) throw DataError("interlaced PNG unsupported: " + path);
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || idat.empty() || w == 0 || h == 0) throw DataError("malformed PNG: " + path);

    const std::size_t src_ch = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
    const std::size_t stride = w * src_ch;
    std::vector<std::uint8_t> raw(h * (stride + 1));
    uLongf raw_len = (uLongf)raw.size();
    const int rc = uncompress(raw.data(), &raw_len, idat.data(), (uLong)idat.size());
    if (rc != Z_OK || raw_len != raw.size()) {
        throw DataError("PNG inflate failed (" + std::to_string(rc) + "): " + path);
    }

    // undo per-scanline filters
    std::vector<std::uint8_t> pixels(h * stride);
    for (std::size_t y = 0; y < h; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        const std::uint8_t* src = &raw[y * (stride + 1) + 1];
        std::uint8_t* dst = &pixels[y * stride];
        const std::uint8_t* up = y > 0 ? &pixels[(y - 1) * stride] : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int left = i >= src_ch ? dst[i - src_ch] : 0;
            const int above = up ? up[i] : 0;
            const int ul = (up && i >= src_ch) ? up[i - src_ch] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += above; break;
                case 3: v += (left + above) / 2; break;
                case 4: v += paeth(left, above, ul); break;
                default: throw DataError("bad PNG filter type: " + path);
            }
            dst[i] = (std::uint8_t)v;
        }
    }

    Image img(h, w, 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::uint8_t* px = &pixels[y * stride + x * src_ch];
            for (std::size_t c = 0; c < 3; ++c) {
                const std::uint8_t v = src_ch == 1 ? px[0] : px[c];
                img.at(y, x, c) = double(v) / 255.0;
            }
        }
    }
    return img;
}

Image read_image(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return read_ppm(path);
    if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P') return read_png(path);
    throw DataError("unrecognized image format (need PNG or binary PPM): " + path);
}

}  // namespace puzzleseq
