#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace puzzleseq {

// Square RGB image with intensities normalized to [0,1], stored row-major
// with interleaved channels: data[(y*width + x)*channels + c].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 3;
    std::vector<double> data;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c)
        : height(h), width(w), channels(c), data(h * w * c, 0.0) {}

    double at(std::size_t y, std::size_t x, std::size_t c) const {
        return data[(y * width + x) * channels + c];
    }
    double& at(std::size_t y, std::size_t x, std::size_t c) {
        return data[(y * width + x) * channels + c];
    }
};

// Deterministic procedural image: layered low-frequency gradients plus
// oriented band noise, so adjacent regions share structure and absolute
// position leaves a trace in local appearance. Values in [0,1].
Image synth_image(std::uint64_t seed, std::size_t side);

// Center-crop to the largest square with side divisible by `multiple`.
Image center_crop_square(const Image& img, std::size_t multiple);

// Bilinear resize (square target). Deterministic.
Image resize(const Image& img, std::size_t out_h, std::size_t out_w);

// Binary PPM (P6, maxval 255).
Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);

// Minimal PNG reader: 8-bit gray / RGB / RGBA, non-interlaced.
Image read_png(const std::string& path);

// Dispatch on file magic (PNG signature or "P6").
Image read_image(const std::string& path);

}  // namespace puzzleseq
