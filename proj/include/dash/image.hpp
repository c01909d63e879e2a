#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dash {

/// Interleaved RGB image, row-major, values nominally in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // height * width * 3

    Image() = default;
    Image(int h, int w, double fill = 0.0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width + x) * 3 + c;
    }
    double& at(int y, int x, int c) { return pixels[index(y, x, c)]; }
    double at(int y, int x, int c) const { return pixels[index(y, x, c)]; }

    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

    bool operator==(const Image&) const = default;
};

/// Rounds every channel to the nearest 8-bit level (the on-disk precision).
Image quantize_8bit(const Image& img);

std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> bytes);

void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);

}  // namespace dash
