#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capbias/common.hpp"

namespace capbias {

constexpr int kImageSize = 64;

// Real-valued H×W×C image, entries in [0,1]. This is what the model and the
// masking/occlusion transforms operate on.
struct ImageF {
    int h = 0, w = 0, c = 0;
    std::vector<double> v;

    ImageF() = default;
    ImageF(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, 0.0) {}

    double& at(int y, int x, int ch) { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
};

// Byte-quantized 64×64 RGB scene image as stored on disk; real pixel values
// are byte/255 exactly.
struct ImageU8 {
    int h = kImageSize, w = kImageSize, c = 3;
    std::vector<uint8_t> bytes;

    ImageU8() : bytes(static_cast<size_t>(kImageSize) * kImageSize * 3, 0) {}

    uint8_t& at(int y, int x, int ch) { return bytes[(static_cast<size_t>(y) * w + x) * c + ch]; }
    uint8_t at(int y, int x, int ch) const { return bytes[(static_cast<size_t>(y) * w + x) * c + ch]; }

    ImageF to_float() const;
    static ImageU8 quantize(const ImageF& img);
};

// Binary person mask. Convention follows the masking transform: 1 marks
// background pixels that should not contribute to a gender decision, 0 marks
// person pixels.
struct PersonMask {
    int h = kImageSize, w = kImageSize;
    std::vector<uint8_t> m;

    PersonMask() : m(static_cast<size_t>(kImageSize) * kImageSize, 1) {}

    uint8_t& at(int y, int x) { return m[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return m[static_cast<size_t>(y) * w + x]; }

    size_t person_pixel_count() const;
    // true when the person region (zeros) is nonempty and 4-connected
    bool person_region_connected() const;
};

// PNG I/O. Images are 8-bit RGB, masks 8-bit single channel with
// 255 = background and 0 = person.
void write_png_rgb(const std::string& path, const ImageU8& img);
ImageU8 read_png_rgb(const std::string& path);
void write_png_gray(const std::string& path, const PersonMask& mask);
PersonMask read_png_gray(const std::string& path);

}  // namespace capbias
