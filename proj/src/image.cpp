#include "capbias/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <deque>
#include <memory>

namespace capbias {

ImageF ImageU8::to_float() const {
    ImageF out(h, w, c);
    for (size_t i = 0; i < bytes.size(); ++i) out.v[i] = bytes[i] / 255.0;
    return out;
}

ImageU8 ImageU8::quantize(const ImageF& img) {
    if (img.h != kImageSize || img.w != kImageSize || img.c != 3)
        throw InvalidInput("ImageU8::quantize: expected 64x64x3 image");
    ImageU8 out;
    for (size_t i = 0; i < img.v.size(); ++i) {
        double x = img.v[i];
        if (x < 0.0) x = 0.0;
        if (x > 1.0) x = 1.0;
        out.bytes[i] = static_cast<uint8_t>(std::lround(x * 255.0));
    }
    return out;
}

size_t PersonMask::person_pixel_count() const {
    size_t n = 0;
    for (uint8_t x : m) n += (x == 0);
    return n;
}

bool PersonMask::person_region_connected() const {
    size_t total = person_pixel_count();
    if (total == 0) return false;
    // BFS from the first person pixel
    std::vector<uint8_t> seen(m.size(), 0);
    size_t start = 0;
    while (start < m.size() && m[start] != 0) ++start;
    std::deque<size_t> q{start};
    seen[start] = 1;
    size_t reached = 0;
    while (!q.empty()) {
        size_t i = q.front();
        q.pop_front();
        ++reached;
        int y = static_cast<int>(i) / w;
        int x = static_cast<int>(i) % w;
        const int dy[4] = {-1, 1, 0, 0};
        const int dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
            int ny = y + dy[k], nx = x + dx[k];
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            size_t j = static_cast<size_t>(ny) * w + nx;
            if (!seen[j] && m[j] == 0) {
                seen[j] = 1;
                q.push_back(j);
            }
        }
    }
    return reached == total;
}

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png(const std::string& path, const uint8_t* data, int h, int w, int channels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, w, h, 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y)
        rows[y] = const_cast<png_bytep>(data + static_cast<size_t>(y) * w * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void read_png(const std::string& path, std::vector<uint8_t>& out, int& h, int& w, int channels) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (channels == 3) {
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
        if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    } else {
        if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
            png_set_rgb_to_gray_fixed(png, 1, -1, -1);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    }
    png_read_update_info(png, info);
    out.assign(static_cast<size_t>(h) * w * channels, 0);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = out.data() + static_cast<size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace

void write_png_rgb(const std::string& path, const ImageU8& img) {
    write_png(path, img.bytes.data(), img.h, img.w, 3);
}

ImageU8 read_png_rgb(const std::string& path) {
    ImageU8 img;
    int h = 0, w = 0;
    read_png(path, img.bytes, h, w, 3);
    if (h != kImageSize || w != kImageSize)
        throw IoError("unexpected image shape in " + path + ": " + std::to_string(h) + "x" + std::to_string(w));
    img.h = h;
    img.w = w;
    return img;
}

void write_png_gray(const std::string& path, const PersonMask& mask) {
    std::vector<uint8_t> bytes(mask.m.size());
    for (size_t i = 0; i < mask.m.size(); ++i) bytes[i] = mask.m[i] ? 255 : 0;
    write_png(path, bytes.data(), mask.h, mask.w, 1);
}

PersonMask read_png_gray(const std::string& path) {
    std::vector<uint8_t> bytes;
    int h = 0, w = 0;
    read_png(path, bytes, h, w, 1);
    if (h != kImageSize || w != kImageSize)
        throw IoError("unexpected mask shape in " + path + ": " + std::to_string(h) + "x" + std::to_string(w));
    PersonMask mask;
    for (size_t i = 0; i < bytes.size(); ++i) mask.m[i] = bytes[i] >= 128 ? 1 : 0;
    return mask;
}

}  // namespace capbias
