#include "fr/image.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <vector>

namespace fr {

double mean_abs_diff(const Image& a, const Image& b) {
    double s = 0;
    for (int c = 0; c < 3; ++c) s += (a.ch[c] - b.ch[c]).cwiseAbs().sum();
    return s / (3.0 * kImageSize * kImageSize);
}

namespace {

unsigned char to_byte(double v) {
    if (!(v > 0)) return 0;
    if (v >= 1) return 255;
    return static_cast<unsigned char>(std::lround(v * 255.0));
}

void write_cb(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), len);
}

struct ReadState {
    const std::string* src;
    size_t pos;
};

void read_cb(png_structp png, png_bytep data, png_size_t len) {
    auto* st = static_cast<ReadState*>(png_get_io_ptr(png));
    if (st->pos + len > st->src->size()) png_error(png, "truncated PNG");
    std::memcpy(data, st->src->data() + st->pos, len);
    st->pos += len;
}

}  // namespace

std::string encode_png(const Image& im) {
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    std::string out;
    std::vector<unsigned char> rows(kImageSize * kImageSize * 3);
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x)
            for (int c = 0; c < 3; ++c) rows[(y * kImageSize + x) * 3 + c] = to_byte(im.at(c, y, x));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("png", "PNG encoding failed");
    }
    png_set_write_fn(png, &out, write_cb, nullptr);
    png_set_IHDR(png, info, kImageSize, kImageSize, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < kImageSize; ++y) png_write_row(png, rows.data() + y * kImageSize * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

Image decode_png(const std::string& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
        throw Error("bad_image", "not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    ReadState st{&bytes, 0};
    std::vector<unsigned char> buf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("bad_image", "PNG decoding failed");
    }
    png_set_read_fn(png, &st, read_cb);
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    if (w != kImageSize || h != kImageSize) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("bad_image", "image must be 64x64");
    }
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const size_t stride = png_get_rowbytes(png, info);
    buf.resize(stride * h);
    std::vector<png_bytep> ptrs(h);
    for (png_uint_32 y = 0; y < h; ++y) ptrs[y] = buf.data() + y * stride;
    png_read_image(png, ptrs.data());
    png_destroy_read_struct(&png, &info, nullptr);
    Image im;
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x)
            for (int c = 0; c < 3; ++c) im.at(c, y, x) = buf[y * stride + x * 3 + c] / 255.0;
    return im;
}

std::string image_hash(const Image& im) { return sha256_hex(encode_png(im)); }

Image quantize8(const Image& im) {
    Image out;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < kImageSize; ++y)
            for (int x = 0; x < kImageSize; ++x) out.at(c, y, x) = to_byte(im.at(c, y, x)) / 255.0;
    return out;
}

}  // namespace fr
