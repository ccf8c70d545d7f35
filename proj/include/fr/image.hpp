#pragma once

#include "fr/core.hpp"

#include <array>
#include <string>

namespace fr {

constexpr int kImageSize = 64;

// 64x64 RGB raster; each channel is a matrix indexed (y, x).
struct Image {
    std::array<Mat, 3> ch;

    Image() {
        for (auto& c : ch) c = Mat::Zero(kImageSize, kImageSize);
    }
    static Image constant(double v) {
        Image im;
        for (auto& c : im.ch) c.setConstant(v);
        return im;
    }

    double& at(int c, int y, int x) { return ch[c](y, x); }
    double at(int c, int y, int x) const { return ch[c](y, x); }

    Image& operator+=(const Image& o) {
        for (int c = 0; c < 3; ++c) ch[c] += o.ch[c];
        return *this;
    }
    Image& operator*=(double s) {
        for (auto& c : ch) c *= s;
        return *this;
    }
    double sum() const { return ch[0].sum() + ch[1].sum() + ch[2].sum(); }
    double abs_sum() const {
        return ch[0].cwiseAbs().sum() + ch[1].cwiseAbs().sum() + ch[2].cwiseAbs().sum();
    }
    bool all_finite() const { return ch[0].allFinite() && ch[1].allFinite() && ch[2].allFinite(); }
    bool operator==(const Image& o) const { return ch[0] == o.ch[0] && ch[1] == o.ch[1] && ch[2] == o.ch[2]; }
};

double mean_abs_diff(const Image& a, const Image& b);

// 8-bit RGB PNG encoding; values are clamped to [0,1] and rounded.
std::string encode_png(const Image& im);
// Decodes any PNG libpng understands into a 64x64 RGB image; other sizes are rejected.
Image decode_png(const std::string& bytes);

// SHA-256 of the PNG encoding, used as the content-addressed image key.
std::string image_hash(const Image& im);

// 8-bit quantization round trip, equal to decode_png(encode_png(im)).
Image quantize8(const Image& im);

}  // namespace fr
