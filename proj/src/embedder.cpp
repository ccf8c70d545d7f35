#include "fr/embedder.hpp"

#include <cmath>

namespace fr {

namespace {

ConvLayer make_layer(Rng& rng, int cin, int cout, int k, int stride, int pad) {
    ConvLayer l{cin, cout, k, stride, pad, Mat(), Vec()};
    l.w = rng.normal_mat(cout, cin * k * k, 1.5 / std::sqrt(cin * k * k));
    l.b = rng.normal_vec(cout, 0.1);
    return l;
}

int out_size(const ConvLayer& l, int in) { return (in + 2 * l.pad - l.k) / l.stride + 1; }

Mat im2col(const ConvLayer& l, const FeatureMap& in, int oh, int ow) {
    Mat cols = Mat::Zero(l.cin * l.k * l.k, oh * ow);
    for (int c = 0; c < l.cin; ++c)
        for (int ky = 0; ky < l.k; ++ky)
            for (int kx = 0; kx < l.k; ++kx) {
                const int row = (c * l.k + ky) * l.k + kx;
                for (int oy = 0; oy < oh; ++oy) {
                    const int y = oy * l.stride - l.pad + ky;
                    if (y < 0 || y >= in.h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int x = ox * l.stride - l.pad + kx;
                        if (x < 0 || x >= in.w) continue;
                        cols(row, oy * ow + ox) = in.data(c, y * in.w + x);
                    }
                }
            }
    return cols;
}

FeatureMap col2im(const ConvLayer& l, const Mat& dcols, int h, int w, int oh, int ow) {
    FeatureMap g{l.cin, h, w, Mat::Zero(l.cin, h * w)};
    for (int c = 0; c < l.cin; ++c)
        for (int ky = 0; ky < l.k; ++ky)
            for (int kx = 0; kx < l.k; ++kx) {
                const int row = (c * l.k + ky) * l.k + kx;
                for (int oy = 0; oy < oh; ++oy) {
                    const int y = oy * l.stride - l.pad + ky;
                    if (y < 0 || y >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int x = ox * l.stride - l.pad + kx;
                        if (x < 0 || x >= w) continue;
                        g.data(c, y * w + x) += dcols(row, oy * ow + ox);
                    }
                }
            }
    return g;
}

FeatureMap forward(const ConvLayer& l, const FeatureMap& in, LayerTrace* t) {
    const int oh = out_size(l, in.h), ow = out_size(l, in.w);
    Mat cols = im2col(l, in, oh, ow);
    FeatureMap out{l.cout, oh, ow, Mat()};
    out.data = ((l.w * cols).colwise() + l.b).array().tanh().matrix();
    if (t) {
        t->cols = std::move(cols);
        t->out = out.data;
    }
    return out;
}

FeatureMap backward(const ConvLayer& l, const LayerTrace& t, const Mat& dout, int h, int w) {
    const int oh = out_size(l, h), ow = out_size(l, w);
    const Mat dpre = dout.cwiseProduct((1.0 - t.out.array().square()).matrix());
    return col2im(l, l.w.transpose() * dpre, h, w, oh, ow);
}

FeatureMap input_map(const Image& img) {
    FeatureMap m{3, kImageSize, kImageSize, Mat(3, kImageSize * kImageSize)};
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < kImageSize; ++y)
            for (int x = 0; x < kImageSize; ++x) m.data(c, y * kImageSize + x) = img.at(c, y, x) - 0.5;
    return m;
}

Image to_image(const FeatureMap& g) {
    Image out;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < kImageSize; ++y)
            for (int x = 0; x < kImageSize; ++x) out.at(c, y, x) = g.data(c, y * kImageSize + x);
    return out;
}

}  // namespace

FrozenEmbedder build_embedder(std::uint64_t seed) {
    Rng rng(seed ^ 0xe3bedULL);
    FrozenEmbedder e;
    e.seed = seed;
    e.id1 = make_layer(rng, 3, 16, 5, 2, 2);
    e.id2 = make_layer(rng, 16, 32, 3, 2, 1);
    e.id_fc = rng.normal_mat(kEmbedDim, 32, 1.0 / std::sqrt(32.0));
    e.p1 = make_layer(rng, 3, 8, 3, 1, 1);
    e.p2 = make_layer(rng, 8, 16, 3, 2, 1);
    e.p3 = make_layer(rng, 16, 16, 3, 2, 1);
    return e;
}

Vec identity_embed(const FrozenEmbedder& e, const Image& img, IdentityTrace* trace) {
    IdentityTrace local;
    IdentityTrace& t = trace ? *trace : local;
    const FeatureMap a = forward(e.id1, input_map(img), &t.l1);
    const FeatureMap b = forward(e.id2, a, &t.l2);
    t.pooled = b.data.rowwise().mean();
    t.raw = e.id_fc * t.pooled;
    const double n = t.raw.norm();
    t.unit = n > 0 ? Vec(t.raw / n) : Vec(Vec::Unit(kEmbedDim, 0));
    return t.unit;
}

Image identity_embed_vjp(const FrozenEmbedder& e, const IdentityTrace& t, const Vec& dunit) {
    const double n = t.raw.norm();
    Vec draw = Vec::Zero(kEmbedDim);
    if (n > 0) draw = (dunit - t.unit * t.unit.dot(dunit)) / n;
    const Vec dpooled = e.id_fc.transpose() * draw;
    const int h2 = 16, h1 = 32;
    const Mat dout2 = dpooled.replicate(1, h2 * h2) / static_cast<double>(h2 * h2);
    const FeatureMap d1 = backward(e.id2, t.l2, dout2, h1, h1);
    return to_image(backward(e.id1, t.l1, d1.data, kImageSize, kImageSize));
}

PerceptualFeatures perceptual_features(const FrozenEmbedder& e, const Image& img, PerceptualTrace* trace) {
    PerceptualFeatures f;
    f[0] = forward(e.p1, input_map(img), trace ? &trace->layers[0] : nullptr);
    f[1] = forward(e.p2, f[0], trace ? &trace->layers[1] : nullptr);
    f[2] = forward(e.p3, f[1], trace ? &trace->layers[2] : nullptr);
    return f;
}

Image perceptual_vjp(const FrozenEmbedder& e, const PerceptualTrace& t, const std::array<Mat, 3>& dfeat) {
    FeatureMap d2 = backward(e.p3, t.layers[2], dfeat[2], 32, 32);
    d2.data += dfeat[1];
    FeatureMap d1 = backward(e.p2, t.layers[1], d2.data, kImageSize, kImageSize);
    d1.data += dfeat[0];
    return to_image(backward(e.p1, t.layers[0], d1.data, kImageSize, kImageSize));
}

double perceptual_distance(const PerceptualFeatures& a, const PerceptualFeatures& b) {
    double d = 0;
    for (int s = 0; s < 3; ++s) d += (a[s].data - b[s].data).squaredNorm() / static_cast<double>(a[s].data.size());
    return d;
}

double cosine_similarity(const Vec& a, const Vec& b) {
    const double n = a.norm() * b.norm();
    return n > 0 ? a.dot(b) / n : 0.0;
}

Checkpoint save_embedder(const FrozenEmbedder& e) {
    Checkpoint ck("embedder", 1);
    ck.put_int("seed", static_cast<std::int64_t>(e.seed));
    auto put_layer = [&](const std::string& name, const ConvLayer& l) {
        Mat shape(1, 5);
        shape << l.cin, l.cout, l.k, l.stride, l.pad;
        ck.put(name + ".shape", shape);
        ck.put(name + ".w", l.w);
        ck.put(name + ".b", l.b);
    };
    put_layer("id1", e.id1);
    put_layer("id2", e.id2);
    ck.put("id_fc", e.id_fc);
    put_layer("p1", e.p1);
    put_layer("p2", e.p2);
    put_layer("p3", e.p3);
    return ck;
}

FrozenEmbedder load_embedder(const Checkpoint& ck) {
    ck.expect_kind("embedder");
    FrozenEmbedder e;
    e.seed = static_cast<std::uint64_t>(ck.integer("seed"));
    auto get_layer = [&](const std::string& name) {
        const Mat& s = ck.mat(name + ".shape");
        ConvLayer l{static_cast<int>(s(0, 0)), static_cast<int>(s(0, 1)), static_cast<int>(s(0, 2)),
                    static_cast<int>(s(0, 3)), static_cast<int>(s(0, 4)), ck.mat(name + ".w"), ck.vec(name + ".b")};
        if (l.w.rows() != l.cout || l.w.cols() != l.cin * l.k * l.k || l.b.size() != l.cout)
            throw Error("checkpoint_corrupt", "layer " + name + " has inconsistent shape");
        return l;
    };
    e.id1 = get_layer("id1");
    e.id2 = get_layer("id2");
    e.id_fc = ck.mat("id_fc");
    e.p1 = get_layer("p1");
    e.p2 = get_layer("p2");
    e.p3 = get_layer("p3");
    return e;
}

std::string embedder_checksum(const FrozenEmbedder& e) { return sha256_hex(save_embedder(e).serialize()); }

}  // namespace fr
