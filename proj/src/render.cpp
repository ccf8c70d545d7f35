#include "fr/render.hpp"

#include <cmath>

namespace fr {

namespace {

constexpr double kDeg = M_PI / 180.0;

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

double norm_coord(int i) { return (i - 31.5) / 32.0; }

Image render_pre(const Scene& s, const RenderConfig& cfg, SceneCache* cache) {
    SceneCache local;
    SceneCache& c = cache ? *cache : local;
    const int n = kImageSize;
    const double inv2s2 = 1.0 / (2.0 * s.sigma * s.sigma);
    const double invs2 = 1.0 / (s.sigma * s.sigma);
    c.gx.setZero(kLandmarks, n);
    c.gy.setZero(kLandmarks, n);
    c.gxp.setZero(kLandmarks, n);
    c.gyp.setZero(kLandmarks, n);
    const double reach = 7.0 * s.sigma;
    auto support = [&](double center, int& lo, int& hi) {
        if (!std::isfinite(center)) {
            lo = 1;
            hi = 0;
            return;
        }
        lo = static_cast<int>(std::max(0.0, std::ceil(center - reach)));
        hi = static_cast<int>(std::min(n - 1.0, std::floor(center + reach)));
    };
    for (int k = 0; k < kLandmarks; ++k) {
        support(s.uv(k, 0), c.x0[k], c.x1[k]);
        support(s.uv(k, 1), c.y0[k], c.y1[k]);
        for (int i = c.x0[k]; i <= c.x1[k]; ++i) {
            const double dx = i - s.uv(k, 0);
            c.gx(k, i) = std::exp(-dx * dx * inv2s2);
            c.gxp(k, i) = c.gx(k, i) * dx * invs2;
        }
        for (int i = c.y0[k]; i <= c.y1[k]; ++i) {
            const double dy = i - s.uv(k, 1);
            c.gy(k, i) = std::exp(-dy * dy * inv2s2);
            c.gyp(k, i) = c.gy(k, i) * dy * invs2;
        }
    }

    const double cu = s.uv.col(0).mean(), cv = s.uv.col(1).mean();
    const double r = s.roll_deg * kDeg, cr = std::cos(r), sr = std::sin(r);
    const double ia2 = 1.0 / (cfg.mask_a * cfg.mask_a), ib2 = 1.0 / (cfg.mask_b * cfg.mask_b);
    c.mask.resize(n, n);
    c.dm_dcu.resize(n, n);
    c.dm_dcv.resize(n, n);
    c.dm_droll.resize(n, n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const double dx = x - cu, dy = y - cv;
            const double a = cr * dx - sr * dy, b = sr * dx + cr * dy;
            const double m = sigmoid(cfg.mask_slope * (1.0 - a * a * ia2 - b * b * ib2));
            const double k = m * (1 - m) * cfg.mask_slope;
            const double fa = -2.0 * a * ia2, fb = -2.0 * b * ib2;
            c.mask(y, x) = m;
            c.dm_dcu(y, x) = k * (fa * -cr + fb * -sr);
            c.dm_dcv(y, x) = k * (fa * sr + fb * -cr);
            c.dm_droll(y, x) = k * (fa * -b + fb * a) * kDeg;
        }
    }

    Image pre;
    for (int ch = 0; ch < 3; ++ch) {
        Mat& f = c.bgfield[ch];
        f.resize(n, n);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                f(y, x) = s.bg[ch] + s.bg_grad(ch, 0) * norm_coord(x) + s.bg_grad(ch, 1) * norm_coord(y);
        Mat& out = pre.ch[ch];
        out = f.cwiseProduct(Mat::Ones(n, n) - c.mask) + s.tint[ch] * c.mask;
        for (int k = 0; k < kLandmarks; ++k) {
            const double w = s.amp * s.palette(k, ch);
            if (w == 0 || c.x0[k] > c.x1[k] || c.y0[k] > c.y1[k]) continue;
            const int wx = c.x1[k] - c.x0[k] + 1, wy = c.y1[k] - c.y0[k] + 1;
            out.block(c.y0[k], c.x0[k], wy, wx).noalias() -=
                w * c.gy.row(k).segment(c.y0[k], wy).transpose() * c.gx.row(k).segment(c.x0[k], wx);
        }
    }
    return pre;
}

Image squash(const Image& pre, const RenderConfig& cfg) {
    Image out;
    for (int ch = 0; ch < 3; ++ch)
        out.ch[ch] = pre.ch[ch].unaryExpr([&](double v) { return sigmoid(cfg.squash * (v - 0.5)); });
    return out;
}

Image unsquash(const Image& img, const RenderConfig& cfg, Image* dpre_dimg) {
    Image pre;
    for (int ch = 0; ch < 3; ++ch) {
        pre.ch[ch].resize(kImageSize, kImageSize);
        if (dpre_dimg) dpre_dimg->ch[ch].resize(kImageSize, kImageSize);
        for (int y = 0; y < kImageSize; ++y)
            for (int x = 0; x < kImageSize; ++x) {
                double v = img.at(ch, y, x);
                const bool clamped = !(v > 1e-6 && v < 1 - 1e-6);
                if (!(v > 1e-6)) v = 1e-6;
                if (!(v < 1 - 1e-6)) v = 1 - 1e-6;
                pre.at(ch, y, x) = 0.5 + std::log(v / (1 - v)) / cfg.squash;
                if (dpre_dimg) dpre_dimg->at(ch, y, x) = clamped ? 0.0 : 1.0 / (cfg.squash * v * (1 - v));
            }
    }
    return pre;
}

SceneGrad scene_vjp(const Scene& s, const SceneCache& c, const Image& dpre) {
    SceneGrad g;
    const int n = kImageSize;
    Mat dmask = Mat::Zero(n, n);
    for (int ch = 0; ch < 3; ++ch) {
        const Mat& d = dpre.ch[ch];
        const Mat one_minus = Mat::Ones(n, n) - c.mask;
        const Mat dfield = d.cwiseProduct(one_minus);
        g.dbg[ch] = dfield.sum();
        double sx = 0, sy = 0;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                sx += dfield(y, x) * norm_coord(x);
                sy += dfield(y, x) * norm_coord(y);
            }
        g.dbg_grad(ch, 0) = sx;
        g.dbg_grad(ch, 1) = sy;
        g.dtint[ch] = d.cwiseProduct(c.mask).sum();
        dmask += d.cwiseProduct((Mat::Constant(n, n, s.tint[ch]) - c.bgfield[ch]));

        // blobs = gy^T diag(pal) gx, scaled by -amp.
        for (int k = 0; k < kLandmarks; ++k) {
            if (c.x0[k] > c.x1[k] || c.y0[k] > c.y1[k]) continue;
            const int wx = c.x1[k] - c.x0[k] + 1, wy = c.y1[k] - c.y0[k] + 1;
            const auto win = d.block(c.y0[k], c.x0[k], wy, wx);
            const Vec tx = win * c.gx.row(k).segment(c.x0[k], wx).transpose();
            const Vec txp = win * c.gxp.row(k).segment(c.x0[k], wx).transpose();
            const auto gyk = c.gy.row(k).segment(c.y0[k], wy);
            const double pal = s.palette(k, ch);
            g.dpalette(k, ch) = -s.amp * gyk.dot(tx);
            g.duv(k, 0) += -s.amp * pal * gyk.dot(txp);
            g.duv(k, 1) += -s.amp * pal * c.gyp.row(k).segment(c.y0[k], wy).dot(tx);
        }
    }
    const double dcu = dmask.cwiseProduct(c.dm_dcu).sum();
    const double dcv = dmask.cwiseProduct(c.dm_dcv).sum();
    g.droll_deg = dmask.cwiseProduct(c.dm_droll).sum();
    g.duv.col(0).array() += dcu / kLandmarks;
    g.duv.col(1).array() += dcv / kLandmarks;
    return g;
}

}  // namespace fr
