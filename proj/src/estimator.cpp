#include "fr/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fr {

namespace {

constexpr int kPix = kImageSize * kImageSize;
constexpr int kGlobal = 15;  // cu, cv, roll, bg(3), tint(3), bg_grad(6)
constexpr int kInter = 2 * kLandmarks + kGlobal;
constexpr int kOffsets = 9;
constexpr int kFeatures = kLandmarks * kOffsets * 3;

// Separable Gaussian smoothing, renormalized at the borders.
struct BlurKernel {
    int rad = 0;
    Mat w;  // 64 x (2 rad + 1) normalized weights per output index
};

BlurKernel blur_kernel(double s) {
    BlurKernel k;
    k.rad = static_cast<int>(std::ceil(3 * s));
    k.w = Mat::Zero(kImageSize, 2 * k.rad + 1);
    for (int i = 0; i < kImageSize; ++i) {
        for (int t = -k.rad; t <= k.rad; ++t)
            if (i + t >= 0 && i + t < kImageSize) k.w(i, t + k.rad) = std::exp(-t * t / (2 * s * s));
        k.w.row(i) /= k.w.row(i).sum();
    }
    return k;
}

Mat blur_rows(const Mat& m, const BlurKernel& k) {
    Mat out = Mat::Zero(kImageSize, kImageSize);
    for (int x = 0; x < kImageSize; ++x)
        for (int y = 0; y < kImageSize; ++y) {
            double acc = 0;
            const int lo = std::max(0, y - k.rad), hi = std::min(kImageSize - 1, y + k.rad);
            for (int t = lo; t <= hi; ++t) acc += k.w(y, t - y + k.rad) * m(t, x);
            out(y, x) = acc;
        }
    return out;
}

Image blur(const Image& im, double s) {
    if (s <= 0) return im;
    const BlurKernel k = blur_kernel(s);
    Image out;
    for (int c = 0; c < 3; ++c) out.ch[c] = blur_rows(blur_rows(im.ch[c], k).transpose(), k).transpose();
    return out;
}

PoseParams params_of(const Vec& x) { return PoseParams::from_full(x.head(kParamDim)); }

// Blob centers and their Jacobian (136 x 25, u rows then v rows) with respect to [theta, p_e, p_i].
Landmarks landmark_jacobian(const ShapeModel& shape, const Vec& x, Mat* jac) {
    const PoseParams p = params_of(x);
    const Shape s0 = reconstruct_shape(shape, p.identity, p.expression);
    const Mat3 r = rotation_matrix(p.theta);
    const Landmarks uv = project_landmarks(s0 * r.transpose());
    if (!jac) return uv;
    jac->resize(2 * kLandmarks, kParamDim);
    auto put = [&](int col, const Shape& ds) {
        jac->col(col).head(kLandmarks) = kProjScale * ds.col(0);
        jac->col(col).tail(kLandmarks) = -kProjScale * ds.col(1);
    };
    const auto dr = rotation_jacobian(p.theta);
    for (int a = 0; a < 3; ++a) put(a, s0 * dr[a].transpose());
    auto basis_shape = [](const Mat& basis, int j) {
        Shape d;
        for (int k = 0; k < kLandmarks; ++k)
            for (int a = 0; a < 3; ++a) d(k, a) = basis(3 * k + a, j);
        return d;
    };
    for (int j = 0; j < kExpressionDim; ++j) put(3 + j, basis_shape(shape.expression_basis, j) * r.transpose());
    for (int j = 0; j < kIdentityDim; ++j) put(kPoseDim + j, basis_shape(shape.identity_basis, j) * r.transpose());
    return uv;
}

Scene fit_scene(const PoseRegressor& reg, const Vec& x, double blur_sigma, Mat* jac) {
    Scene s;
    s.uv = landmark_jacobian(reg.shape, x, jac);
    s.roll_deg = x[2];
    s.bg = x.segment<3>(kParamDim);
    s.tint = x.segment<3>(kParamDim + 3);
    for (int c = 0; c < 3; ++c) {
        s.bg_grad(c, 0) = x[kParamDim + 6 + 2 * c];
        s.bg_grad(c, 1) = x[kParamDim + 7 + 2 * c];
    }
    s.palette = reg.palette;
    const double b2 = reg.render.blob_sigma * reg.render.blob_sigma;
    s.sigma = std::sqrt(b2 + blur_sigma * blur_sigma);
    s.amp = b2 / (s.sigma * s.sigma);
    return s;
}

double residual(const Image& model, const Image& target, Image* r) {
    double cost = 0;
    for (int c = 0; c < 3; ++c) {
        r->ch[c] = model.ch[c] - target.ch[c];
        cost += r->ch[c].squaredNorm();
    }
    return 0.5 * cost;
}

Vec flat(const Mat& m) { return Eigen::Map<const Vec>(m.data(), m.size()); }

// Per channel, the raster Jacobian for the global intermediates has 7 non-zero
// columns: [cu, cv, roll, bg, tint, bg_x, bg_y]. Global index of local column l:
int global_index(int ch, int l) {
    static constexpr int base[7] = {0, 1, 2, 3, 6, 9, 10};
    return l < 3 ? l : l < 5 ? base[l] + ch : base[l] + 2 * ch;
}

std::array<Mat, 3> global_columns(const Scene& s, const SceneCache& c) {
    std::array<Mat, 3> jc;
    const double* m = c.mask.data();
    for (int ch = 0; ch < 3; ++ch) {
        Mat& j = jc[ch];
        j.resize(kPix, 7);
        const double* bgf = c.bgfield[ch].data();
        for (int x = 0; x < kImageSize; ++x)
            for (int y = 0; y < kImageSize; ++y) {
                const int i = x * kImageSize + y;
                const double a = s.tint[ch] - bgf[i], om = 1.0 - m[i];
                j(i, 0) = a * c.dm_dcu.data()[i];
                j(i, 1) = a * c.dm_dcv.data()[i];
                j(i, 2) = a * c.dm_droll.data()[i];
                j(i, 3) = om;
                j(i, 4) = m[i];
                j(i, 5) = norm_coord(x) * om;
                j(i, 6) = norm_coord(y) * om;
            }
    }
    return jc;
}

// Maps intermediates z = [u, v, cu, cv, roll, appearance] to the fit vector.
Mat intermediate_jacobian(const Mat& luv) {
    Mat t = Mat::Zero(kInter, kFitDim);
    t.topLeftCorner(2 * kLandmarks, kParamDim) = luv;
    t.row(2 * kLandmarks).head(kParamDim) = luv.topRows(kLandmarks).colwise().mean();
    t.row(2 * kLandmarks + 1).head(kParamDim) = luv.bottomRows(kLandmarks).colwise().mean();
    t(2 * kLandmarks + 2, 2) = 1.0;
    for (int j = 0; j < 12; ++j) t(2 * kLandmarks + 3 + j, kParamDim + j) = 1.0;
    return t;
}

// Gram matrix of the raster Jacobian in intermediate coordinates. Blob columns are
// separable so their inner products factor into 1-D profile products.
Mat intermediate_gram(const Scene& s, const SceneCache& c, const std::array<Mat, 3>& jc) {
    const int n = kLandmarks;
    Mat g = Mat::Zero(kInter, kInter);
    const Mat aa = s.amp * s.amp * s.palette * s.palette.transpose();
    // Profile inner products over the overlap of the two supports.
    auto overlap = [](const Mat& p, const Mat& q, int k, int l, int lo, int hi) {
        return p.row(k).segment(lo, hi - lo + 1).dot(q.row(l).segment(lo, hi - lo + 1));
    };
    for (int k = 0; k < n; ++k) {
        for (int l = 0; l < n; ++l) {
            const int xl = std::max(c.x0[k], c.x0[l]), xh = std::min(c.x1[k], c.x1[l]);
            const int yl = std::max(c.y0[k], c.y0[l]), yh = std::min(c.y1[k], c.y1[l]);
            if (xl > xh || yl > yh) continue;
            if (l >= k) {
                const double yy = overlap(c.gy, c.gy, k, l, yl, yh), xx = overlap(c.gx, c.gx, k, l, xl, xh);
                g(k, l) = g(l, k) = aa(k, l) * yy * overlap(c.gxp, c.gxp, k, l, xl, xh);
                g(n + k, n + l) = g(n + l, n + k) = aa(k, l) * overlap(c.gyp, c.gyp, k, l, yl, yh) * xx;
            }
            g(k, n + l) = g(n + l, k) = aa(k, l) * overlap(c.gy, c.gyp, k, l, yl, yh) * overlap(c.gxp, c.gx, k, l, xl, xh);
        }
    }

    // Blob against global columns, on the blob support.
    for (int k = 0; k < n; ++k) {
        const int x0 = c.x0[k], x1 = c.x1[k], y0 = c.y0[k], y1 = c.y1[k];
        if (x0 > x1 || y0 > y1) continue;
        const int wx = x1 - x0 + 1, wy = y1 - y0 + 1;
        for (int ch = 0; ch < 3; ++ch) {
            const double w = -s.amp * s.palette(k, ch);
            if (w == 0) continue;
            const Vec gy = c.gy.row(k).segment(y0, wy).transpose(), gyp = c.gyp.row(k).segment(y0, wy).transpose();
            const Vec gx = c.gx.row(k).segment(x0, wx).transpose(), gxp = c.gxp.row(k).segment(x0, wx).transpose();
            for (int l = 0; l < 7; ++l) {
                const int j = global_index(ch, l);
                const Eigen::Map<const Mat> img(jc[ch].col(l).data(), kImageSize, kImageSize);
                const auto win = img.block(y0, x0, wy, wx);
                g(k, 2 * n + j) += w * gy.dot(win * gxp);
                g(n + k, 2 * n + j) += w * gyp.dot(win * gx);
            }
        }
    }
    g.block(2 * n, 0, kGlobal, 2 * n) = g.block(0, 2 * n, 2 * n, kGlobal).transpose();
    for (int ch = 0; ch < 3; ++ch) {
        const Mat gc = jc[ch].transpose() * jc[ch];
        for (int a = 0; a < 7; ++a)
            for (int b = 0; b < 7; ++b) g(2 * n + global_index(ch, a), 2 * n + global_index(ch, b)) += gc(a, b);
    }
    return g;
}

// J^T r in fit coordinates.
Vec fit_gradient(const Scene& s, const SceneCache& c, const Mat& luv, const Image& r) {
    const SceneGrad sg = scene_vjp(s, c, r);
    Vec duv(2 * kLandmarks);
    duv << sg.duv.col(0), sg.duv.col(1);
    Vec g = Vec::Zero(kFitDim);
    g.head(kParamDim) = luv.transpose() * duv;
    g[2] += sg.droll_deg;
    g.segment<3>(kParamDim) = sg.dbg;
    g.segment<3>(kParamDim + 3) = sg.dtint;
    for (int ch = 0; ch < 3; ++ch) {
        g[kParamDim + 6 + 2 * ch] = sg.dbg_grad(ch, 0);
        g[kParamDim + 7 + 2 * ch] = sg.dbg_grad(ch, 1);
    }
    return g;
}

// Closed-form appearance for fixed geometry: per channel the model is linear in
// [bg, tint, bg_x, bg_y].
void solve_appearance(const PoseRegressor& reg, Vec& x, const Image& target, double blur_sigma) {
    Vec z = x;
    z.tail(12).setZero();
    SceneCache c;
    const Image base = render_pre(fit_scene(reg, z, blur_sigma, nullptr), reg.render, &c);
    const Mat om = Mat::Ones(kImageSize, kImageSize) - c.mask;
    for (int ch = 0; ch < 3; ++ch) {
        Mat a(kPix, 4);
        a.col(0) = flat(om);
        a.col(1) = flat(c.mask);
        for (int y = 0; y < kImageSize; ++y)
            for (int xx = 0; xx < kImageSize; ++xx) {
                a(xx * kImageSize + y, 2) = norm_coord(xx) * om(y, xx);
                a(xx * kImageSize + y, 3) = norm_coord(y) * om(y, xx);
            }
        const Vec rhs = flat(target.ch[ch] - base.ch[ch]);
        const Mat ata = a.transpose() * a + 1e-9 * Mat::Identity(4, 4);
        const Vec sol = ata.ldlt().solve(a.transpose() * rhs);
        x[kParamDim + ch] = sol[0];
        x[kParamDim + 3 + ch] = sol[1];
        x[kParamDim + 6 + 2 * ch] = sol[2];
        x[kParamDim + 7 + 2 * ch] = sol[3];
    }
}

// Bilinear sample with clamp-to-edge.
double bilinear(const Mat& img, double px, double py) {
    if (!std::isfinite(px) || !std::isfinite(py)) return std::numeric_limits<double>::quiet_NaN();
    px =std::clamp(px, 0.0, kImageSize - 1.0);
    py = std::clamp(py, 0.0, kImageSize - 1.0);
    const int x0 = std::min(static_cast<int>(px), kImageSize - 2), y0 = std::min(static_cast<int>(py), kImageSize - 2);
    const double fx = px - x0, fy = py - y0;
    return (1 - fy) * ((1 - fx) * img(y0, x0) + fx * img(y0, x0 + 1)) +
           fy * ((1 - fx) * img(y0 + 1, x0) + fx * img(y0 + 1, x0 + 1));
}

// Samples of the image smoothed at width sigma, on a 3x3 grid of spacing sigma
// around every model landmark.
Eigen::VectorXf coarse_features(const ShapeModel& shape, const Image& smooth, const Vec& params, double sigma) {
    Eigen::VectorXf f(kFeatures);
    const Landmarks uv = landmark_jacobian(shape, params, nullptr);
    int i = 0;
    for (int k = 0; k < kLandmarks; ++k)
        for (int oy = -1; oy <= 1; ++oy)
            for (int ox = -1; ox <= 1; ++ox)
                for (int ch = 0; ch < 3; ++ch)
                    f[i++] = static_cast<float>(bilinear(smooth.ch[ch], uv(k, 0) + ox * sigma, uv(k, 1) + oy * sigma));
    return f;
}

Vec apply_stage(const CoarseStage& st, const Eigen::VectorXf& f) {
    const Vec z = ((f.cast<double>() - st.mu).array() / st.sd.array()).matrix();
    return st.r.topRows(kFeatures).transpose() * z + st.r.row(kFeatures).transpose();
}

void clamp_params(const PoseRegressor& reg, Vec& p) {
    for (int j = 0; j < kParamDim; ++j) {
        const double span = reg.range_hi[j] - reg.range_lo[j];
        p[j] = std::clamp(p[j], reg.range_lo[j] - span, reg.range_hi[j] + span);
    }
}

struct FitState {
    Scene scene;
    SceneCache cache;
    Mat luv;
    Image r;
    double cost = 0;
};

FitState evaluate_fit(const PoseRegressor& reg, const Vec& x, const Image& target, double blur_sigma) {
    FitState st;
    st.scene = fit_scene(reg, x, blur_sigma, &st.luv);
    const Image model = render_pre(st.scene, reg.render, &st.cache);
    st.cost = residual(model, target, &st.r);
    return st;
}

bool finite(const Vec& v) { return v.allFinite(); }

}  // namespace

LatentCode sample_training_code(const ToyGenerator& gen, Rng& rng, int i) {
    return i % 2 == 0 ? sample_wplus(gen, rng) : sample_wplus(gen, rng, 1.4, 0.05);
}

Vec coarse_estimate(const PoseRegressor& reg, const Image& image) {
    Vec p = reg.init;
    for (const CoarseStage& st : reg.stages) {
        p += apply_stage(st, coarse_features(reg.shape, blur(image, st.sigma), p, st.sigma));
        clamp_params(reg, p);
    }
    return p;
}

namespace {

// Damped Gauss-Newton over a coarse-to-fine blur schedule, starting from coarse parameters.
Vec run_schedule(const PoseRegressor& reg, const Image& pre, const Vec& coarse,
                 const std::vector<std::pair<double, int>>& schedule, int* iterations) {
    Vec x = Vec::Zero(kFitDim);
    x.head(kParamDim) = coarse;
    bool first = true;
    for (const auto& [blur_sigma, iters] : schedule) {
        const Image target = blur(pre, blur_sigma);
        if (first) solve_appearance(reg, x, target, blur_sigma);
        first = false;
        FitState st = evaluate_fit(reg, x, target, blur_sigma);
        double lambda = 1e-3;
        for (int it = 0; it < iters; ++it) {
            const Mat t = intermediate_jacobian(st.luv);
            const Mat h = t.transpose() * intermediate_gram(st.scene, st.cache, global_columns(st.scene, st.cache)) * t;
            const Vec g = fit_gradient(st.scene, st.cache, st.luv, st.r);
            ++*iterations;
            bool accepted = false;
            double step = 0;
            for (int tries = 0; tries < 8 && !accepted; ++tries) {
                Mat hd = h;
                hd.diagonal() += lambda * h.diagonal().cwiseMax(1e-12);
                const Vec dx = -hd.ldlt().solve(g);
                if (!finite(dx)) {
                    lambda *= 10;
                    continue;
                }
                const Vec xn = x + dx;
                FitState sn = evaluate_fit(reg, xn, target, blur_sigma);
                if (std::isfinite(sn.cost) && sn.cost <= st.cost) {
                    x = xn;
                    st = std::move(sn);
                    step = dx.lpNorm<Eigen::Infinity>();
                    accepted = true;
                    lambda = std::max(lambda / 10, 1e-9);
                } else {
                    lambda *= 10;
                }
            }
            if (!accepted || step < reg.step_tolerance) break;
        }
    }
    return x;
}

}  // namespace

PoseEstimate estimate_pose(const PoseRegressor& reg, const Image& image, EstimateTrace* trace) {
    Image dpre;
    const Image pre = unsquash(image, reg.render, &dpre);
    const Vec coarse = coarse_estimate(reg, image);

    // Fit at full resolution first; a large residual means the start was outside the
    // basin, so retry through the blurred schedule.
    PoseEstimate out;
    Vec x = run_schedule(reg, pre, coarse, {{0.0, reg.fast_iterations}}, &out.iterations);
    FitState st = evaluate_fit(reg, x, pre, 0.0);
    if (!(std::sqrt(2 * st.cost / (3.0 * kPix)) <= reg.retry_residual)) {
        const Vec y = run_schedule(reg, pre, coarse, reg.schedule, &out.iterations);
        FitState sy = evaluate_fit(reg, y, pre, 0.0);
        if (sy.cost < st.cost || !std::isfinite(st.cost)) {
            x = y;
            st = std::move(sy);
        }
    }
    out.fit = x;
    out.pose = params_of(x);
    out.residual_rms = std::sqrt(2 * st.cost / (3.0 * kPix));
    if (trace) {
        trace->fit = x;
        trace->jc = global_columns(st.scene, st.cache);
        trace->t = intermediate_jacobian(st.luv);
        const Mat h = trace->t.transpose() * intermediate_gram(st.scene, st.cache, trace->jc) * trace->t;
        trace->h = (h + 1e-10 * Mat::Identity(kFitDim, kFitDim)).ldlt();
        trace->scene = st.scene;
        trace->cache = st.cache;
        trace->dpre_dimg = dpre;
    }
    return out;
}

Image estimate_vjp(const PoseRegressor& reg, const EstimateTrace& tr, const Vec& dfull) {
    require(dfull.size() == kParamDim, "dfull must have 25 entries");
    (void)reg;
    // The fit solves J^T (M(x) - T) = 0, so dx/dT = H^-1 J^T and dL/dT = J H^-1 dL/dx.
    Vec dx = Vec::Zero(kFitDim);
    dx.head(kParamDim) = dfull;
    const Vec lam = tr.h.solve(dx);
    const Vec z = tr.t * lam;
    const Scene& s = tr.scene;
    const SceneCache& c = tr.cache;
    const Vec zu = z.head(kLandmarks), zv = z.segment(kLandmarks, kLandmarks);
    const Vec zg = z.tail(kGlobal);
    Image out;
    for (int ch = 0; ch < 3; ++ch) {
        const Vec pu = -s.amp * s.palette.col(ch).cwiseProduct(zu);
        const Vec pv = -s.amp * s.palette.col(ch).cwiseProduct(zv);
        Mat d = c.gy.transpose() * pu.asDiagonal() * c.gxp + c.gyp.transpose() * pv.asDiagonal() * c.gx;
        Vec zl(7);
        for (int l = 0; l < 7; ++l) zl[l] = zg[global_index(ch, l)];
        const Vec dense = tr.jc[ch] * zl;
        d += Eigen::Map<const Mat>(dense.data(), kImageSize, kImageSize);
        out.ch[ch] = d.cwiseProduct(tr.dpre_dimg.ch[ch]);
    }
    return out;
}

RegressorReport evaluate_regressor(const PoseRegressor& reg, const ToyGenerator& gen, int n, std::uint64_t seed) {
    Rng rng(seed);
    Vec se = Vec::Zero(kParamDim);
    for (int i = 0; i < n; ++i) {
        const LatentCode w = sample_wplus(gen, rng);
        RenderTrace tr;
        const Image img = generate(gen, w, &tr);
        const Vec err = estimate_pose(reg, img).pose.full() - tr.params.pose.full();
        se += err.cwiseAbs2();
    }
    RegressorReport rep;
    rep.rel_rmse = ((se / std::max(n, 1)).cwiseSqrt().array() / (reg.range_hi - reg.range_lo).array()).matrix();
    rep.max_rel_rmse = rep.rel_rmse.maxCoeff();
    return rep;
}

PoseRegressor train_regressor(const ToyGenerator& gen, const RegressorTrainConfig& cfg, RegressorReport* report) {
    require(cfg.n_samples >= 100, "train_regressor needs at least 100 samples");
    PoseRegressor reg;
    reg.shape = gen.shape;
    reg.palette = gen.app.palette;
    reg.render = gen.render;

    Rng rng(cfg.seed);
    const int n = cfg.n_samples;
    std::vector<GenParams> params(n);
    Mat truth(n, kParamDim);
    for (int i = 0; i < n; ++i) {
        params[i] = calibrate(gen, semantic_params(gen, sample_training_code(gen, rng, i)));
        truth.row(i) = params[i].pose.full().transpose();
    }
    reg.init = truth.colwise().mean().transpose();
    reg.range_lo.resize(kParamDim);
    reg.range_hi.resize(kParamDim);
    // Ranges come from the default-distribution half (even indices).
    for (int j = 0; j < kParamDim; ++j) {
        std::vector<double> col;
        for (int i = 0; i < n; i += 2) col.push_back(truth(i, j));
        std::sort(col.begin(), col.end());
        const size_t m = col.size() - 1;
        reg.range_lo[j] = col[static_cast<size_t>(0.01 * m)];
        reg.range_hi[j] = col[static_cast<size_t>(0.99 * m)];
    }

    Mat cur = reg.init.transpose().replicate(n, 1);
    Eigen::MatrixXf feats(n, kFeatures);
    for (double sigma : cfg.stage_sigmas) {
        for (int i = 0; i < n; ++i) {
            const Image img = blur(render_params(gen, params[i]), sigma);
            feats.row(i) = coarse_features(reg.shape, img, cur.row(i).transpose(), sigma).transpose();
        }
        CoarseStage st;
        st.sigma = sigma;
        st.mu = feats.cast<double>().colwise().mean().transpose();
        st.sd = Vec(kFeatures);
        for (int j = 0; j < kFeatures; ++j) {
            const double v = (feats.col(j).cast<double>().array() - st.mu[j]).square().mean();
            st.sd[j] = std::sqrt(v) + 1e-6;
        }
        Mat xtx = Mat::Zero(kFeatures + 1, kFeatures + 1);
        Mat xty = Mat::Zero(kFeatures + 1, kParamDim);
        const int block = 500;
        for (int b0 = 0; b0 < n; b0 += block) {
            const int bn = std::min(block, n - b0);
            Mat xb(bn, kFeatures + 1);
            for (int i = 0; i < bn; ++i) {
                xb.row(i).head(kFeatures) =
                    ((feats.row(b0 + i).cast<double>().transpose() - st.mu).array() / st.sd.array()).matrix().transpose();
                xb(i, kFeatures) = 1.0;
            }
            xtx.selfadjointView<Eigen::Lower>().rankUpdate(xb.transpose());
            xty += xb.transpose() * (truth.middleRows(b0, bn) - cur.middleRows(b0, bn));
        }
        xtx = xtx.selfadjointView<Eigen::Lower>();
        Mat reg_diag = Mat::Identity(kFeatures + 1, kFeatures + 1) * (cfg.ridge * n);
        reg_diag(kFeatures, kFeatures) = 0;
        st.r = (xtx + reg_diag).ldlt().solve(xty);
        for (int i = 0; i < n; ++i) {
            Vec p = cur.row(i).transpose() + apply_stage(st, feats.row(i).transpose());
            clamp_params(reg, p);
            cur.row(i) = p.transpose();
        }
        reg.stages.push_back(std::move(st));
    }

    const RegressorReport rep = evaluate_regressor(reg, gen, cfg.n_heldout, cfg.seed ^ 0x4e1d07ULL);
    if (report) *report = rep;
    if (rep.max_rel_rmse >= cfg.tolerance)
        throw Error("training_failure",
                    "held-out parameter RMSE " + std::to_string(rep.max_rel_rmse) + " of range exceeds " +
                        std::to_string(cfg.tolerance));
    return reg;
}

Checkpoint save_regressor(const PoseRegressor& r) {
    Checkpoint ck("regressor", 1);
    const Checkpoint sm = save_shape_model(r.shape);
    for (const auto& [name, value] : sm.entries()) {
        if (name == "kind" || name == "version") continue;
        if (const Mat* m = std::get_if<Mat>(&value)) ck.put("shape." + name, *m);
        else if (const auto* v = std::get_if<std::int64_t>(&value)) ck.put_int("shape." + name, *v);
    }
    ck.put("palette", r.palette);
    Mat rc(1, 5);
    rc << r.render.blob_sigma, r.render.mask_a, r.render.mask_b, r.render.mask_slope, r.render.squash;
    ck.put("render", rc);
    ck.put("init", r.init);
    ck.put("range_lo", r.range_lo);
    ck.put("range_hi", r.range_hi);
    Mat sched(static_cast<int>(r.schedule.size()), 2);
    for (size_t i = 0; i < r.schedule.size(); ++i) sched.row(i) << r.schedule[i].first, r.schedule[i].second;
    ck.put("schedule", sched);
    Mat solver(1, 3);
    solver << r.fast_iterations, r.retry_residual, r.step_tolerance;
    ck.put("solver", solver);
    ck.put_int("stages", static_cast<std::int64_t>(r.stages.size()));
    for (size_t i = 0; i < r.stages.size(); ++i) {
        const std::string p = "stage" + std::to_string(i) + ".";
        ck.put(p + "sigma", Mat(Mat::Constant(1, 1, r.stages[i].sigma)));
        ck.put(p + "mu", r.stages[i].mu);
        ck.put(p + "sd", r.stages[i].sd);
        ck.put(p + "r", r.stages[i].r);
    }
    return ck;
}

PoseRegressor load_regressor(const Checkpoint& ck) {
    ck.expect_kind("regressor");
    PoseRegressor r;
    r.shape.seed = static_cast<std::uint64_t>(ck.integer("shape.seed"));
    r.shape.mean = ck.vec("shape.mean");
    r.shape.identity_basis = ck.mat("shape.identity_basis");
    r.shape.expression_basis = ck.mat("shape.expression_basis");
    r.palette = ck.mat("palette");
    const Mat& rc = ck.mat("render");
    r.render = {rc(0, 0), rc(0, 1), rc(0, 2), rc(0, 3), rc(0, 4)};
    r.init = ck.vec("init");
    r.range_lo = ck.vec("range_lo");
    r.range_hi = ck.vec("range_hi");
    const Mat& sched = ck.mat("schedule");
    r.schedule.clear();
    for (int i = 0; i < sched.rows(); ++i) r.schedule.emplace_back(sched(i, 0), static_cast<int>(sched(i, 1)));
    const Mat& solver = ck.mat("solver");
    r.fast_iterations = static_cast<int>(solver(0, 0));
    r.retry_residual = solver(0, 1);
    r.step_tolerance = solver(0, 2);
    const auto count = ck.integer("stages");
    for (std::int64_t i = 0; i < count; ++i) {
        const std::string p = "stage" + std::to_string(i) + ".";
        CoarseStage st;
        st.sigma = ck.mat(p + "sigma")(0, 0);
        st.mu = ck.vec(p + "mu");
        st.sd = ck.vec(p + "sd");
        st.r = ck.mat(p + "r");
        r.stages.push_back(std::move(st));
    }
    return r;
}

}  // namespace fr
