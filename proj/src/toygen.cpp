#include "fr/toygen.hpp"

#include <cmath>

namespace fr {

namespace {

constexpr double kPoseQStd = 0.35;
constexpr double kOtherQStd = 0.35;
constexpr double kExpressionReach = 0.22;  // largest landmark displacement as tanh saturates, shape units
constexpr double kIdentityReach = 0.27;

Vec column_reach(const Mat& basis) {
    Vec out(basis.cols());
    for (int j = 0; j < basis.cols(); ++j) {
        double m = 0;
        for (int k = 0; k < kLandmarks; ++k) m = std::max(m, basis.col(j).segment<3>(3 * k).norm());
        out[j] = m;
    }
    return out;
}

}  // namespace

Vec LatentCode::flat() const {
    Vec v(data.size());
    for (Eigen::Index l = 0; l < data.rows(); ++l) v.segment(l * data.cols(), data.cols()) = data.row(l).transpose();
    return v;
}

LatentCode LatentCode::wplus_from_flat(const Vec& v) {
    require(v.size() == kWPlusDim, "W+ vector must have 512 entries");
    LatentCode c;
    c.kind = LatentKind::WPLUS;
    c.data.resize(kLayers, kLatentDim);
    for (int l = 0; l < kLayers; ++l) c.data.row(l) = v.segment(l * kLatentDim, kLatentDim).transpose();
    return c;
}

Vec Appearance::pack() const {
    Vec v(kSize);
    int o = 0;
    auto put = [&](const Mat& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) v[o++] = m(i, j);
    };
    put(tint0);
    put(tint);
    put(bg0);
    put(bgn);
    put(palette);
    put(bg_grad);
    return v;
}

void Appearance::unpack(const Vec& v) {
    require(v.size() == kSize, "appearance vector size mismatch");
    int o = 0;
    auto get = [&](auto& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = v[o++];
    };
    get(tint0);
    get(tint);
    get(bg0);
    get(bgn);
    get(palette);
    get(bg_grad);
}

ToyGenerator build_generator(std::uint64_t seed) {
    ToyGenerator g;
    g.seed = seed;
    g.shape = build_shape_model(seed);
    Rng rng(seed ^ 0x5eed0001ULL);

    const Mat u = random_orthogonal(kLatentDim, rng);
    g.m1 = rng.normal_mat(kLatentDim, kLatentDim, 1.2 / std::sqrt(double(kLatentDim)));
    g.m2 = random_orthogonal(kLatentDim, rng);

    g.b.resize(kQDim, kWPlusDim);
    for (int l = 0; l < kLayers; ++l)
        g.b.middleCols(l * kLatentDim, kLatentDim) = u.leftCols(kQDim).transpose() / std::sqrt(double(kLayers));

    // Scale the semantic directions of w so every q coordinate has the target spread.
    const int n = 4096;
    Mat h(kLatentDim, n);
    for (int i = 0; i < n; ++i) h.col(i) = g.m2 * (g.m1 * rng.normal_vec(kLatentDim)).array().tanh().matrix();
    const Mat proj = u.leftCols(kQDim).transpose() * h;
    Vec s = Vec::Ones(kLatentDim);
    for (int j = 0; j < kQDim; ++j) {
        const double mean = proj.row(j).mean();
        const double sd = std::sqrt((proj.row(j).array() - mean).square().sum() / (n - 1));
        const double target = j < 3 ? kPoseQStd : kOtherQStd;
        s[j] = target / (std::sqrt(double(kLayers)) * sd);
    }
    g.p = u * s.asDiagonal() * u.transpose();

    g.c = Vec::Zero(kQDim);
    g.c.tail(kQDim - 3) = rng.normal_vec(kQDim - 3, 0.1 * kOtherQStd);

    g.exp_scale = kExpressionReach * column_reach(g.shape.expression_basis).cwiseInverse();
    g.id_scale = kIdentityReach * column_reach(g.shape.identity_basis).cwiseInverse();

    g.app.tint0 = Vec3(0.75, 0.6, 0.5);
    g.app.tint = rng.normal_mat(3, kIdentityDim, 0.05);
    g.app.bg0 = Vec3(0.3, 0.35, 0.4);
    g.app.bgn = rng.normal_mat(3, kNuisanceDim, 0.05);
    g.app.palette.resize(kLandmarks, 3);
    const double pal[3][3] = {{0.7, 0.2, 0.2}, {0.2, 0.7, 0.2}, {0.2, 0.2, 0.7}};
    for (int k = 0; k < kLandmarks; ++k)
        for (int ch = 0; ch < 3; ++ch) g.app.palette(k, ch) = pal[k % 3][ch];
    g.app.bg_grad = Mat::Zero(3, 2);
    return g;
}

std::vector<LatentCode> sample_z(int count, std::uint64_t seed) {
    require(count >= 0, "count must be nonnegative");
    Rng rng(seed);
    std::vector<LatentCode> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back({LatentKind::Z, rng.normal_vec(kLatentDim).transpose()});
    return out;
}

LatentCode map_to_w(const ToyGenerator& g, const LatentCode& z) {
    require(z.kind == LatentKind::Z, "map_to_w expects a Z code");
    const Vec h = g.m2 * (g.m1 * z.data.row(0).transpose()).array().tanh().matrix();
    return {LatentKind::W, (g.p * h).transpose()};
}

LatentCode broadcast_wplus(const LatentCode& w) {
    require(w.kind == LatentKind::W, "broadcast_wplus expects a W code");
    return {LatentKind::WPLUS, w.data.replicate(kLayers, 1)};
}

LatentCode sample_wplus(const ToyGenerator& g, Rng& rng, double psi, double jitter) {
    LatentCode z{LatentKind::Z, rng.normal_vec(kLatentDim).transpose()};
    LatentCode w = map_to_w(g, z);
    w.data *= psi;
    LatentCode wp = broadcast_wplus(w);
    if (jitter > 0) wp.data += rng.normal_mat(kLayers, kLatentDim, jitter);
    return wp;
}

Vec semantic_params(const ToyGenerator& g, const LatentCode& wplus) {
    require(wplus.kind == LatentKind::WPLUS, "semantic_params expects a W+ code");
    return g.b * wplus.flat() + g.c;
}

GenParams calibrate(const ToyGenerator& g, const Vec& q) {
    require(q.size() == kQDim, "q must have 33 entries");
    GenParams out;
    out.pose.theta = g.theta_scale * q.head<3>();
    for (int j = 0; j < kExpressionDim; ++j) out.pose.expression[j] = g.exp_scale[j] * std::tanh(q[3 + j] / g.tanh_div);
    for (int j = 0; j < kIdentityDim; ++j)
        out.pose.identity[j] = g.id_scale[j] * std::tanh(q[kQIdentityOffset + j] / g.tanh_div);
    out.nuisance = q.tail(kNuisanceDim);
    return out;
}

Scene scene_for(const ToyGenerator& g, const GenParams& params) {
    Scene s;
    s.uv = project_landmarks(posed_shape(g.shape, params.pose));
    s.roll_deg = params.pose.theta[2];
    s.tint = g.app.tint0 + g.app.tint * params.pose.identity;
    s.bg = g.app.bg0 + g.app.bgn * (params.nuisance / g.nuisance_div).array().tanh().matrix();
    s.bg_grad = g.app.bg_grad;
    s.palette = g.app.palette;
    s.sigma = g.render.blob_sigma;
    s.amp = 1.0;
    return s;
}

Image render_params(const ToyGenerator& g, const GenParams& params, RenderTrace* trace) {
    RenderTrace local;
    RenderTrace& t = trace ? *trace : local;
    t.params = params;
    t.scene = scene_for(g, params);
    t.out = squash(render_pre(t.scene, g.render, &t.cache), g.render);
    return t.out;
}

Image generate(const ToyGenerator& g, const LatentCode& wplus, RenderTrace* trace) {
    const Vec q = semantic_params(g, wplus);
    if (trace) trace->q = q;
    return render_params(g, calibrate(g, q), trace);
}

Vec generate_vjp(const ToyGenerator& g, const RenderTrace& t, const Image& dimg, Vec* dapp) {
    Image dpre;
    for (int ch = 0; ch < 3; ++ch)
        dpre.ch[ch] = dimg.ch[ch].cwiseProduct(
            (t.out.ch[ch].array() * (1.0 - t.out.ch[ch].array()) * g.render.squash).matrix());
    const SceneGrad sg = scene_vjp(t.scene, t.cache, dpre);

    // Landmarks -> posed shape -> coefficients.
    Shape dshape = Shape::Zero();
    dshape.col(0) = kProjScale * sg.duv.col(0);
    dshape.col(1) = -kProjScale * sg.duv.col(1);
    Vec dcoef = posed_shape_vjp(g.shape, t.params.pose, dshape);
    dcoef[2] += sg.droll_deg;
    dcoef.tail(kIdentityDim) += g.app.tint.transpose() * sg.dtint;

    const Vec& q = t.q;
    Vec dq = Vec::Zero(kQDim);
    dq.head<3>() = g.theta_scale * dcoef.head<3>();
    for (int j = 0; j < kExpressionDim; ++j) {
        const double th = std::tanh(q[3 + j] / g.tanh_div);
        dq[3 + j] = dcoef[3 + j] * g.exp_scale[j] * (1 - th * th) / g.tanh_div;
    }
    for (int j = 0; j < kIdentityDim; ++j) {
        const double th = std::tanh(q[kQIdentityOffset + j] / g.tanh_div);
        dq[kQIdentityOffset + j] = dcoef[kPoseDim + j] * g.id_scale[j] * (1 - th * th) / g.tanh_div;
    }
    const Vec tn = (t.params.nuisance / g.nuisance_div).array().tanh().matrix();
    const Vec dtn = g.app.bgn.transpose() * sg.dbg;
    for (int j = 0; j < kNuisanceDim; ++j)
        dq[kQNuisanceOffset + j] = dtn[j] * (1 - tn[j] * tn[j]) / g.nuisance_div;

    if (dapp) {
        Appearance a = g.app;
        a.tint0 = sg.dtint;
        a.tint = sg.dtint * t.params.pose.identity.transpose();
        a.bg0 = sg.dbg;
        a.bgn = sg.dbg * tn.transpose();
        a.palette = sg.dpalette;
        a.bg_grad = sg.dbg_grad;
        *dapp = a.pack();
    }
    return g.b.transpose() * dq;
}

Mat oracle_directions(const ToyGenerator& g) { return g.b.topRows(kPoseDim).transpose(); }

Checkpoint save_generator(const ToyGenerator& g) {
    Checkpoint ck("generator", 1);
    ck.put_int("seed", static_cast<std::int64_t>(g.seed));
    const Checkpoint sm = save_shape_model(g.shape);
    for (const auto& [name, value] : sm.entries()) {
        if (name == "kind" || name == "version") continue;
        if (const Mat* m = std::get_if<Mat>(&value)) ck.put("shape." + name, *m);
        else if (const auto* v = std::get_if<std::int64_t>(&value)) ck.put_int("shape." + name, *v);
    }
    ck.put("m1", g.m1);
    ck.put("m2", g.m2);
    ck.put("p", g.p);
    ck.put("b", g.b);
    ck.put("c", g.c);
    ck.put("exp_scale", g.exp_scale);
    ck.put("id_scale", g.id_scale);
    Mat consts(1, 3);
    consts << g.theta_scale, g.tanh_div, g.nuisance_div;
    ck.put("calibration", consts);
    Mat rc(1, 5);
    rc << g.render.blob_sigma, g.render.mask_a, g.render.mask_b, g.render.mask_slope, g.render.squash;
    ck.put("render", rc);
    ck.put("appearance", g.app.pack());
    return ck;
}

ToyGenerator load_generator(const Checkpoint& ck) {
    ck.expect_kind("generator");
    ToyGenerator g;
    g.seed = static_cast<std::uint64_t>(ck.integer("seed"));
    g.shape.seed = static_cast<std::uint64_t>(ck.integer("shape.seed"));
    g.shape.mean = ck.vec("shape.mean");
    g.shape.identity_basis = ck.mat("shape.identity_basis");
    g.shape.expression_basis = ck.mat("shape.expression_basis");
    g.m1 = ck.mat("m1");
    g.m2 = ck.mat("m2");
    g.p = ck.mat("p");
    g.b = ck.mat("b");
    g.c = ck.vec("c");
    g.exp_scale = ck.vec("exp_scale");
    g.id_scale = ck.vec("id_scale");
    const Mat& consts = ck.mat("calibration");
    g.theta_scale = consts(0, 0);
    g.tanh_div = consts(0, 1);
    g.nuisance_div = consts(0, 2);
    const Mat& rc = ck.mat("render");
    g.render = {rc(0, 0), rc(0, 1), rc(0, 2), rc(0, 3), rc(0, 4)};
    g.app.tint = Mat(3, kIdentityDim);
    g.app.bgn = Mat(3, kNuisanceDim);
    g.app.palette = Mat(kLandmarks, 3);
    g.app.bg_grad = Mat(3, 2);
    g.app.unpack(ck.vec("appearance"));
    return g;
}

}  // namespace fr
