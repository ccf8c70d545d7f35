#include "fr/shape3d.hpp"

#include <cmath>

namespace fr {

namespace {

constexpr double kDeg = M_PI / 180.0;

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

void check_index(int i) { require(i >= 1 && i <= kLandmarks, "landmark index out of range"); }

}  // namespace

Vec PoseParams::pose_vector() const {
    Vec p(kPoseDim);
    p << theta, expression;
    return p;
}

void PoseParams::set_pose_vector(const Vec& p) {
    require(p.size() == kPoseDim, "pose vector must have 15 entries");
    theta = p.head<3>();
    expression = p.tail(kExpressionDim);
}

Vec PoseParams::full() const {
    Vec v(kPoseDim + kIdentityDim);
    v << theta, expression, identity;
    return v;
}

PoseParams PoseParams::from_full(const Vec& v) {
    require(v.size() == kPoseDim + kIdentityDim, "full parameter vector must have 25 entries");
    PoseParams p;
    p.theta = v.head<3>();
    p.expression = v.segment(3, kExpressionDim);
    p.identity = v.tail(kIdentityDim);
    return p;
}

const LandmarkPairTable& default_pairs() {
    static const LandmarkPairTable t{
        {{37, 40}, {38, 42}, {39, 41}, {43, 46}, {44, 48}, {45, 47}},
        {{49, 55}, {50, 60}, {51, 59}, {52, 58}, {53, 57}, {54, 56}, {61, 65}, {62, 68}, {63, 67}, {64, 66}}};
    return t;
}

Shape template_shape() {
    Shape p = Shape::Zero();
    for (int i = 0; i < 17; ++i) {
        const double f = M_PI * i / 16.0;
        p.row(i) << -0.95 * std::cos(f), 0.1 - 1.05 * std::sin(f), -0.55 + 0.4 * std::sin(f);
    }
    const double brow[5][2] = {{-0.75, 0.52}, {-0.62, 0.6}, {-0.48, 0.63}, {-0.34, 0.62}, {-0.2, 0.57}};
    for (int j = 0; j < 5; ++j) {
        p.row(17 + j) << brow[j][0], brow[j][1], 0.18;
        p.row(26 - j) << -brow[j][0], brow[j][1], 0.18;
    }
    for (int j = 0; j < 4; ++j) p.row(27 + j) << 0.0, 0.4 - 0.15 * j, 0.25 + 0.12 * j;
    const double nose[5] = {-0.2, -0.1, 0.0, 0.1, 0.2};
    for (int j = 0; j < 5; ++j) p.row(31 + j) << nose[j], -0.15, 0.45 - 0.5 * std::abs(nose[j]);
    const double le[6][2] = {{-0.6, 0.3}, {-0.48, 0.36}, {-0.36, 0.36}, {-0.24, 0.3}, {-0.36, 0.24}, {-0.48, 0.24}};
    const double re[6][2] = {{0.24, 0.3}, {0.36, 0.36}, {0.48, 0.36}, {0.6, 0.3}, {0.48, 0.24}, {0.36, 0.24}};
    for (int j = 0; j < 6; ++j) {
        p.row(36 + j) << le[j][0], le[j][1], 0.15;
        p.row(42 + j) << re[j][0], re[j][1], 0.15;
    }
    const double om[12][2] = {{-0.4, -0.5},  {-0.27, -0.43}, {-0.12, -0.39}, {0, -0.41},     {0.12, -0.39}, {0.27, -0.43},
                              {0.4, -0.5},   {0.27, -0.6},   {0.12, -0.64},  {0, -0.65},     {-0.12, -0.64}, {-0.27, -0.6}};
    for (int j = 0; j < 12; ++j) p.row(48 + j) << om[j][0], om[j][1], 0.3 - 0.3 * std::abs(om[j][0]);
    const double im[8][2] = {{-0.3, -0.5}, {-0.12, -0.47}, {0, -0.47}, {0.12, -0.47},
                             {0.3, -0.5},  {0.12, -0.53},  {0, -0.53}, {-0.12, -0.53}};
    for (int j = 0; j < 8; ++j) p.row(60 + j) << im[j][0], im[j][1], 0.28 - 0.3 * std::abs(im[j][0]);
    const Eigen::RowVector3d c = p.colwise().mean();
    p.rowwise() -= c;
    return p;
}

ShapeModel build_shape_model(std::uint64_t seed) {
    Rng rng(seed);
    const Shape t = template_shape();
    const int n3 = 3 * kLandmarks;

    // Smooth deformation fields over the template's (x, y) so bases stay face-like.
    Mat mono(kLandmarks, 10);
    for (int k = 0; k < kLandmarks; ++k) {
        const double x = t(k, 0), y = t(k, 1);
        mono.row(k) << x, y, x * x, x * y, y * y, x * x * x, x * x * y, x * y * y, y * y * y, 1.0;
    }

    Mat e = Mat::Zero(n3, kExpressionDim);
    auto set = [&](int lm, int axis, int col, double v) { e(3 * lm + axis, col) = v; };
    // Column 0 smile, column 1 open mouth, column 2 eye closing, column 3 brow raise.
    set(48, 0, 0, -0.12); set(48, 1, 0, 0.1);
    set(54, 0, 0, 0.12);  set(54, 1, 0, 0.1);
    set(60, 0, 0, -0.08); set(60, 1, 0, 0.07);
    set(64, 0, 0, 0.08);  set(64, 1, 0, 0.07);
    for (int k : {49, 53, 59, 55}) set(k, 1, 0, 0.04);
    for (int k = 55; k < 60; ++k) set(k, 1, 1, -0.15);
    for (int k : {65, 66, 67}) set(k, 1, 1, -0.13);
    for (int k = 6; k < 11; ++k) set(k, 1, 1, -0.06);
    for (int k : {37, 38, 43, 44}) set(k, 1, 2, -0.05);
    for (int k : {40, 41, 46, 47}) set(k, 1, 2, 0.02);
    for (int k = 17; k < 27; ++k) set(k, 1, 3, 0.06);
    const double centers[4][2] = {{0, -0.5}, {-0.42, 0.3}, {0.42, 0.3}, {0, 0.55}};
    for (int j = 4; j < kExpressionDim; ++j) {
        const double cx = centers[j % 4][0], cy = centers[j % 4][1];
        for (int a = 0; a < 3; ++a) {
            const Vec coef = rng.normal_vec(6);
            for (int k = 0; k < kLandmarks; ++k) {
                const double dx = t(k, 0) - cx, dy = t(k, 1) - cy;
                const double w = std::exp(-(dx * dx + dy * dy) / (2 * 0.25 * 0.25));
                e(3 * k + a, j) = w * mono.row(k).head(6).dot(coef) * (a == 2 ? 0.3 : 1.0);
            }
        }
    }
    Mat id(n3, kIdentityDim);
    for (int j = 0; j < kIdentityDim; ++j)
        for (int a = 0; a < 3; ++a) {
            const Vec coef = rng.normal_vec(9);
            for (int k = 0; k < kLandmarks; ++k) id(3 * k + a, j) = mono.row(k).head(9).dot(coef) * (a == 2 ? 0.3 : 1.0);
        }

    // Orthonormalize against the three infinitesimal rotation fields so no basis
    // column can mimic a head rotation, then drop those fields.
    Mat all(n3, 3 + kExpressionDim + kIdentityDim);
    for (int a = 0; a < 3; ++a) {
        const Vec3 axis = Vec3::Unit(a);
        for (int k = 0; k < kLandmarks; ++k) all.block<3, 1>(3 * k, a) = axis.cross(Vec3(t.row(k)));
    }
    all.middleCols(3, kExpressionDim) = e;
    all.rightCols(kIdentityDim) = id;
    Eigen::HouseholderQR<Mat> qr(all);
    Mat q = qr.householderQ() * Mat::Identity(n3, all.cols());
    const Mat r = qr.matrixQR().topRows(all.cols()).triangularView<Eigen::Upper>();
    for (int j = 0; j < all.cols(); ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);

    ShapeModel m;
    m.seed = seed;
    m.mean.resize(n3);
    for (int k = 0; k < kLandmarks; ++k) m.mean.segment<3>(3 * k) = t.row(k).transpose();
    m.expression_basis = q.middleCols(3, kExpressionDim);
    m.identity_basis = q.rightCols(kIdentityDim);
    return m;
}

Shape reconstruct_shape(const ShapeModel& model, const Vec& identity, const Vec& expression) {
    require(identity.size() == model.identity_basis.cols(), "identity coefficient length mismatch");
    require(expression.size() == model.expression_basis.cols(), "expression coefficient length mismatch");
    const Vec flat = model.mean + model.identity_basis * identity + model.expression_basis * expression;
    Shape s;
    for (int k = 0; k < kLandmarks; ++k) s.row(k) = flat.segment<3>(3 * k).transpose();
    return s;
}

Mat3 rotation_matrix(const Vec3& th) {
    const double y = th[0] * kDeg, p = th[1] * kDeg, r = th[2] * kDeg;
    Mat3 ry, rp, rr;
    ry << std::cos(y), 0, std::sin(y), 0, 1, 0, -std::sin(y), 0, std::cos(y);
    rp << 1, 0, 0, 0, std::cos(p), -std::sin(p), 0, std::sin(p), std::cos(p);
    rr << std::cos(r), -std::sin(r), 0, std::sin(r), std::cos(r), 0, 0, 0, 1;
    return rr * rp * ry;
}

std::array<Mat3, 3> rotation_jacobian(const Vec3& th) {
    const double y = th[0] * kDeg, p = th[1] * kDeg, r = th[2] * kDeg;
    Mat3 ry, rp, rr, dy, dp, dr;
    ry << std::cos(y), 0, std::sin(y), 0, 1, 0, -std::sin(y), 0, std::cos(y);
    rp << 1, 0, 0, 0, std::cos(p), -std::sin(p), 0, std::sin(p), std::cos(p);
    rr << std::cos(r), -std::sin(r), 0, std::sin(r), std::cos(r), 0, 0, 0, 1;
    dy << -std::sin(y), 0, std::cos(y), 0, 0, 0, -std::cos(y), 0, -std::sin(y);
    dp << 0, 0, 0, 0, -std::sin(p), -std::cos(p), 0, std::cos(p), -std::sin(p);
    dr << -std::sin(r), -std::cos(r), 0, std::cos(r), -std::sin(r), 0, 0, 0, 0;
    return {kDeg * rr * rp * dy, kDeg * rr * dp * ry, kDeg * dr * rp * ry};
}

Shape apply_pose(const Shape& shape, const Vec3& theta) {
    return shape * rotation_matrix(theta).transpose();
}

Shape posed_shape(const ShapeModel& model, const PoseParams& p) {
    return apply_pose(reconstruct_shape(model, p.identity, p.expression), p.theta);
}

Landmarks project_landmarks(const Shape& s) {
    Landmarks l;
    l.col(0) = (kProjCenter + kProjScale * s.col(0).array()).matrix();
    l.col(1) = (kProjCenter - kProjScale * s.col(1).array()).matrix();
    return l;
}

double shape_loss(const Shape& a, const Shape& b) { return (a - b).cwiseAbs().sum(); }

double pair_distance_loss(const Shape& a, const Shape& b, const std::vector<std::pair<int, int>>& pairs) {
    double s = 0;
    for (const auto& [i, j] : pairs) {
        check_index(i);
        check_index(j);
        const double da = (a.row(i - 1) - a.row(j - 1)).cwiseAbs().sum();
        const double db = (b.row(i - 1) - b.row(j - 1)).cwiseAbs().sum();
        s += std::abs(da - db);
    }
    return s;
}

ReenactmentLoss reenactment_loss(const Shape& a, const Shape& b, const LandmarkPairTable& pairs) {
    return {shape_loss(a, b), pair_distance_loss(a, b, pairs.eye_pairs), pair_distance_loss(a, b, pairs.mouth_pairs)};
}

Shape reenactment_loss_grad(const Shape& a, const Shape& b, const LandmarkPairTable& pairs) {
    Shape g = (a - b).unaryExpr([](double v) { return sgn(v); });
    auto add_pairs = [&](const std::vector<std::pair<int, int>>& ps) {
        for (const auto& [i1, j1] : ps) {
            check_index(i1);
            check_index(j1);
            const int i = i1 - 1, j = j1 - 1;
            const double da = (a.row(i) - a.row(j)).cwiseAbs().sum();
            const double db = (b.row(i) - b.row(j)).cwiseAbs().sum();
            const double outer = sgn(da - db);
            for (int c = 0; c < 3; ++c) {
                const double inner = sgn(a(i, c) - a(j, c));
                g(i, c) += outer * inner;
                g(j, c) -= outer * inner;
            }
        }
    };
    add_pairs(pairs.eye_pairs);
    add_pairs(pairs.mouth_pairs);
    return g;
}

Vec posed_shape_vjp(const ShapeModel& model, const PoseParams& p, const Shape& grad) {
    const Shape x = reconstruct_shape(model, p.identity, p.expression);
    const Mat3 r = rotation_matrix(p.theta);
    const auto dr = rotation_jacobian(p.theta);
    Vec out(kPoseDim + kIdentityDim);
    for (int a = 0; a < 3; ++a) out[a] = (grad.array() * (x * dr[a].transpose()).array()).sum();
    // posed = x R^T, so dL/dx = grad R.
    const Shape gx = grad * r;
    Vec flat(3 * kLandmarks);
    for (int k = 0; k < kLandmarks; ++k) flat.segment<3>(3 * k) = gx.row(k).transpose();
    out.segment(3, kExpressionDim) = model.expression_basis.transpose() * flat;
    out.tail(kIdentityDim) = model.identity_basis.transpose() * flat;
    return out;
}

Checkpoint save_shape_model(const ShapeModel& m) {
    Checkpoint ck("shape_model", 1);
    ck.put_int("seed", static_cast<std::int64_t>(m.seed));
    ck.put_int("N", kLandmarks);
    ck.put_int("m_i", m.identity_basis.cols());
    ck.put_int("m_e", m.expression_basis.cols());
    ck.put("mean", m.mean);
    ck.put("identity_basis", m.identity_basis);
    ck.put("expression_basis", m.expression_basis);
    return ck;
}

ShapeModel load_shape_model(const Checkpoint& ck) {
    ck.expect_kind("shape_model");
    ShapeModel m;
    m.seed = static_cast<std::uint64_t>(ck.integer("seed"));
    m.mean = ck.vec("mean");
    m.identity_basis = ck.mat("identity_basis");
    m.expression_basis = ck.mat("expression_basis");
    return m;
}

}  // namespace fr
