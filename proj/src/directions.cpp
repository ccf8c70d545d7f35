#include "fr/directions.hpp"

#include <algorithm>

namespace fr {

PoseStats estimate_p_stats(const ToyGenerator& gen, const PoseRegressor& reg, int n, std::uint64_t seed) {
    if (n < 100) throw Error("invalid_argument", "estimate_p_stats needs n >= 100, got " + std::to_string(n));
    Rng rng(seed);
    Mat vals(n, kPoseDim);
    for (int i = 0; i < n; ++i)
        vals.row(i) = estimate_pose(reg, generate(gen, sample_wplus(gen, rng))).pose.pose_vector().transpose();
    PoseStats s;
    s.n = n;
    s.seed = seed;
    s.low.resize(kPoseDim);
    s.high.resize(kPoseDim);
    for (int j = 0; j < kPoseDim; ++j) {
        std::vector<double> col(vals.col(j).data(), vals.col(j).data() + n);
        std::sort(col.begin(), col.end());
        // Linear-interpolated quantiles.
        auto q = [&](double f) {
            const double pos = f * (n - 1);
            const int lo = static_cast<int>(pos);
            const int hi = std::min(lo + 1, n - 1);
            return col[lo] + (pos - lo) * (col[hi] - col[lo]);
        };
        s.low[j] = q(0.01);
        s.high[j] = q(0.99);
        if (!(s.high[j] > s.low[j])) throw Error("training_failure", "degenerate pose distribution");
    }
    return s;
}

Vec rescale(const Vec& p, const PoseStats& s) {
    require(p.size() == s.low.size(), "rescale: dimension mismatch");
    return (s.a * (2.0 * (p - s.low).array() / (s.high - s.low).array() - 1.0)).matrix();
}

Vec unscale(const Vec& pr, const PoseStats& s) {
    require(pr.size() == s.low.size(), "unscale: dimension mismatch");
    return (s.low.array() + (pr.array() / s.a + 1.0) * 0.5 * (s.high - s.low).array()).matrix();
}

DirectionMatrix init_directions(const PoseStats& stats, std::uint64_t seed, double std) {
    Rng rng(seed ^ 0xd1ec7ULL);
    return {rng.normal_mat(kWPlusDim, kPoseDim, std), stats};
}

Mat delta_w(const Mat& a, const Vec& dp) {
    require(a.rows() == kWPlusDim && a.cols() == dp.size(), "delta_w: dimension mismatch");
    const Vec v = a * dp;
    Mat shift(kLayers, kLatentDim);
    for (int l = 0; l < kLayers; ++l) shift.row(l) = v.segment(l * kLatentDim, kLatentDim).transpose();
    return shift;
}

LatentCode apply_shift(const LatentCode& w, const Mat& shift) {
    require(w.kind == LatentKind::WPLUS && w.data.rows() == kLayers, "apply_shift needs a W+ code");
    return {LatentKind::WPLUS, w.data + shift};
}

LatentCode reenact_code(const DirectionMatrix& d, const LatentCode& w_s, const Vec& p_s, const Vec& p_t) {
    return apply_shift(w_s, delta_w(d.a, rescale(p_t, d.stats) - rescale(p_s, d.stats)));
}

Vec single_attribute_delta(int i, double eps) {
    require(i >= 0 && i < kPoseDim, "single_attribute_delta: index out of range");
    Vec v = Vec::Zero(kPoseDim);
    v[i] = eps;
    return v;
}

namespace {

void put_stats(Checkpoint& ck, const PoseStats& s) {
    ck.put("stats.low", s.low);
    ck.put("stats.high", s.high);
    ck.put("stats.a", Mat(Mat::Constant(1, 1, s.a)));
    ck.put_int("stats.n", s.n);
    ck.put_int("stats.seed", static_cast<std::int64_t>(s.seed));
}

PoseStats get_stats(const Checkpoint& ck) {
    PoseStats s;
    s.low = ck.vec("stats.low");
    s.high = ck.vec("stats.high");
    s.a = ck.mat("stats.a")(0, 0);
    s.n = static_cast<int>(ck.integer("stats.n"));
    s.seed = static_cast<std::uint64_t>(ck.integer("stats.seed"));
    if (s.low.size() != kPoseDim || s.high.size() != kPoseDim)
        throw Error("checkpoint_corrupt", "pose stats have the wrong size");
    return s;
}

}  // namespace

Checkpoint save_stats(const PoseStats& s) {
    Checkpoint ck("pose_stats", 1);
    put_stats(ck, s);
    return ck;
}

PoseStats load_stats(const Checkpoint& ck) {
    ck.expect_kind("pose_stats");
    return get_stats(ck);
}

Checkpoint save_directions(const DirectionMatrix& d) {
    Checkpoint ck("directions", 1);
    ck.put_int("k", d.a.cols());
    ck.put_int("layers", kLayers);
    ck.put_int("latent_dim", kLatentDim);
    ck.put("a", d.a);
    put_stats(ck, d.stats);
    return ck;
}

DirectionMatrix load_directions(const Checkpoint& ck) {
    ck.expect_kind("directions");
    DirectionMatrix d;
    d.a = ck.mat("a");
    if (ck.integer("k") != d.a.cols() || ck.integer("layers") * ck.integer("latent_dim") != d.a.rows())
        throw Error("checkpoint_corrupt", "direction matrix shape does not match its header");
    d.stats = get_stats(ck);
    return d;
}

}  // namespace fr
