#pragma once

#include "fr/estimator.hpp"
#include "fr/toygen.hpp"

namespace fr {

// Per-attribute 1st / 99th percentiles of the 15 pose values (theta, p_e).
struct PoseStats {
    Vec low, high;
    double a = 1.0;
    int n = 0;
    std::uint64_t seed = 0;
};

// A: (8 * 64) x 15; row index layer * 64 + j matches LatentCode::flat().
struct DirectionMatrix {
    Mat a;
    PoseStats stats;
};

// Errors with "invalid_argument" for n < 100.
PoseStats estimate_p_stats(const ToyGenerator& gen, const PoseRegressor& reg, int n, std::uint64_t seed);

Vec rescale(const Vec& p, const PoseStats& s);
Vec unscale(const Vec& pr, const PoseStats& s);

DirectionMatrix init_directions(const PoseStats& stats, std::uint64_t seed, double std = 0.001);

// A * dp reshaped to 8 x 64 per-layer shifts.
Mat delta_w(const Mat& a, const Vec& dp);
LatentCode apply_shift(const LatentCode& w, const Mat& shift);

// w_r = w_s + A (rescale(p_t) - rescale(p_s)); p_s and p_t are raw 15-value pose vectors.
LatentCode reenact_code(const DirectionMatrix& d, const LatentCode& w_s, const Vec& p_s, const Vec& p_t);

Vec single_attribute_delta(int i, double eps);

Checkpoint save_stats(const PoseStats& s);
PoseStats load_stats(const Checkpoint& ck);
Checkpoint save_directions(const DirectionMatrix& d);
DirectionMatrix load_directions(const Checkpoint& ck);

}  // namespace fr
