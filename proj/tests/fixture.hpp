#pragma once

#include "fr/directions.hpp"
#include "fr/embedder.hpp"
#include "fr/estimator.hpp"
#include "fr/inversion.hpp"
#include "fr/toygen.hpp"

#include <doctest.h>

#include <functional>

namespace fr::test {

// Shared small-scale models, built once per test process.
struct World {
    ToyGenerator gen;
    FrozenEmbedder emb;
    PoseRegressor reg;
    PoseStats stats;
};
const World& world();
// Encoder fit on 1000 synthetic samples and a 20-frame corpus.
const Encoder& small_encoder();

// The closed-form directions expressed in rescaled units: yaw, pitch and roll columns are
// exact, expression columns use the calibration slope at q = 0.
DirectionMatrix oracle_in_rescaled_units(const ToyGenerator& gen, const PoseStats& stats);

// Central-difference derivative of f along one scalar parameter.
inline double central(const std::function<double(double)>& f, double h) { return (f(h) - f(-h)) / (2 * h); }

inline Image random_image(Rng& rng, double spread = 0.2) {
    Image im;
    for (auto& c : im.ch) c = (rng.normal_mat(kImageSize, kImageSize, spread).array() + 0.5).cwiseMax(0.01).cwiseMin(0.99).matrix();
    return im;
}

inline Image weights_image(Rng& rng) {
    Image im;
    for (auto& c : im.ch) c = rng.normal_mat(kImageSize, kImageSize);
    return im;
}

inline double dot(const Image& a, const Image& b) {
    double s = 0;
    for (int c = 0; c < 3; ++c) s += a.ch[c].cwiseProduct(b.ch[c]).sum();
    return s;
}

inline Image axpy(const Image& x, double a, const Image& d) {
    Image out = x;
    for (int c = 0; c < 3; ++c) out.ch[c] += a * d.ch[c];
    return out;
}

}  // namespace fr::test
