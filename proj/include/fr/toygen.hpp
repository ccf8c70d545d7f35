#pragma once

#include "fr/checkpoint.hpp"
#include "fr/render.hpp"
#include "fr/shape3d.hpp"

#include <vector>

namespace fr {

constexpr int kLayers = 8;
constexpr int kLatentDim = 64;
constexpr int kWPlusDim = kLayers * kLatentDim;  // 512
constexpr int kNuisanceDim = 8;
constexpr int kQDim = 3 + kExpressionDim + kIdentityDim + kNuisanceDim;  // 33
constexpr int kQIdentityOffset = 3 + kExpressionDim;
constexpr int kQNuisanceOffset = kQIdentityOffset + kIdentityDim;

enum class LatentKind { Z, W, WPLUS };

struct LatentCode {
    LatentKind kind = LatentKind::WPLUS;
    Mat data;  // 1 x 64 for Z and W, 8 x 64 for WPLUS

    // Layer-major flattening, index = layer * 64 + j.
    Vec flat() const;
    static LatentCode wplus_from_flat(const Vec& v);
    bool operator==(const LatentCode& o) const { return kind == o.kind && data == o.data; }
};

// Appearance parameters of the renderer. These are the only generator weights
// pivotal tuning touches.
struct Appearance {
    Vec3 tint0;
    Mat tint;      // 3 x m_i, face color response to identity
    Vec3 bg0;
    Mat bgn;       // 3 x 8, background response to nuisance
    Mat palette;   // 68 x 3
    Mat bg_grad;   // 3 x 2

    static constexpr int kSize = 3 + 3 * kIdentityDim + 3 + 3 * kNuisanceDim + 3 * kLandmarks + 6;
    Vec pack() const;
    void unpack(const Vec& v);
};

struct ToyGenerator {
    std::uint64_t seed = 0;
    ShapeModel shape;
    Mat m1, m2, p;  // mapping z -> w: w = p * m2 * tanh(m1 * z)
    Mat b;          // 33 x 512 semantic map, orthonormal rows
    Vec c;          // 33 offset
    Vec exp_scale;  // p_e = exp_scale * tanh(q / tanh_div)
    Vec id_scale;   // p_i = id_scale * tanh(q / tanh_div)
    double theta_scale = 40.0;
    double tanh_div = 1.05;
    double nuisance_div = 0.35;
    Appearance app;
    RenderConfig render;
};

struct GenParams {
    PoseParams pose;
    Vec nuisance = Vec::Zero(kNuisanceDim);
};

ToyGenerator build_generator(std::uint64_t seed);

std::vector<LatentCode> sample_z(int count, std::uint64_t seed);
LatentCode map_to_w(const ToyGenerator& g, const LatentCode& z);
LatentCode broadcast_wplus(const LatentCode& w);
// z ~ N(0, I) -> w scaled by psi -> broadcast -> optional per-entry jitter.
LatentCode sample_wplus(const ToyGenerator& g, Rng& rng, double psi = 1.0, double jitter = 0.0);

// q = B vec(w+) + c.
Vec semantic_params(const ToyGenerator& g, const LatentCode& wplus);
GenParams calibrate(const ToyGenerator& g, const Vec& q);
Scene scene_for(const ToyGenerator& g, const GenParams& params);

struct RenderTrace {
    Vec q;
    GenParams params;
    Scene scene;
    SceneCache cache;
    Image out;
};

Image generate(const ToyGenerator& g, const LatentCode& wplus, RenderTrace* trace = nullptr);
Image render_params(const ToyGenerator& g, const GenParams& params, RenderTrace* trace = nullptr);

// Gradient of a scalar with image gradient dimg with respect to vec(w+).
// When dapp is given it also receives the gradient with respect to Appearance::pack().
Vec generate_vjp(const ToyGenerator& g, const RenderTrace& trace, const Image& dimg, Vec* dapp = nullptr);

// Closed-form direction matrix: the transposed pose+expression rows of B (512 x 15).
Mat oracle_directions(const ToyGenerator& g);

Checkpoint save_generator(const ToyGenerator& g);
ToyGenerator load_generator(const Checkpoint& ck);

}  // namespace fr
