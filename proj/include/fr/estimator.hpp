#pragma once

#include "fr/checkpoint.hpp"
#include "fr/render.hpp"
#include "fr/toygen.hpp"

#include <memory>
#include <utility>
#include <vector>

namespace fr {

constexpr int kParamDim = kPoseDim + kIdentityDim;  // 25: theta, p_e, p_i
// Fit vector: [theta(3), p_e(12), p_i(10), bg(3), tint(3), bg_grad(6)].
constexpr int kFitDim = kParamDim + 12;

struct CoarseStage {
    double sigma = 1.0;
    Vec mu, sd;  // feature standardization
    Mat r;       // (features + 1) x 25 ridge solution, last row is the bias
};

// Image -> (theta, p_e, p_i). A ridge cascade proposes parameters; a damped
// Gauss-Newton fit of the face model against the logit-inverted image refines them.
struct PoseRegressor {
    ShapeModel shape;
    Mat palette;
    RenderConfig render;
    Vec init;                       // 25, mean training parameters
    std::vector<CoarseStage> stages;
    Vec range_lo, range_hi;         // 1st / 99th percentile under the default code distribution
    int fast_iterations = 8;
    double retry_residual = 0.04;  // rms in pre-squash units
    double step_tolerance = 1e-9;
    std::vector<std::pair<double, int>> schedule{{2.5, 2}, {1.2, 2}, {0.0, 8}};  // fallback
};

struct PoseEstimate {
    PoseParams pose;
    Vec fit;              // kFitDim
    double residual_rms = 0;
    int iterations = 0;
};

// State needed to differentiate an estimate with respect to the input pixels.
struct EstimateTrace {
    Vec fit;
    Eigen::LDLT<Mat> h;  // Gauss-Newton normal matrix at the solution
    Mat t;               // 151 x kFitDim intermediate Jacobian
    std::array<Mat, 3> jc;  // per channel 4096 x 7 dense columns
    Scene scene;
    SceneCache cache;
    Image dpre_dimg;
};

struct RegressorTrainConfig {
    int n_samples = 12000;
    int n_heldout = 500;
    std::uint64_t seed = 1;
    double ridge = 1e-4;
    double tolerance = 0.02;  // held-out RMSE as a fraction of range
    std::vector<double> stage_sigmas{4.0, 3.0, 2.0, 1.5, 1.2};
};

struct RegressorReport {
    Vec rel_rmse;  // per parameter, fraction of calibrated range
    double max_rel_rmse = 0;
};

// Throws Error("training_failure") with the achieved RMSE when the held-out check fails.
PoseRegressor train_regressor(const ToyGenerator& gen, const RegressorTrainConfig& cfg,
                              RegressorReport* report = nullptr);

// Held-out check on default-distribution renders.
RegressorReport evaluate_regressor(const PoseRegressor& reg, const ToyGenerator& gen, int n, std::uint64_t seed);

PoseEstimate estimate_pose(const PoseRegressor& reg, const Image& image, EstimateTrace* trace = nullptr);
// Only the ridge cascade, no refinement.
Vec coarse_estimate(const PoseRegressor& reg, const Image& image);

// Gradient of a scalar with gradient dfull (25 values on [theta, p_e, p_i]) with respect to the image.
Image estimate_vjp(const PoseRegressor& reg, const EstimateTrace& trace, const Vec& dfull);

// The training distribution: half default codes, half broadened (psi 1.4, per-layer jitter 0.05).
LatentCode sample_training_code(const ToyGenerator& gen, Rng& rng, int i);

Checkpoint save_regressor(const PoseRegressor& r);
PoseRegressor load_regressor(const Checkpoint& ck);

}  // namespace fr
