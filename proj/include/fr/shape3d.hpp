#pragma once

#include "fr/checkpoint.hpp"
#include "fr/core.hpp"

#include <array>
#include <utility>
#include <vector>

namespace fr {

constexpr int kLandmarks = 68;
constexpr int kIdentityDim = 10;
constexpr int kExpressionDim = 12;
constexpr int kPoseDim = 3 + kExpressionDim;  // k = 15
constexpr double kProjScale = 25.0;           // pixels per shape unit
constexpr double kProjCenter = 31.5;          // image coordinate of the origin

using Shape = Eigen::Matrix<double, kLandmarks, 3>;
using Landmarks = Eigen::Matrix<double, kLandmarks, 2>;

struct ShapeModel {
    Vec mean;  // 3N, vertex-major (x0,y0,z0,x1,...)
    Mat identity_basis;    // 3N x m_i
    Mat expression_basis;  // 3N x m_e
    std::uint64_t seed = 0;
};

// theta: yaw, pitch, roll in degrees. identity is carried but never edited by directions.
struct PoseParams {
    Vec3 theta = Vec3::Zero();
    Vec expression = Vec::Zero(kExpressionDim);
    Vec identity = Vec::Zero(kIdentityDim);

    // [theta, expression], the vector p the direction matrix acts on.
    Vec pose_vector() const;
    void set_pose_vector(const Vec& p);
    // [theta, expression, identity], 25 values.
    Vec full() const;
    static PoseParams from_full(const Vec& v);
};

struct LandmarkPairTable {
    std::vector<std::pair<int, int>> eye_pairs;    // 1-indexed
    std::vector<std::pair<int, int>> mouth_pairs;  // 1-indexed
};

const LandmarkPairTable& default_pairs();

// Canonical 68-point template in iBUG order, centered at the origin.
Shape template_shape();

ShapeModel build_shape_model(std::uint64_t seed);

Shape reconstruct_shape(const ShapeModel& model, const Vec& identity, const Vec& expression);

// R = R_roll * R_pitch * R_yaw, angles in degrees.
Mat3 rotation_matrix(const Vec3& theta_deg);
// Derivatives of R with respect to each angle, per degree.
std::array<Mat3, 3> rotation_jacobian(const Vec3& theta_deg);

Shape apply_pose(const Shape& shape, const Vec3& theta_deg);
Shape posed_shape(const ShapeModel& model, const PoseParams& p);

// Orthographic: u = c + s*x, v = c - s*y (image rows grow downwards).
Landmarks project_landmarks(const Shape& shape);

double shape_loss(const Shape& reenacted, const Shape& gt);
double pair_distance_loss(const Shape& reenacted, const Shape& gt, const std::vector<std::pair<int, int>>& pairs);

struct ReenactmentLoss {
    double shape = 0, eye = 0, mouth = 0;
    double total() const { return shape + eye + mouth; }
};
ReenactmentLoss reenactment_loss(const Shape& reenacted, const Shape& gt,
                                 const LandmarkPairTable& pairs = default_pairs());
// Subgradient of the total reenactment loss with respect to the reenacted shape.
Shape reenactment_loss_grad(const Shape& reenacted, const Shape& gt,
                            const LandmarkPairTable& pairs = default_pairs());

// Pulls a gradient on posed_shape(model, p) back to the 25 coefficients [theta, p_e, p_i].
Vec posed_shape_vjp(const ShapeModel& model, const PoseParams& p, const Shape& grad);

Checkpoint save_shape_model(const ShapeModel& m);
ShapeModel load_shape_model(const Checkpoint& ck);

}  // namespace fr
