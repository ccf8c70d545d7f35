#pragma once

#include "fr/image.hpp"
#include "fr/shape3d.hpp"

namespace fr {

struct RenderConfig {
    double blob_sigma = 1.1;
    double mask_a = 21.0;  // face-oval half width, pixels
    double mask_b = 25.0;  // face-oval half height, pixels
    double mask_slope = 6.0;
    double squash = 5.0;
};

// Everything the raster depends on once geometry is known.
struct Scene {
    Landmarks uv;                            // blob centers, pixels
    double roll_deg = 0;                     // rotates the face oval
    Vec3 tint = Vec3::Zero();                // face color
    Vec3 bg = Vec3::Zero();                  // background color at the image center
    Mat bg_grad = Mat::Zero(3, 2);           // background slope per channel along (x, y)
    Mat palette = Mat::Zero(kLandmarks, 3);  // blob color per landmark
    double sigma = 1.1;                      // blob width
    double amp = 1.0;                        // blob amplitude multiplier
};

// Blob profiles are truncated to |i - center| <= 7 sigma, beyond which they are stored as zero.
struct SceneCache {
    Mat gx, gy;    // kLandmarks x 64 Gaussian profiles
    Mat gxp, gyp;  // derivatives with respect to the blob center
    std::array<int, kLandmarks> x0{}, x1{}, y0{}, y1{};  // inclusive support; x0 > x1 when empty
    Mat mask;      // 64 x 64
    Mat dm_dcu, dm_dcv, dm_droll;  // per degree for roll
    std::array<Mat, 3> bgfield;
};

struct SceneGrad {
    Landmarks duv = Landmarks::Zero();
    double droll_deg = 0;
    Vec3 dtint = Vec3::Zero();
    Vec3 dbg = Vec3::Zero();
    Mat dbg_grad = Mat::Zero(3, 2);
    Mat dpalette = Mat::Zero(kLandmarks, 3);
};

// Normalized image coordinate used by the background gradient: (i - 31.5) / 32.
double norm_coord(int i);

// Pre-squash raster: bgfield * (1 - mask) + tint * mask - blobs.
Image render_pre(const Scene& s, const RenderConfig& cfg, SceneCache* cache = nullptr);
Image squash(const Image& pre, const RenderConfig& cfg);
// Inverse of squash; inputs are clamped to [1e-6, 1 - 1e-6] first so any image maps to finite values.
Image unsquash(const Image& img, const RenderConfig& cfg, Image* dpre_dimg = nullptr);

// Pullback of a gradient on the pre-squash raster. The landmark gradient includes
// the dependence of the oval center on the landmark centroid.
SceneGrad scene_vjp(const Scene& s, const SceneCache& cache, const Image& dpre);

}  // namespace fr
