#pragma once

#include "fr/directions.hpp"
#include "fr/embedder.hpp"

#include <array>
#include <string>
#include <vector>

namespace fr {

// Mean landmark distance over sqrt(bbox area), times 1000. Throws Error("invalid_argument") on zero area.
double nme(const Landmarks& pred, const Landmarks& gt, double bbox_w, double bbox_h);
// Width and height of the landmark bounding box.
std::array<double, 2> landmark_bbox(const Landmarks& l);

double pose_error(const PoseParams& a, const PoseParams& b);        // mean |theta| diff, degrees
double expression_error(const PoseParams& a, const PoseParams& b);  // mean |p_e| diff
double csim(const FrozenEmbedder& emb, const Image& a, const Image& b);
// Mean absolute difference of rescaled pose vectors over all 15 attributes.
double pose_transfer_error(const PoseStats& s, const PoseParams& a, const PoseParams& b);

// 68 projected landmarks of the shape a pose estimate describes.
Landmarks estimate_landmarks(const PoseRegressor& reg, const PoseParams& p);

// Attribute names in pose-vector order: yaw, pitch, roll, exp0 .. exp11.
const std::vector<std::string>& attribute_names();
// Index into the pose vector, or -1.
int attribute_index(const std::string& name);

struct LinearityResult {
    std::vector<int> attributes;  // yaw, pitch, exp0 (smile proxy), exp1 (open-mouth proxy)
    std::vector<double> correlation;
    std::vector<std::vector<std::array<double, 2>>> samples;  // (|dw|, |dp_hat|) per attribute
};

// n_edits per attribute. Throws Error("invalid_argument") when n_edits < 30.
LinearityResult linearity_analysis(const ToyGenerator& gen, const PoseRegressor& reg, const DirectionMatrix& d,
                                   int n_edits, std::uint64_t seed);

struct DisentanglementReport {
    int attribute = 0;
    Mat off_target;           // n x 15, |change| / calibrated range; the edited column is zero
    Vec achieved_ratio;       // n, achieved / requested change of the edited attribute
    Vec median_off_target;    // 15
    double median_achieved = 0;
};

// Transfers only attribute i from a random target to a random source, n times.
DisentanglementReport disentanglement_report(const ToyGenerator& gen, const PoseRegressor& reg,
                                             const DirectionMatrix& d, int attribute, int n, std::uint64_t seed);

double pearson(const std::vector<double>& x, const std::vector<double>& y);
double median(std::vector<double> v);

enum class EvalMode { SELF, CROSS };
EvalMode parse_eval_mode(const std::string& s);

struct EvalPair {
    std::string source_id, target_id;
    LatentCode source_code;
    Image source_image, target_image;
    const ToyGenerator* generator = nullptr;  // per-pair override, e.g. a tuned copy
};

struct EvalRecord {
    std::string source_id, target_id;
    double csim = 0, pose_l1_deg = 0, exp_l1 = 0, nme = 0, transfer = 0;
};

struct EvalReport {
    EvalMode mode = EvalMode::SELF;
    std::vector<EvalRecord> records;
    double mean_csim = 0, mean_pose_l1_deg = 0, mean_exp_l1 = 0, mean_nme = 0, mean_transfer = 0;
};

struct EvalContext {
    const ToyGenerator& gen;
    const PoseRegressor& reg;
    const FrozenEmbedder& emb;
    const DirectionMatrix& d;
};

// Self mode scores csim against the target; cross mode against the source. Pose and
// expression errors always compare the reenacted face with the target.
EvalReport run_eval(const EvalContext& ctx, const std::vector<EvalPair>& pairs, EvalMode mode);

std::string report_text(const EvalReport& r);
std::string report_json(const EvalReport& r);
std::string report_csv(const EvalReport& r);

}  // namespace fr
