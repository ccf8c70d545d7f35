#include "fr/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace fr {

double nme(const Landmarks& pred, const Landmarks& gt, double bbox_w, double bbox_h) {
    const double area = bbox_w * bbox_h;
    if (!(area > 0)) throw Error("invalid_argument", "nme needs a bounding box with positive area");
    return (pred - gt).rowwise().norm().mean() / std::sqrt(area) * 1e3;
}

std::array<double, 2> landmark_bbox(const Landmarks& l) {
    const Eigen::RowVector2d lo = l.colwise().minCoeff(), hi = l.colwise().maxCoeff();
    return {hi(0) - lo(0), hi(1) - lo(1)};
}

double pose_error(const PoseParams& a, const PoseParams& b) { return (a.theta - b.theta).cwiseAbs().mean(); }

double expression_error(const PoseParams& a, const PoseParams& b) {
    return (a.expression - b.expression).cwiseAbs().mean();
}

double csim(const FrozenEmbedder& emb, const Image& a, const Image& b) {
    return cosine_similarity(identity_embed(emb, a), identity_embed(emb, b));
}

double pose_transfer_error(const PoseStats& s, const PoseParams& a, const PoseParams& b) {
    return (rescale(a.pose_vector(), s) - rescale(b.pose_vector(), s)).cwiseAbs().mean();
}

Landmarks estimate_landmarks(const PoseRegressor& reg, const PoseParams& p) {
    return project_landmarks(posed_shape(reg.shape, p));
}

const std::vector<std::string>& attribute_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n{"yaw", "pitch", "roll"};
        for (int i = 0; i < kExpressionDim; ++i) n.push_back("exp" + std::to_string(i));
        return n;
    }();
    return names;
}

int attribute_index(const std::string& name) {
    const auto& n = attribute_names();
    const auto it = std::find(n.begin(), n.end(), name);
    return it == n.end() ? -1 : static_cast<int>(it - n.begin());
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() > 1, "pearson needs two equal-length samples");
    const Eigen::Map<const Vec> a(x.data(), x.size()), b(y.data(), y.size());
    const Vec da = a.array() - a.mean(), db = b.array() - b.mean();
    const double den = da.norm() * db.norm();
    return den > 0 ? da.dot(db) / den : 0.0;
}

double median(std::vector<double> v) {
    require(!v.empty(), "median of an empty sample");
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

LinearityResult linearity_analysis(const ToyGenerator& gen, const PoseRegressor& reg, const DirectionMatrix& d,
                                   int n_edits, std::uint64_t seed) {
    if (n_edits < 30) throw Error("invalid_argument", "linearity analysis needs at least 30 edits");
    LinearityResult res;
    res.attributes = {0, 1, 3, 4};
    Rng rng(seed ^ 0x11ea7ULL);
    for (int attr : res.attributes) {
        std::vector<double> dw, dp;
        std::vector<std::array<double, 2>> samples;
        for (int k = 0; k < n_edits; ++k) {
            const LatentCode ws = sample_wplus(gen, rng);
            const double eps = rng.uniform(-d.stats.a, d.stats.a);
            const Mat shift = delta_w(d.a, single_attribute_delta(attr, eps));
            const Vec ps = estimate_pose(reg, generate(gen, ws)).pose.pose_vector();
            const Vec pr = estimate_pose(reg, generate(gen, apply_shift(ws, shift))).pose.pose_vector();
            dw.push_back(shift.norm());
            dp.push_back(std::abs(pr[attr] - ps[attr]));
            samples.push_back({dw.back(), dp.back()});
        }
        res.correlation.push_back(pearson(dw, dp));
        res.samples.push_back(std::move(samples));
    }
    return res;
}

DisentanglementReport disentanglement_report(const ToyGenerator& gen, const PoseRegressor& reg,
                                             const DirectionMatrix& d, int attribute, int n, std::uint64_t seed) {
    require(attribute >= 0 && attribute < kPoseDim, "attribute index out of range");
    require(n >= 1, "disentanglement report needs n >= 1");
    DisentanglementReport rep;
    rep.attribute = attribute;
    rep.off_target = Mat::Zero(n, kPoseDim);
    rep.achieved_ratio = Vec::Zero(n);
    const Vec range = d.stats.high - d.stats.low;
    Rng rng(seed ^ 0xd15e7ULL);
    for (int k = 0; k < n; ++k) {
        const LatentCode ws = sample_wplus(gen, rng), wt = sample_wplus(gen, rng);
        const Vec ps = estimate_pose(reg, generate(gen, ws)).pose.pose_vector();
        const Vec pt = estimate_pose(reg, generate(gen, wt)).pose.pose_vector();
        Vec delta = Vec::Zero(kPoseDim);
        delta[attribute] = rescale(pt, d.stats)[attribute] - rescale(ps, d.stats)[attribute];
        const Vec pr = estimate_pose(reg, generate(gen, apply_shift(ws, delta_w(d.a, delta)))).pose.pose_vector();
        for (int j = 0; j < kPoseDim; ++j)
            if (j != attribute) rep.off_target(k, j) = std::abs(pr[j] - ps[j]) / range[j];
        const double req = pt[attribute] - ps[attribute];
        rep.achieved_ratio[k] = req != 0 ? (pr[attribute] - ps[attribute]) / req : 1.0;
    }
    rep.median_off_target = Vec::Zero(kPoseDim);
    for (int j = 0; j < kPoseDim; ++j) {
        const Vec col = rep.off_target.col(j);
        rep.median_off_target[j] = median(std::vector<double>(col.data(), col.data() + n));
    }
    rep.median_achieved = median(std::vector<double>(rep.achieved_ratio.data(), rep.achieved_ratio.data() + n));
    return rep;
}

EvalMode parse_eval_mode(const std::string& s) {
    if (s == "self") return EvalMode::SELF;
    if (s == "cross") return EvalMode::CROSS;
    throw Error("invalid_argument", "unknown eval mode '" + s + "', expected self or cross");
}

EvalReport run_eval(const EvalContext& ctx, const std::vector<EvalPair>& pairs, EvalMode mode) {
    if (pairs.empty()) throw Error("invalid_argument", "empty pair list");
    EvalReport rep;
    rep.mode = mode;
    for (const EvalPair& p : pairs) {
        const ToyGenerator& g = p.generator ? *p.generator : ctx.gen;
        const PoseParams ps = estimate_pose(ctx.reg, p.source_image).pose;
        const PoseParams pt = estimate_pose(ctx.reg, p.target_image).pose;
        const LatentCode wr = reenact_code(ctx.d, p.source_code, ps.pose_vector(), pt.pose_vector());
        const Image ir = generate(g, wr);
        const PoseParams pr = estimate_pose(ctx.reg, ir).pose;
        EvalRecord r;
        r.source_id = p.source_id;
        r.target_id = p.target_id;
        r.csim = csim(ctx.emb, ir, mode == EvalMode::SELF ? p.target_image : p.source_image);
        r.pose_l1_deg = pose_error(pr, pt);
        r.exp_l1 = expression_error(pr, pt);
        const Landmarks gt = estimate_landmarks(ctx.reg, pt);
        const auto box = landmark_bbox(gt);
        r.nme = nme(estimate_landmarks(ctx.reg, pr), gt, box[0], box[1]);
        r.transfer = pose_transfer_error(ctx.d.stats, pr, pt);
        rep.records.push_back(r);
    }
    const double n = static_cast<double>(rep.records.size());
    for (const EvalRecord& r : rep.records) {
        rep.mean_csim += r.csim / n;
        rep.mean_pose_l1_deg += r.pose_l1_deg / n;
        rep.mean_exp_l1 += r.exp_l1 / n;
        rep.mean_nme += r.nme / n;
        rep.mean_transfer += r.transfer / n;
    }
    return rep;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

const char* mode_name(EvalMode m) { return m == EvalMode::SELF ? "self" : "cross"; }

}  // namespace

std::string report_text(const EvalReport& r) {
    std::ostringstream os;
    os << "mode " << mode_name(r.mode) << ", " << r.records.size() << " pairs\n";
    os << "source\ttarget\tcsim\tpose_l1_deg\texp_l1\tnme\ttransfer\n";
    for (const EvalRecord& e : r.records)
        os << e.source_id << '\t' << e.target_id << '\t' << fmt(e.csim) << '\t' << fmt(e.pose_l1_deg) << '\t'
           << fmt(e.exp_l1) << '\t' << fmt(e.nme) << '\t' << fmt(e.transfer) << '\n';
    os << "mean\t\t" << fmt(r.mean_csim) << '\t' << fmt(r.mean_pose_l1_deg) << '\t' << fmt(r.mean_exp_l1) << '\t'
       << fmt(r.mean_nme) << '\t' << fmt(r.mean_transfer) << '\n';
    os << "NME uses landmarks projected from estimated shapes and is only comparable within this tool.\n";
    os << "FID, FVD and LPIPS are not computed.\n";
    return os.str();
}

std::string report_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["mode"] = mode_name(r.mode);
    j["pairs"] = r.records.size();
    j["mean"] = {{"csim", r.mean_csim},
                 {"pose_l1_deg", r.mean_pose_l1_deg},
                 {"exp_l1", r.mean_exp_l1},
                 {"nme", r.mean_nme},
                 {"transfer", r.mean_transfer}};
    return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "source,target,csim,pose_l1_deg,exp_l1,nme,transfer\n";
    for (const EvalRecord& e : r.records)
        os << e.source_id << ',' << e.target_id << ',' << fmt(e.csim) << ',' << fmt(e.pose_l1_deg) << ','
           << fmt(e.exp_l1) << ',' << fmt(e.nme) << ',' << fmt(e.transfer) << '\n';
    return os.str();
}

}  // namespace fr
