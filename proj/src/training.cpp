#include "fr/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

namespace fr {

Scheme parse_scheme(const std::string& s) {
    if (s == "synthetic") return Scheme::SYNTHETIC;
    if (s == "mixed") return Scheme::MIXED;
    if (s == "paired") return Scheme::PAIRED;
    throw Error("invalid_argument", "unknown scheme '" + s + "'");
}

std::string scheme_name(Scheme s) {
    switch (s) {
        case Scheme::SYNTHETIC: return "synthetic";
        case Scheme::MIXED: return "mixed";
        case Scheme::PAIRED: return "paired";
    }
    return "?";
}

void validate(const TrainConfig& c) {
    auto frac = [](double f) { return f >= 0.0 && f <= 1.0; };
    if (c.iterations < 0 || c.batch_size < 1 || !(c.learning_rate > 0) || !frac(c.single_attribute_fraction) ||
        !frac(c.mixed_real_fraction))
        throw Error("invalid_argument", "training config out of range");
    const LossWeights& w = c.weights;
    if (w.r < 0 || w.id < 0 || w.per < 0 || w.pix < 0) throw Error("invalid_argument", "loss weights must be >= 0");
}

double identity_loss(const FrozenEmbedder& emb, const Image& a, const Image& b) {
    return 1.0 - identity_embed(emb, a).dot(identity_embed(emb, b));
}

double perceptual_loss(const FrozenEmbedder& emb, const Image& a, const Image& b) {
    return perceptual_distance(perceptual_features(emb, a), perceptual_features(emb, b));
}

double pixel_loss(const Image& a, const Image& b) { return mean_abs_diff(a, b); }

namespace {

void finish(const LossWeights& w, LossBreakdown& l) {
    l.total = w.r * l.r.total() + w.id * l.id + w.per * l.per + w.pix * l.pix;
}

}  // namespace

LossBreakdown total_loss_unpaired(const LossWeights& w, const FrozenEmbedder& emb, const Image& source,
                                  const Image& reenacted, const Shape& s_r, const Shape& s_gt) {
    LossBreakdown l;
    l.r = reenactment_loss(s_r, s_gt);
    l.id = identity_loss(emb, source, reenacted);
    l.per = perceptual_loss(emb, source, reenacted);
    LossWeights unpaired = w;
    unpaired.pix = 0;
    finish(unpaired, l);
    return l;
}

LossBreakdown total_loss_paired(const LossWeights& w, const FrozenEmbedder& emb, const Image& reenacted,
                                const Image& target, const Shape& s_r, const Shape& s_gt) {
    LossBreakdown l;
    l.r = reenactment_loss(s_r, s_gt);
    l.id = identity_loss(emb, reenacted, target);
    l.per = perceptual_loss(emb, reenacted, target);
    l.pix = pixel_loss(reenacted, target);
    finish(w, l);
    return l;
}

TrainingPair sample_training_pair(const TrainConfig& cfg, const ToyGenerator& gen, const TrainingPools& pools,
                                  Rng& rng, double a) {
    TrainingPair p;
    if (cfg.scheme == Scheme::PAIRED) {
        std::vector<int> usable;
        for (int v = 0; v < static_cast<int>(pools.videos.size()); ++v)
            if (pools.videos[v].size() >= 2) usable.push_back(v);
        if (usable.empty()) throw Error("empty_pool", "paired scheme needs at least one video with two frames");
        const auto& frames = pools.videos[usable[rng.index(static_cast<int>(usable.size()))]];
        const int n = static_cast<int>(frames.size());
        const int i = rng.index(n);
        const int j = (i + 1 + rng.index(n - 1)) % n;
        const InvertedFrame& s = pools.frames[frames[i]];
        const InvertedFrame& t = pools.frames[frames[j]];
        p.source = s.w_inv;
        p.real_source = true;
        p.target = t.w_inv;
        p.real_target = true;
        p.target_image = t.image;
        return p;
    }
    if (cfg.scheme == Scheme::MIXED && rng.uniform() < cfg.mixed_real_fraction) {
        if (pools.frames.empty()) throw Error("empty_pool", "mixed scheme needs inverted frames");
        p.source = pools.frames[rng.index(static_cast<int>(pools.frames.size()))].w_inv;
        p.real_source = true;
    } else {
        p.source = sample_wplus(gen, rng);
    }
    if (rng.uniform() < cfg.single_attribute_fraction) {
        p.single = true;
        p.attribute = rng.index(kPoseDim);
        p.eps = rng.uniform(-a, a);
    } else {
        p.target = sample_wplus(gen, rng);
    }
    return p;
}

SampleOutcome sample_loss(const TrainContext& ctx, const DirectionMatrix& d, const LossWeights& w,
                          const TrainingPair& pair, bool paired, bool grad) {
    const Image is = generate(ctx.gen, pair.source);
    const PoseParams ps = estimate_pose(ctx.reg, is).pose;
    const Vec ps_r = rescale(ps.pose_vector(), d.stats);

    Vec pt_r;
    Image it;
    if (pair.single) {
        pt_r = ps_r + single_attribute_delta(pair.attribute, pair.eps);
    } else {
        it = pair.real_target ? pair.target_image : generate(ctx.gen, pair.target);
        pt_r = rescale(estimate_pose(ctx.reg, it).pose.pose_vector(), d.stats);
    }
    PoseParams gt = ps;
    gt.set_pose_vector(unscale(pt_r, d.stats));

    SampleOutcome out;
    out.delta = pt_r - ps_r;
    const LatentCode wr = apply_shift(pair.source, delta_w(d.a, out.delta));
    RenderTrace gtrace;
    const Image ir = generate(ctx.gen, wr, &gtrace);
    EstimateTrace etrace;
    const PoseParams pr = estimate_pose(ctx.reg, ir, grad ? &etrace : nullptr).pose;
    const Shape s_r = posed_shape(ctx.reg.shape, pr);
    const Shape s_gt = posed_shape(ctx.reg.shape, gt);

    const Image& ref = paired ? it : is;
    // Embeddings are computed once and shared by the loss value and its gradient.
    IdentityTrace itr;
    PerceptualTrace ptr;
    const Vec er = identity_embed(ctx.emb, ir, grad ? &itr : nullptr);
    const Vec eref = identity_embed(ctx.emb, ref);
    const PerceptualFeatures fr = perceptual_features(ctx.emb, ir, grad ? &ptr : nullptr);
    const PerceptualFeatures fref = perceptual_features(ctx.emb, ref);
    out.loss.r = reenactment_loss(s_r, s_gt);
    out.loss.id = 1.0 - er.dot(eref);
    out.loss.per = perceptual_distance(fr, fref);
    LossWeights used = w;
    if (paired)
        out.loss.pix = pixel_loss(ir, ref);
    else
        used.pix = 0;
    finish(used, out.loss);
    if (!grad) return out;

    // Shape term through the estimator.
    const Vec dp = posed_shape_vjp(ctx.reg.shape, pr, w.r * reenactment_loss_grad(s_r, s_gt));
    Image dir = estimate_vjp(ctx.reg, etrace, dp);

    // Identity term: 1 - e_ref . e_r with unit embeddings.
    dir += identity_embed_vjp(ctx.emb, itr, -w.id * eref);

    // Perceptual term.
    std::array<Mat, 3> df;
    for (int s = 0; s < 3; ++s)
        df[s] = (2.0 * w.per / static_cast<double>(fr[s].data.size())) * (fr[s].data - fref[s].data);
    dir += perceptual_vjp(ctx.emb, ptr, df);

    if (paired && w.pix != 0) {
        const double scale = w.pix / (3.0 * kImageSize * kImageSize);
        for (int c = 0; c < 3; ++c)
            dir.ch[c] += (ir.ch[c] - ref.ch[c]).unaryExpr([&](double v) { return v > 0 ? scale : v < 0 ? -scale : 0.0; });
    }
    out.grad_w = generate_vjp(ctx.gen, gtrace, dir);
    return out;
}

BatchOutcome batch_loss(const TrainContext& ctx, const DirectionMatrix& d, const LossWeights& w,
                        const std::vector<TrainingPair>& batch, bool paired, bool grad) {
    require(!batch.empty(), "batch_loss: empty batch");
    BatchOutcome out;
    out.grad_a = Mat::Zero(d.a.rows(), d.a.cols());
    const double inv = 1.0 / static_cast<double>(batch.size());
    // Fixed summation order: batch index ascending.
    for (const TrainingPair& p : batch) {
        const SampleOutcome s = sample_loss(ctx, d, w, p, paired, grad);
        out.loss.r.shape += inv * s.loss.r.shape;
        out.loss.r.eye += inv * s.loss.r.eye;
        out.loss.r.mouth += inv * s.loss.r.mouth;
        out.loss.id += inv * s.loss.id;
        out.loss.per += inv * s.loss.per;
        out.loss.pix += inv * s.loss.pix;
        if (grad) out.grad_a.noalias() += inv * s.grad_w * s.delta.transpose();
    }
    LossWeights used = w;
    if (!paired) used.pix = 0;
    finish(used, out.loss);
    return out;
}

std::string log_line(const LogRecord& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "{\"iteration\":%d,\"total\":%.17g,\"reenact\":%.17g,\"shape\":%.17g,\"eye\":%.17g,"
                  "\"mouth\":%.17g,\"id\":%.17g,\"per\":%.17g,\"pix\":%.17g,\"wall_ms\":%.3f}",
                  r.iteration, r.loss.total, r.loss.r.total(), r.loss.r.shape, r.loss.r.eye, r.loss.r.mouth, r.loss.id,
                  r.loss.per, r.loss.pix, r.wall_ms);
    return buf;
}

namespace {

TrainResult run_adam(const TrainContext& ctx, const DirectionMatrix& init, const TrainConfig& cfg,
                     const TrainingPools& pools, const LogSink& sink) {
    validate(cfg);
    TrainResult res;
    res.directions = init;
    Mat& a = res.directions.a;
    Mat m = Mat::Zero(a.rows(), a.cols());
    Vec v = Vec::Zero(a.cols());
    Rng rng(cfg.seed);
    const bool paired = cfg.scheme == Scheme::PAIRED;
    const auto t0 = std::chrono::steady_clock::now();
    for (int it = 0; it < cfg.iterations; ++it) {
        std::vector<TrainingPair> batch;
        for (int b = 0; b < cfg.batch_size; ++b)
            batch.push_back(sample_training_pair(cfg, ctx.gen, pools, rng, res.directions.stats.a));
        const BatchOutcome bo = batch_loss(ctx, res.directions, cfg.weights, batch, paired, true);
        if (!std::isfinite(bo.loss.total) || !bo.grad_a.allFinite())
            throw Error("non_finite_loss", "non-finite loss or gradient at iteration " + std::to_string(it));
        m = cfg.beta1 * m + (1 - cfg.beta1) * bo.grad_a;
        v = cfg.beta2 * v + (1 - cfg.beta2) * bo.grad_a.cwiseAbs2().colwise().mean().transpose();
        const double c1 = 1 - std::pow(cfg.beta1, it + 1), c2 = 1 - std::pow(cfg.beta2, it + 1);
        for (int j = 0; j < a.cols(); ++j)
            a.col(j) -= cfg.learning_rate * (m.col(j) / c1) / (std::sqrt(v[j] / c2) + cfg.adam_eps);
        LogRecord rec;
        rec.iteration = it;
        rec.loss = bo.loss;
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (sink) sink(rec);
        res.log.push_back(rec);
    }
    return res;
}

}  // namespace

TrainResult train_directions(const TrainContext& ctx, const DirectionMatrix& init, const TrainConfig& cfg,
                             const TrainingPools& pools, const LogSink& sink) {
    return run_adam(ctx, init, cfg, pools, sink);
}

TrainResult finetune_paired(const TrainContext& ctx, const DirectionMatrix& init, const TrainingPools& pools,
                            TrainConfig cfg, const LogSink& sink) {
    cfg.scheme = Scheme::PAIRED;
    cfg.single_attribute_fraction = 0.0;
    bool any = false;
    for (const auto& v : pools.videos) any = any || v.size() >= 2;
    if (!any) throw Error("empty_pool", "paired fine-tuning needs a video with at least two frames");
    return run_adam(ctx, init, cfg, pools, sink);
}

}  // namespace fr
