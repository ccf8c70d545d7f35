#include "fr/inversion.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

namespace fr {

namespace fs = std::filesystem;
using nlohmann::json;

Image render_with_bg_shift(const ToyGenerator& gen, const LatentCode& w, const Mat& bg_grad_shift) {
    Scene s = scene_for(gen, calibrate(gen, semantic_params(gen, w)));
    s.bg_grad += bg_grad_shift;
    return squash(render_pre(s, gen.render), gen.render);
}

RealAnalogCorpus build_real_corpus(const ToyGenerator& gen, int n, std::uint64_t seed, const CorpusConfig& cfg) {
    if (n < 1) throw Error("invalid_argument", "corpus size must be >= 1");
    if (cfg.frames_per_video < 1) throw Error("invalid_argument", "frames_per_video must be >= 1");
    RealAnalogCorpus c;
    c.config = cfg;
    Rng rng(seed ^ 0xc0a905ULL);
    const int shared = kQDim - kQIdentityOffset;  // identity + nuisance rows of B
    const Mat b_shared = gen.b.bottomRows(shared);
    LatentCode base;
    Vec q_base;
    Mat shift;
    for (int i = 0; i < n; ++i) {
        const int video = i / cfg.frames_per_video, frame = i % cfg.frames_per_video;
        if (frame == 0) {
            base = sample_wplus(gen, rng, cfg.psi, cfg.jitter);
            q_base = semantic_params(gen, base);
            shift = rng.normal_mat(3, 2, cfg.bg_grad_std);
        }
        CorpusFrame f;
        f.video = video;
        f.seed = rng.fork();
        Rng frng(f.seed);
        LatentCode code = sample_wplus(gen, frng, cfg.psi, cfg.jitter);
        const Vec q = semantic_params(gen, code);
        const Vec flat = code.flat() + b_shared.transpose() * (q_base.tail(shared) - q.tail(shared));
        f.truth = LatentCode::wplus_from_flat(flat);
        f.bg_grad_shift = shift;
        Image img = render_with_bg_shift(gen, f.truth, shift);
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < kImageSize; ++y)
                for (int x = 0; x < kImageSize; ++x)
                    img.at(ch, y, x) = std::clamp(img.at(ch, y, x) + cfg.noise * frng.normal(), 0.0, 1.0);
        f.image = quantize8(img);
        char id[32];
        std::snprintf(id, sizeof id, "v%03d_f%02d", video, frame);
        f.id = id;
        c.frames.push_back(std::move(f));
    }
    return c;
}

void save_corpus(const RealAnalogCorpus& c, const std::string& dir) {
    fs::create_directories(dir);
    json idx;
    idx["config"] = {{"frames_per_video", c.config.frames_per_video}, {"psi", c.config.psi},
                     {"jitter", c.config.jitter}, {"noise", c.config.noise}, {"bg_grad_std", c.config.bg_grad_std}};
    idx["frames"] = json::array();
    Checkpoint truth("corpus_truth", 1);
    for (const CorpusFrame& f : c.frames) {
        const std::string file = f.id + ".png";
        write_file((fs::path(dir) / file).string(), encode_png(f.image));
        idx["frames"].push_back({{"id", f.id}, {"file", file}, {"seed", std::to_string(f.seed)}, {"video", f.video}});
        truth.put("truth." + f.id, f.truth.data);
        truth.put("shift." + f.id, f.bg_grad_shift);
    }
    write_file((fs::path(dir) / "index.json").string(), idx.dump(2) + "\n");
    truth.save((fs::path(dir) / "truth.ckpt").string());
}

RealAnalogCorpus load_corpus(const std::string& dir, bool with_truth) {
    const std::string text = read_file((fs::path(dir) / "index.json").string());
    json idx;
    try {
        idx = json::parse(text);
    } catch (const json::exception& e) {
        throw Error("corpus_corrupt", std::string("index.json: ") + e.what());
    }
    RealAnalogCorpus c;
    const json& cf = idx.at("config");
    c.config.frames_per_video = cf.at("frames_per_video").get<int>();
    c.config.psi = cf.at("psi").get<double>();
    c.config.jitter = cf.at("jitter").get<double>();
    c.config.noise = cf.at("noise").get<double>();
    c.config.bg_grad_std = cf.at("bg_grad_std").get<double>();
    Checkpoint truth("corpus_truth", 1);
    if (with_truth) truth = Checkpoint::load((fs::path(dir) / "truth.ckpt").string());
    for (const json& e : idx.at("frames")) {
        CorpusFrame f;
        f.id = e.at("id").get<std::string>();
        f.video = e.at("video").get<int>();
        f.seed = std::stoull(e.at("seed").get<std::string>());
        f.image = decode_png(read_file((fs::path(dir) / e.at("file").get<std::string>()).string()));
        if (with_truth) {
            f.truth = {LatentKind::WPLUS, truth.mat("truth." + f.id)};
            f.bg_grad_shift = truth.mat("shift." + f.id);
        }
        c.frames.push_back(std::move(f));
    }
    return c;
}

namespace {

constexpr int kEncFeatures = 2 * kFitDim + 1;

Vec expand(const Encoder& e, const Vec& fit) {
    const Vec z = ((fit - e.mu).array() / e.sd.array()).matrix();
    Vec f(kEncFeatures);
    f << z, z.array().cube().matrix(), 1.0;
    return f;
}

LatentCode from_flat(const Vec& v) { return LatentCode::wplus_from_flat(v); }

// Gradient of w_pix * L1 + w_per * perceptual (+ w_id * identity) with respect to the image.
double recon_terms(const FrozenEmbedder& emb, const Image& out, const Image& ref, double w_pix, double w_per,
                   double w_id, Image* dimg) {
    const double n = 3.0 * kImageSize * kImageSize;
    double loss = w_pix * mean_abs_diff(out, ref);
    PerceptualTrace pt;
    const PerceptualFeatures fo = perceptual_features(emb, out, dimg ? &pt : nullptr);
    const PerceptualFeatures fr = perceptual_features(emb, ref);
    loss += w_per * perceptual_distance(fo, fr);
    IdentityTrace itr;
    Vec eref;
    if (w_id != 0) {
        const Vec eo = identity_embed(emb, out, dimg ? &itr : nullptr);
        eref = identity_embed(emb, ref);
        loss += w_id * (1.0 - eo.dot(eref));
    }
    if (dimg) {
        for (int ch = 0; ch < 3; ++ch)
            dimg->ch[ch] = (out.ch[ch] - ref.ch[ch]).unaryExpr([&](double v) {
                return v > 0 ? w_pix / n : v < 0 ? -w_pix / n : 0.0;
            });
        std::array<Mat, 3> df;
        for (int s = 0; s < 3; ++s)
            df[s] = (2.0 * w_per / static_cast<double>(fo[s].data.size())) * (fo[s].data - fr[s].data);
        *dimg += perceptual_vjp(emb, pt, df);
        if (w_id != 0) *dimg += identity_embed_vjp(emb, itr, -w_id * eref);
    }
    return loss;
}

}  // namespace

CorpusSplit split_corpus(const RealAnalogCorpus& corpus, double holdout_fraction) {
    CorpusSplit s;
    if (corpus.frames.empty()) return s;
    int max_video = 0;
    for (const auto& f : corpus.frames) max_video = std::max(max_video, f.video);
    const int n_videos = max_video + 1;
    const int held_videos =
        n_videos > 1 ? std::clamp(static_cast<int>(std::round(holdout_fraction * n_videos)), 1, n_videos - 1) : 0;
    for (int i = 0; i < static_cast<int>(corpus.frames.size()); ++i)
        (corpus.frames[i].video >= n_videos - held_videos ? s.held : s.train).push_back(i);
    // A single video cannot be split; it serves both roles.
    if (s.held.empty()) s.held = s.train;
    return s;
}

TrainingPools build_pools(const Encoder& e, const ToyGenerator& gen, const PoseRegressor& reg,
                          const RealAnalogCorpus& corpus, const std::vector<int>& indices) {
    TrainingPools pools;
    std::map<int, int> slot;
    for (int i : indices) {
        const CorpusFrame& f = corpus.frames.at(i);
        pools.frames.push_back({invert(e, gen, reg, f.image), f.image, f.video});
        auto [it, fresh] = slot.try_emplace(f.video, static_cast<int>(pools.videos.size()));
        if (fresh) pools.videos.emplace_back();
        pools.videos[it->second].push_back(static_cast<int>(pools.frames.size()) - 1);
    }
    return pools;
}

Vec encoder_features(const Encoder& e, const PoseRegressor& reg, const Image& img) {
    return expand(e, estimate_pose(reg, img).fit);
}

LatentCode refine_code(const ToyGenerator& gen, const Mat& basis, const LatentCode& w0, const Image& img, int iterations) {
    auto flatten = [](const Image& im) {
        Vec v(3 * kImageSize * kImageSize);
        for (int ch = 0; ch < 3; ++ch) v.segment(ch * kImageSize * kImageSize, kImageSize * kImageSize) = im.ch[ch].reshaped();
        return v;
    };
    const Vec target = flatten(img);
    Vec w = w0.flat();
    Vec r = flatten(generate(gen, from_flat(w))) - target;
    double cost = r.squaredNorm(), mu = 1e-3;
    const double h = 1e-4;
    const int k = static_cast<int>(basis.cols());
    Mat jac(r.size(), k);
    for (int it = 0; it < iterations; ++it) {
        for (int j = 0; j < k; ++j)
            jac.col(j) = (flatten(generate(gen, from_flat(w + h * basis.col(j)))) - target - r) / h;
        const Mat jtj = jac.transpose() * jac;
        const Vec jtr = jac.transpose() * r;
        bool accepted = false;
        for (int tries = 0; tries < 6 && !accepted; ++tries) {
            Mat a = jtj;
            a.diagonal() += mu * jtj.diagonal() + Vec::Constant(k, 1e-9);
            const Vec step = -a.ldlt().solve(jtr);
            const Vec wn = w + basis * step;
            const Vec rn = flatten(generate(gen, from_flat(wn))) - target;
            if (rn.allFinite() && rn.squaredNorm() < cost) {
                w = wn;
                r = rn;
                cost = rn.squaredNorm();
                mu = std::max(mu / 10, 1e-9);
                accepted = true;
            } else {
                mu *= 10;
            }
        }
        if (!accepted) break;
    }
    return from_flat(w);
}

LatentCode invert(const Encoder& e, const ToyGenerator& gen, const PoseRegressor& reg, const Image& img) {
    return refine_code(gen, e.basis, from_flat(e.head * encoder_features(e, reg, img)), img, e.refine_iterations);
}

Encoder train_encoder(const ToyGenerator& gen, const PoseRegressor& reg, const FrozenEmbedder& emb,
                      const RealAnalogCorpus& corpus, const EncoderConfig& cfg, EncoderReport* report) {
    if (cfg.synthetic_samples < 10) throw Error("invalid_argument", "encoder needs at least 10 synthetic samples");
    Rng rng(cfg.seed ^ 0xe4c0deULL);
    const int n = cfg.synthetic_samples;
    Mat fits(n, kFitDim), codes(n, kWPlusDim);
    for (int i = 0; i < n; ++i) {
        const LatentCode w = i % 2 == 0 ? sample_wplus(gen, rng) : sample_wplus(gen, rng, 1.4, 0.05);
        codes.row(i) = w.flat().transpose();
        fits.row(i) = estimate_pose(reg, generate(gen, w)).fit.transpose();
    }
    Encoder e;
    e.refine_iterations = cfg.refine_iterations;
    e.mu = fits.colwise().mean().transpose();
    e.sd = (fits.rowwise() - e.mu.transpose()).cwiseAbs2().colwise().mean().cwiseSqrt().transpose();
    // bg_grad is fixed in the generator, so those fit values carry nothing w+ can express. Mute them.
    e.sd.tail(6).setConstant(1e6);
    Mat feats(n, kEncFeatures);
    for (int i = 0; i < n; ++i) feats.row(i) = expand(e, fits.row(i).transpose()).transpose();
    Mat gram = feats.transpose() * feats;
    gram.diagonal().head(kEncFeatures - 1).array() += cfg.ridge * n;
    e.head = gram.ldlt().solve(feats.transpose() * codes).transpose();
    Eigen::JacobiSVD<Mat> svd(e.head.leftCols(kEncFeatures - 1), Eigen::ComputeThinU);
    e.basis = svd.matrixU().leftCols(kQDim);

    const CorpusSplit split = split_corpus(corpus, cfg.holdout_fraction);
    const std::vector<int>& train = split.train;
    const std::vector<int>& held = split.held;
    std::vector<Vec> feat(corpus.frames.size());
    for (size_t i = 0; i < corpus.frames.size(); ++i) feat[i] = encoder_features(e, reg, corpus.frames[i].image);

    if (!train.empty() && cfg.finetune_steps > 0) {
        Mat m = Mat::Zero(e.head.rows(), e.head.cols()), v = m;
        const double b1 = 0.9, b2 = 0.999;
        const int batch = std::min<int>(4, static_cast<int>(train.size()));
        for (int step = 0; step < cfg.finetune_steps; ++step) {
            Mat g = Mat::Zero(e.head.rows(), e.head.cols());
            for (int b = 0; b < batch; ++b) {
                const int i = train[rng.index(static_cast<int>(train.size()))];
                RenderTrace tr;
                const Image out = generate(gen, from_flat(e.head * feat[i]), &tr);
                Image dimg;
                recon_terms(emb, out, corpus.frames[i].image, cfg.w_pix, cfg.w_per, cfg.w_id, &dimg);
                g.noalias() += generate_vjp(gen, tr, dimg) * feat[i].transpose() / batch;
            }
            if (!g.allFinite()) throw Error("non_finite_loss", "encoder fine-tune step " + std::to_string(step));
            m = b1 * m + (1 - b1) * g;
            v = b2 * v + (1 - b2) * g.cwiseAbs2();
            const double c1 = 1 - std::pow(b1, step + 1), c2 = 1 - std::pow(b2, step + 1);
            e.head.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + 1e-8);
        }
    }

    double l1 = 0;
    for (int i : held)
        l1 += mean_abs_diff(generate(gen, refine_code(gen, e.basis, from_flat(e.head * feat[i]), corpus.frames[i].image,
                                                      e.refine_iterations)),
                            corpus.frames[i].image);
    l1 /= static_cast<double>(held.size());
    if (report) *report = {l1, static_cast<int>(train.size()), static_cast<int>(held.size())};
    if (!(l1 < cfg.threshold))
        throw Error("training_failure", "encoder held-out reconstruction L1 " + std::to_string(l1) + " >= " +
                                            std::to_string(cfg.threshold));
    return e;
}

Checkpoint save_encoder(const Encoder& e) {
    Checkpoint ck("encoder", 1);
    ck.put("mu", e.mu);
    ck.put("sd", e.sd);
    ck.put("head", e.head);
    ck.put("basis", e.basis);
    ck.put_int("refine_iterations", e.refine_iterations);
    return ck;
}

Encoder load_encoder(const Checkpoint& ck) {
    ck.expect_kind("encoder");
    Encoder e{ck.vec("mu"), ck.vec("sd"), ck.mat("head"), ck.mat("basis"), static_cast<int>(ck.integer("refine_iterations"))};
    if (e.head.rows() != kWPlusDim || e.head.cols() != kEncFeatures || e.mu.size() != kFitDim || e.sd.size() != kFitDim ||
        e.basis.rows() != kWPlusDim)
        throw Error("checkpoint_corrupt", "encoder shapes do not match");
    return e;
}

double reconstruction_loss(const ToyGenerator& gen, const FrozenEmbedder& emb, const Image& img, const LatentCode& w,
                           const TuneConfig& cfg) {
    return recon_terms(emb, generate(gen, w), img, cfg.w_pix, cfg.w_per, 0.0, nullptr);
}

ToyGenerator pivotal_tune(const ToyGenerator& gen, const FrozenEmbedder& emb, const Image& img,
                          const LatentCode& w_inv, const TuneConfig& cfg) {
    ToyGenerator g = gen;
    Vec p = g.app.pack();
    Vec m = Vec::Zero(p.size()), v = Vec::Zero(p.size());
    const double b1 = 0.9, b2 = 0.999;
    for (int step = 0; step < cfg.steps; ++step) {
        RenderTrace tr;
        const Image out = generate(g, w_inv, &tr);
        Image dimg;
        const double loss = recon_terms(emb, out, img, cfg.w_pix, cfg.w_per, 0.0, &dimg);
        Vec dapp;
        generate_vjp(g, tr, dimg, &dapp);
        if (!std::isfinite(loss) || !dapp.allFinite())
            throw Error("non_finite_loss", "pivotal tuning step " + std::to_string(step));
        m = b1 * m + (1 - b1) * dapp;
        v = b2 * v + (1 - b2) * dapp.cwiseAbs2();
        const double c1 = 1 - std::pow(b1, step + 1), c2 = 1 - std::pow(b2, step + 1);
        p.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + 1e-8);
        g.app.unpack(p);
    }
    return g;
}

std::vector<EvalPair> corpus_pairs(const Encoder& enc, const ToyGenerator& gen, const PoseRegressor& reg,
                                   const RealAnalogCorpus& c, EvalMode mode, int n, std::uint64_t seed) {
    const CorpusSplit split = split_corpus(c);
    std::map<int, std::vector<int>> videos;
    for (int i : split.held) videos[c.frames[i].video].push_back(i);
    std::vector<std::vector<int>> groups;
    for (auto& [v, idx] : videos) groups.push_back(idx);
    Rng rng(seed ^ 0xe7a1ULL);
    std::vector<EvalPair> pairs;
    std::map<int, LatentCode> codes;
    auto code = [&](int i) -> const LatentCode& {
        auto it = codes.find(i);
        if (it == codes.end()) it = codes.emplace(i, invert(enc, gen, reg, c.frames[i].image)).first;
        return it->second;
    };
    for (int k = 0; k < n; ++k) {
        int s = 0, t = 0;
        if (mode == EvalMode::SELF) {
            std::vector<int> usable;
            for (int g = 0; g < static_cast<int>(groups.size()); ++g)
                if (groups[g].size() >= 2) usable.push_back(g);
            if (usable.empty()) throw Error("invalid_argument", "self mode needs a held-out video with two frames");
            const auto& g = groups[usable[rng.index(static_cast<int>(usable.size()))]];
            const int a = rng.index(static_cast<int>(g.size()));
            int b = rng.index(static_cast<int>(g.size()) - 1);
            if (b >= a) ++b;
            s = g[a];
            t = g[b];
        } else {
            if (groups.size() < 2) throw Error("invalid_argument", "cross mode needs two held-out videos");
            const int a = rng.index(static_cast<int>(groups.size()));
            int b = rng.index(static_cast<int>(groups.size()) - 1);
            if (b >= a) ++b;
            s = groups[a][rng.index(static_cast<int>(groups[a].size()))];
            t = groups[b][rng.index(static_cast<int>(groups[b].size()))];
        }
        pairs.push_back({c.frames[s].id, c.frames[t].id, code(s), c.frames[s].image, c.frames[t].image, nullptr});
    }
    return pairs;
}

}  // namespace fr
