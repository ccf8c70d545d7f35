#include "fixture.hpp"

#include <filesystem>

using namespace fr;

using test::small_encoder;

TEST_SUITE("inversion") {

TEST_CASE("corpus is deterministic with hidden per-video identity") {
    const auto& w = test::world();
    const RealAnalogCorpus a = build_real_corpus(w.gen, 9, 4), b = build_real_corpus(w.gen, 9, 4);
    REQUIRE(a.frames.size() == 9);
    for (int i = 0; i < 9; ++i) {
        CHECK(a.frames[i].image == b.frames[i].image);
        CHECK(a.frames[i].truth == b.frames[i].truth);
        CHECK(a.frames[i].video == i / 4);
    }
    CHECK(a.frames[0].id == "v000_f00");
    CHECK(a.frames[5].id == "v001_f01");
    // identity and nuisance rows agree inside a video, pose rows differ
    const Vec q0 = semantic_params(w.gen, a.frames[0].truth), q1 = semantic_params(w.gen, a.frames[1].truth);
    CHECK((q0.tail(kQDim - kQIdentityOffset) - q1.tail(kQDim - kQIdentityOffset)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((q0.head(kPoseDim) - q1.head(kPoseDim)).cwiseAbs().maxCoeff() > 1e-3);
    CHECK(build_real_corpus(w.gen, 1, 4).frames.size() == 1);
    CHECK_THROWS_AS(build_real_corpus(w.gen, 0, 4), Error);
}

TEST_CASE("corpus noise has the configured spread") {
    const auto& w = test::world();
    const RealAnalogCorpus c = build_real_corpus(w.gen, 8, 5);
    double sum = 0, sum2 = 0;
    long n = 0;
    for (const auto& f : c.frames) {
        const Image clean = render_with_bg_shift(w.gen, f.truth, f.bg_grad_shift);
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < kImageSize; ++y)
                for (int x = 0; x < kImageSize; ++x) {
                    const double v = clean.at(ch, y, x);
                    if (v < 0.06 || v > 0.94) continue;  // skip pixels the clamp could touch
                    const double r = f.image.at(ch, y, x) - v;
                    sum += r;
                    sum2 += r * r;
                    ++n;
                }
    }
    REQUIRE(n > 10000);
    const double mean = sum / n, sd = std::sqrt(sum2 / n - mean * mean);
    // noise plus 8-bit rounding: sqrt(0.01^2 + 1/(12 * 255^2))
    CHECK(sd == doctest::Approx(std::sqrt(1e-4 + 1.0 / (12.0 * 255 * 255))).epsilon(0.1));
    CHECK(std::abs(mean) < 1e-3);
}

TEST_CASE("corpus directory round trip") {
    const auto& w = test::world();
    const RealAnalogCorpus c = build_real_corpus(w.gen, 6, 6);
    const auto dir = std::filesystem::temp_directory_path() / "fr_corpus_test";
    std::filesystem::remove_all(dir);
    save_corpus(c, dir.string());
    CHECK(std::filesystem::exists(dir / "index.json"));
    const RealAnalogCorpus blind = load_corpus(dir.string(), false), full = load_corpus(dir.string(), true);
    REQUIRE(blind.frames.size() == 6);
    for (int i = 0; i < 6; ++i) {
        CHECK(blind.frames[i].id == c.frames[i].id);
        CHECK(blind.frames[i].video == c.frames[i].video);
        CHECK(blind.frames[i].image == c.frames[i].image);
        CHECK(full.frames[i].truth == c.frames[i].truth);
        CHECK(full.frames[i].bg_grad_shift == c.frames[i].bg_grad_shift);
    }
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_corpus(dir.string(), false), Error);
}

TEST_CASE("split holds out trailing videos") {
    const auto& w = test::world();
    const CorpusSplit s = split_corpus(build_real_corpus(w.gen, 40, 7));  // 10 videos
    CHECK(s.train.size() == 32);
    CHECK(s.held.size() == 8);
    CHECK(s.held.front() == 32);
    const CorpusSplit two = split_corpus(build_real_corpus(w.gen, 8, 7));
    CHECK(two.held.size() == 4);
    CHECK(two.train.size() == 4);
    const CorpusSplit one = split_corpus(build_real_corpus(w.gen, 3, 7));
    CHECK(one.train.size() == 3);
    CHECK(one.held == one.train);
    CHECK(split_corpus(RealAnalogCorpus{}).train.empty());
}

TEST_CASE("encoder reconstructs held-out frames") {
    const auto& w = test::world();
    EncoderConfig cfg;
    cfg.synthetic_samples = 1000;
    cfg.threshold = 0.05;
    EncoderReport rep;
    const RealAnalogCorpus c = build_real_corpus(w.gen, 20, 3);
    const Encoder e = train_encoder(w.gen, w.reg, w.emb, c, cfg, &rep);
    CHECK(rep.heldout_l1 < 0.03);
    CHECK(rep.heldout_frames > 0);
    CHECK(save_encoder(e).serialize() == save_encoder(small_encoder()).serialize());

    cfg.threshold = 1e-9;
    try {
        train_encoder(w.gen, w.reg, w.emb, c, cfg);
        FAIL("expected training_failure");
    } catch (const Error& err) {
        CHECK(err.code() == "training_failure");
    }
}

TEST_CASE("inverting a clean render lands near its code") {
    const auto& w = test::world();
    const Encoder& e = small_encoder();
    Rng rng(8);
    const Vec range = w.reg.range_hi - w.reg.range_lo;
    for (int t = 0; t < 5; ++t) {
        const LatentCode code = sample_wplus(w.gen, rng);
        const Image img = generate(w.gen, code);
        const LatentCode inv = invert(e, w.gen, w.reg, img);
        CHECK(inv.kind == LatentKind::WPLUS);
        CHECK(inv == invert(e, w.gen, w.reg, img));
        CHECK(mean_abs_diff(generate(w.gen, inv), img) < 0.05);
        const Vec err = estimate_pose(w.reg, generate(w.gen, inv)).pose.full() - estimate_pose(w.reg, img).pose.full();
        CHECK((err.array() / range.array()).abs().maxCoeff() < 0.05);
    }
}

TEST_CASE("encoder checkpoint round trip") {
    const auto& w = test::world();
    const Encoder& e = small_encoder();
    const Encoder r = load_encoder(Checkpoint::deserialize(save_encoder(e).serialize()));
    Rng rng(9);
    const Image img = generate(w.gen, sample_wplus(w.gen, rng));
    CHECK(invert(r, w.gen, w.reg, img) == invert(e, w.gen, w.reg, img));
    CHECK_THROWS_AS(load_encoder(save_stats(w.stats)), Error);
}

TEST_CASE("pool building groups frames by video") {
    const auto& w = test::world();
    const RealAnalogCorpus c = build_real_corpus(w.gen, 10, 10);
    const TrainingPools p = build_pools(small_encoder(), w.gen, w.reg, c, {0, 1, 4, 5, 6, 9});
    CHECK(p.frames.size() == 6);
    REQUIRE(p.videos.size() == 3);
    CHECK(p.videos[0].size() == 2);
    CHECK(p.videos[1].size() == 3);
    CHECK(p.videos[2].size() == 1);
    for (const auto& f : p.frames) CHECK(f.w_inv.kind == LatentKind::WPLUS);
}

TEST_CASE("pivotal tuning") {
    const auto& w = test::world();
    const RealAnalogCorpus c = build_real_corpus(w.gen, 1, 11);
    const Image& img = c.frames[0].image;
    const LatentCode inv = invert(small_encoder(), w.gen, w.reg, img);
    const std::string before = save_generator(w.gen).serialize();

    TuneConfig cfg;
    cfg.steps = 0;
    CHECK(save_generator(pivotal_tune(w.gen, w.emb, img, inv, cfg)).serialize() == before);

    cfg.steps = 60;
    const ToyGenerator tuned = pivotal_tune(w.gen, w.emb, img, inv, cfg);
    CHECK(reconstruction_loss(tuned, w.emb, img, inv, cfg) < reconstruction_loss(w.gen, w.emb, img, inv, cfg));
    CHECK(save_generator(w.gen).serialize() == before);
    CHECK(tuned.b == w.gen.b);
    CHECK(tuned.c == w.gen.c);
    CHECK(tuned.app.pack() != w.gen.app.pack());

    // a yaw edit toward frontal still moves the estimated yaw by a comparable amount
    const Mat a = oracle_directions(w.gen);
    const double yaw0 = estimate_pose(w.reg, img).pose.theta[0];
    const LatentCode edited = apply_shift(inv, delta_w(a, single_attribute_delta(0, yaw0 > 0 ? -0.25 : 0.25)));
    auto yaw_shift = [&](const ToyGenerator& g) {
        return estimate_pose(w.reg, generate(g, edited)).pose.theta[0] - estimate_pose(w.reg, generate(g, inv)).pose.theta[0];
    };
    const double base = yaw_shift(w.gen), after = yaw_shift(tuned);
    INFO("yaw shift untuned " << base << ", tuned " << after);
    CHECK(std::abs(base) > 1.0);
    CHECK(after / base > 1 / 1.5);
    CHECK(after / base < 1.5);
}

}
