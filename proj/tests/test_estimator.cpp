#include "fixture.hpp"

using namespace fr;

namespace {

// Default training configuration; the test world uses a smaller, looser regressor.
const PoseRegressor& default_regressor() {
    static const PoseRegressor r = train_regressor(test::world().gen, RegressorTrainConfig{});
    return r;
}

}  // namespace

TEST_SUITE("estimator") {

TEST_CASE("default regressor: 500 held-out renders within 2% of range") {
    const auto& w = test::world();
    const RegressorReport rep = evaluate_regressor(default_regressor(), w.gen, 500, 77);
    INFO("per parameter: " << rep.rel_rmse.transpose());
    CHECK(rep.max_rel_rmse < 0.02);
}

TEST_CASE("estimate of a render recovers the calibrated parameters") {
    const auto& w = test::world();
    const PoseRegressor& reg = default_regressor();
    const Vec range = reg.range_hi - reg.range_lo;
    Rng rng(1);
    std::vector<double> worst;
    for (int t = 0; t < 50; ++t) {
        RenderTrace tr;
        const Image img = generate(w.gen, sample_wplus(w.gen, rng), &tr);
        const Vec err = estimate_pose(reg, img).pose.full() - tr.params.pose.full();
        worst.push_back((err.array() / range.array()).abs().maxCoeff());
    }
    // per-render errors scatter around the RMSE; the median render stays inside the bound
    std::sort(worst.begin(), worst.end());
    CHECK(worst[25] < 0.02);
}

TEST_CASE("identical images give identical estimates; degenerate inputs stay finite") {
    const auto& w = test::world();
    Rng rng(2);
    const Image img = generate(w.gen, sample_wplus(w.gen, rng));
    const Image copy = img;
    CHECK(estimate_pose(w.reg, img).pose.full() == estimate_pose(w.reg, copy).pose.full());
    CHECK(estimate_pose(w.reg, Image::constant(0.0)).pose.full().allFinite());
    CHECK(estimate_pose(w.reg, Image::constant(1.0)).pose.full().allFinite());
    CHECK(estimate_pose(w.reg, test::random_image(rng)).pose.full().allFinite());
}

TEST_CASE("training is deterministic and fails loudly") {
    const auto& w = test::world();
    RegressorTrainConfig cfg;
    cfg.n_samples = 150;
    cfg.n_heldout = 10;
    cfg.tolerance = 10.0;
    const std::string a = save_regressor(train_regressor(w.gen, cfg)).serialize();
    const std::string b = save_regressor(train_regressor(w.gen, cfg)).serialize();
    CHECK(a == b);
    cfg.tolerance = 1e-30;
    try {
        train_regressor(w.gen, cfg);
        FAIL("expected training_failure");
    } catch (const Error& e) {
        CHECK(e.code() == "training_failure");
        CHECK(std::string(e.what()).find("RMSE") != std::string::npos);
    }
}

TEST_CASE("estimate_vjp matches central differences") {
    const auto& w = test::world();
    Rng rng(3);
    for (int t = 0; t < 3; ++t) {
        const Image img = generate(w.gen, sample_wplus(w.gen, rng));
        EstimateTrace tr;
        estimate_pose(w.reg, img, &tr);
        const Vec g = rng.normal_vec(kParamDim);
        const Image grad = estimate_vjp(w.reg, tr, g);
        const Image dir = test::weights_image(rng);
        const double fd = test::central(
            [&](double h) { return estimate_pose(w.reg, test::axpy(img, h, dir)).pose.full().dot(g); }, 1e-5);
        const double an = test::dot(grad, dir);
        CHECK(std::abs(fd - an) / std::abs(an) < 1e-3);
    }
}

TEST_CASE("regressor checkpoint round trip") {
    const auto& w = test::world();
    const PoseRegressor r = load_regressor(Checkpoint::deserialize(save_regressor(w.reg).serialize()));
    Rng rng(4);
    const Image img = generate(w.gen, sample_wplus(w.gen, rng));
    CHECK(estimate_pose(r, img).pose.full() == estimate_pose(w.reg, img).pose.full());
}

}

TEST_SUITE("embedder") {

TEST_CASE("identity embedding is unit norm and deterministic") {
    const FrozenEmbedder e = build_embedder(1);
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        const Image img = test::random_image(rng, 0.3);
        const Vec v = identity_embed(e, img);
        CHECK(v.size() == kEmbedDim);
        CHECK(std::abs(v.norm() - 1.0) < 1e-6);
        CHECK(cosine_similarity(v, identity_embed(e, img)) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("same identity is closer than different identity on average") {
    const auto& w = test::world();
    Rng rng(6);
    double same = 0, diff = 0;
    const int n = 200;
    for (int t = 0; t < n; ++t) {
        const LatentCode a = sample_wplus(w.gen, rng), b = sample_wplus(w.gen, rng);
        // a2: identity and nuisance of a, pose and expression of b
        const Vec dq = semantic_params(w.gen, b) - semantic_params(w.gen, a);
        const Vec shift = w.gen.b.topRows(kPoseDim).transpose() * dq.head(kPoseDim);
        const LatentCode a2 = LatentCode::wplus_from_flat(a.flat() + shift);
        const Vec ea = identity_embed(w.emb, generate(w.gen, a));
        same += ea.dot(identity_embed(w.emb, generate(w.gen, a2))) / n;
        diff += ea.dot(identity_embed(w.emb, generate(w.gen, b))) / n;
    }
    CHECK(same > diff);
}

TEST_CASE("perceptual distance properties") {
    const FrozenEmbedder e = build_embedder(2);
    Rng rng(7);
    const Image a = test::random_image(rng), b = test::random_image(rng);
    const auto fa = perceptual_features(e, a), fb = perceptual_features(e, b);
    CHECK(perceptual_distance(fa, fa) == 0.0);
    CHECK(perceptual_distance(fa, fb) == perceptual_distance(fb, fa));
    CHECK(fa[0].h == 64);
    CHECK(fa[1].h == 32);
    CHECK(fa[2].h == 16);
    double oracle = 0;
    for (int s = 0; s < 3; ++s) {
        double sum = 0;
        for (int i = 0; i < fa[s].data.rows(); ++i)
            for (int j = 0; j < fa[s].data.cols(); ++j) {
                const double d = fa[s].data(i, j) - fb[s].data(i, j);
                sum += d * d;
            }
        oracle += sum / static_cast<double>(fa[s].data.size());
    }
    CHECK(perceptual_distance(fa, fb) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("embedder vjps match central differences") {
    const FrozenEmbedder e = build_embedder(3);
    Rng rng(8);
    const Image img = test::random_image(rng);
    const Image dir = test::weights_image(rng);

    IdentityTrace it;
    identity_embed(e, img, &it);
    const Vec g = rng.normal_vec(kEmbedDim);
    const double fd_id = test::central([&](double h) { return identity_embed(e, test::axpy(img, h, dir)).dot(g); }, 1e-5);
    const double an_id = test::dot(identity_embed_vjp(e, it, g), dir);
    CHECK(std::abs(fd_id - an_id) / std::abs(an_id) < 1e-6);

    PerceptualTrace pt;
    const auto f = perceptual_features(e, img, &pt);
    std::array<Mat, 3> df;
    for (int s = 0; s < 3; ++s) df[s] = rng.normal_mat(f[s].data.rows(), f[s].data.cols());
    auto score = [&](const Image& x) {
        const auto fx = perceptual_features(e, x);
        double s = 0;
        for (int k = 0; k < 3; ++k) s += fx[k].data.cwiseProduct(df[k]).sum();
        return s;
    };
    const double fd_p = test::central([&](double h) { return score(test::axpy(img, h, dir)); }, 1e-5);
    const double an_p = test::dot(perceptual_vjp(e, pt, df), dir);
    CHECK(std::abs(fd_p - an_p) / std::abs(an_p) < 1e-6);
}

TEST_CASE("embedder checkpoint round trip and checksum") {
    const FrozenEmbedder e = build_embedder(4);
    const FrozenEmbedder r = load_embedder(Checkpoint::deserialize(save_embedder(e).serialize()));
    CHECK(embedder_checksum(r) == embedder_checksum(e));
    CHECK(embedder_checksum(build_embedder(5)) != embedder_checksum(e));
    Rng rng(9);
    const Image img = test::random_image(rng);
    CHECK(identity_embed(r, img) == identity_embed(e, img));
}

}
