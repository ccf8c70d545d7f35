#include "fixture.hpp"

#include <cstring>
#include <filesystem>

using namespace fr;

TEST_SUITE("core") {

TEST_CASE("rng streams are reproducible") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const double x = a.normal();
        CHECK(x == b.normal());
        (void)c;
    }
    CHECK(Rng(42).uniform() != Rng(43).uniform());
    Rng r(1);
    for (int i = 0; i < 1000; ++i) {
        const int k = r.index(7);
        CHECK(k >= 0);
        CHECK(k < 7);
    }
}

TEST_CASE("random_orthogonal is orthogonal") {
    Rng rng(3);
    const Mat q = random_orthogonal(20, rng);
    CHECK((q.transpose() * q - Mat::Identity(20, 20)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sha256 of a known string") {
    CHECK(sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoint round trip keeps every entry") {
    Checkpoint ck("thing", 3);
    Rng rng(1);
    const Mat m = rng.normal_mat(4, 7);
    ck.put("m", m);
    ck.put("v", Vec(rng.normal_vec(5)));
    ck.put_int("n", -12345678901LL);
    ck.put_str("s", std::string("with\0nul", 8));
    const Checkpoint r = Checkpoint::deserialize(ck.serialize());
    CHECK(r.kind() == "thing");
    CHECK(r.integer("version") == 3);
    CHECK(r.mat("m") == m);
    CHECK(r.vec("v") == ck.vec("v"));
    CHECK(r.integer("n") == -12345678901LL);
    CHECK(r.str("s") == std::string("with\0nul", 8));
    CHECK(r.serialize() == ck.serialize());
}

TEST_CASE("checkpoint byte layout") {
    Checkpoint ck;
    ck.put("a", Mat(Mat::Constant(1, 2, 1.5)));
    const std::string b = ck.serialize();
    CHECK(b.substr(0, 8) == "FRCKPT01");
    std::uint32_t version = 0, count = 0, name_len = 0;
    std::memcpy(&version, b.data() + 8, 4);
    std::memcpy(&count, b.data() + 12, 4);
    std::memcpy(&name_len, b.data() + 16, 4);
    CHECK(version == 1);
    CHECK(count == 1);
    CHECK(name_len == 1);
    CHECK(b[20] == 'a');
    CHECK(b[21] == 0);  // matrix
    std::uint64_t rows = 0, cols = 0;
    std::memcpy(&rows, b.data() + 22, 8);
    std::memcpy(&cols, b.data() + 30, 8);
    CHECK(rows == 1);
    CHECK(cols == 2);
    double v = 0;
    std::memcpy(&v, b.data() + 38, 8);
    CHECK(v == 1.5);
    CHECK(b.size() == 38 + 16);
}

TEST_CASE("checkpoint errors carry codes") {
    Checkpoint ck("thing", 1);
    ck.put("m", Mat(Mat::Identity(3, 3)));
    const std::string b = ck.serialize();
    auto code_of = [](auto&& f) {
        try {
            f();
        } catch (const Error& e) {
            return e.code();
        }
        return std::string("none");
    };
    CHECK(code_of([&] { Checkpoint::deserialize(b.substr(0, b.size() - 3)); }) == "checkpoint_corrupt");
    CHECK(code_of([&] { Checkpoint::deserialize("XXXXXXXX" + b.substr(8)); }) == "checkpoint_corrupt");
    CHECK(code_of([&] { Checkpoint::deserialize(b + "x"); }) == "checkpoint_corrupt");
    CHECK(code_of([&] { ck.expect_kind("other"); }) == "checkpoint_kind");
    CHECK(code_of([&] { ck.mat("missing"); }) == "checkpoint_field");
    CHECK(code_of([&] { ck.integer("m"); }) == "checkpoint_field");
    CHECK(code_of([&] { Checkpoint::load("/nonexistent/x.ckpt"); }) == "missing_checkpoint");
}

TEST_CASE("checkpoint file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "fr_core_test.ckpt";
    Checkpoint ck("thing", 1);
    ck.put_int("x", 7);
    ck.save(path.string());
    CHECK(Checkpoint::load(path.string()).integer("x") == 7);
    std::filesystem::remove(path);
}

TEST_CASE("png round trip equals 8-bit quantization") {
    Rng rng(5);
    const Image im = test::random_image(rng, 0.3);
    const Image back = decode_png(encode_png(im));
    CHECK(back == quantize8(im));
    CHECK(quantize8(back) == back);
    CHECK(mean_abs_diff(back, im) < 0.5 / 255 + 1e-12);
    CHECK(image_hash(im) == image_hash(back));
    CHECK(image_hash(im).size() == 64);
}

TEST_CASE("png decoding rejects garbage") {
    try {
        decode_png("definitely not a png");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == "bad_image");
    }
}

TEST_CASE("squash and unsquash invert each other") {
    Rng rng(6);
    const RenderConfig cfg;
    Image pre;
    for (auto& c : pre.ch) c = rng.normal_mat(kImageSize, kImageSize, 0.2).array() + 0.5;
    const Image back = unsquash(squash(pre, cfg), cfg);
    for (int c = 0; c < 3; ++c) CHECK((back.ch[c] - pre.ch[c]).cwiseAbs().maxCoeff() < 1e-9);
    const Image extreme = unsquash(Image::constant(0.0), cfg);
    CHECK(extreme.all_finite());
}

TEST_CASE("scene_vjp matches central differences") {
    const ToyGenerator g = build_generator(2);
    Rng rng(7);
    GenParams gp;
    gp.pose.theta = rng.normal_vec(3, 10);
    gp.pose.expression = rng.normal_vec(kExpressionDim, 0.1);
    gp.nuisance = rng.normal_vec(kNuisanceDim, 0.3);
    const Scene s = scene_for(g, gp);
    const Image w = test::weights_image(rng);
    SceneCache cache;
    render_pre(s, g.render, &cache);
    const SceneGrad sg = scene_vjp(s, cache, w);
    auto f = [&](const Scene& x) { return test::dot(render_pre(x, g.render), w); };

    Scene dir = s;
    dir.uv = rng.normal_mat(kLandmarks, 2, 1.0);
    dir.roll_deg = rng.normal();
    dir.tint = rng.normal_vec(3);
    dir.bg = rng.normal_vec(3);
    dir.bg_grad = rng.normal_mat(3, 2);
    dir.palette = rng.normal_mat(kLandmarks, 3);
    auto moved = [&](double h) {
        Scene x = s;
        x.uv += h * dir.uv;
        x.roll_deg += h * dir.roll_deg;
        x.tint += h * dir.tint;
        x.bg += h * dir.bg;
        x.bg_grad += h * dir.bg_grad;
        x.palette += h * dir.palette;
        return f(x);
    };
    const double fd = test::central(moved, 1e-5);
    const double an = sg.duv.cwiseProduct(dir.uv).sum() + sg.droll_deg * dir.roll_deg + sg.dtint.dot(dir.tint) +
                      sg.dbg.dot(dir.bg) + sg.dbg_grad.cwiseProduct(dir.bg_grad).sum() +
                      sg.dpalette.cwiseProduct(dir.palette).sum();
    CHECK(std::abs(fd - an) / std::abs(an) < 1e-6);
}

}
