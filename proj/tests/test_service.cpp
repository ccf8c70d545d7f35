#include "fixture.hpp"

#include "fr/server.hpp"
#include "fr/service.hpp"

#include <cstdlib>
#include <thread>

using namespace fr;
namespace fs = std::filesystem;

namespace {

std::string code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return "none";
}

const Models& models() {
    static const Models m = [] {
        const auto& w = test::world();
        return Models{w.gen, w.reg, w.emb, test::small_encoder(), test::oracle_in_rescaled_units(w.gen, w.stats)};
    }();
    return m;
}

std::string source_png(std::uint64_t seed) {
    const auto& w = test::world();
    Rng rng(seed);
    return encode_png(generate(w.gen, sample_wplus(w.gen, rng)));
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_SUITE("service") {

TEST_CASE("workspace artifacts") {
    const Workspace ws(temp_dir("fr_ws_test"));
    CHECK_FALSE(ws.has_artifact("directions/x"));
    CHECK(code_of([&] { ws.load("directions/x"); }) == "missing_artifact");
    try {
        ws.require("encoder");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("encoder") != std::string::npos);
    }
    Checkpoint ck("thing", 1);
    ck.put_int("x", 5);
    const std::string h = ws.save("directions/x", ck);
    CHECK(ws.has_artifact("directions/x"));
    CHECK(ws.artifact_path("directions/x") == ws.root() / "directions" / "x.ckpt");
    CHECK(ws.load("directions/x").integer("x") == 5);
    CHECK(ws.artifact_hash("directions/x") == h);
    CHECK(h == sha256_hex(ck.serialize()));
    fs::remove_all(ws.root());
}

TEST_CASE("workspace root resolution") {
    ::setenv("FR_WORKSPACE", "/from/env", 1);
    CHECK(workspace_root("/from/flag") == fs::path("/from/flag"));
    CHECK(workspace_root("") == fs::path("/from/env"));
    ::unsetenv("FR_WORKSPACE");
    CHECK(workspace_root("") == fs::current_path());
}

TEST_CASE("load_models names the first missing artifact") {
    const Workspace ws(temp_dir("fr_ws_models"));
    try {
        load_models(ws, "mixed");
        FAIL("expected missing_artifact");
    } catch (const Error& e) {
        CHECK(e.code() == "missing_artifact");
        CHECK(std::string(e.what()).find("generator") != std::string::npos);
    }
    fs::remove_all(ws.root());
}

TEST_CASE("image cache is a bounded LRU") {
    ImageCache c(2);
    Rng rng(1);
    const Image a = test::random_image(rng), b = test::random_image(rng), d = test::random_image(rng);
    const std::string ha = c.put(a), hb = c.put(b);
    CHECK(ha == sha256_hex(encode_png(a)));
    CHECK(c.put(a) == ha);  // refresh, b is now oldest
    c.put(d);
    CHECK(c.size() == 2);
    CHECK(c.get(ha).has_value());
    CHECK_FALSE(c.get(hb).has_value());
    CHECK(decode_png(*c.get(ha)) == quantize8(a));
}

TEST_CASE("delta helpers") {
    PoseStats s;
    s.low = Vec::Constant(kPoseDim, -10);
    s.high = Vec::Constant(kPoseDim, 30);
    Vec raw = Vec::Zero(kPoseDim);
    raw[0] = 20;  // half the range
    const Vec d = delta_from_raw(s, raw);
    CHECK(d[0] == doctest::Approx(s.a));
    CHECK(d.tail(kPoseDim - 1).isZero(0));
    CHECK_THROWS_AS(delta_from_raw(s, Vec::Zero(3)), ContractViolation);

    Vec cur = Vec::Constant(kPoseDim, 10);
    const Vec t = delta_to_targets(s, cur, {{1, 30.0}, {4, -10.0}});
    CHECK(t[1] == doctest::Approx(s.a));
    CHECK(t[4] == doctest::Approx(-s.a));
    CHECK(t[0] == 0.0);
    CHECK(delta_to_targets(s, cur, {}).isZero(0));
    CHECK_THROWS_AS(delta_to_targets(s, cur, {{15, 1.0}}), ContractViolation);
}

TEST_CASE("error mapping") {
    CHECK(http_status("not_found") == 404);
    for (const char* c : {"invalid_argument", "invalid_field", "malformed_json", "bad_image"}) CHECK(http_status(c) == 400);
    CHECK(http_status("non_finite_loss") == 500);
    const Json j = error_json("not_found", "gone");
    CHECK(j["error"]["code"] == "not_found");
    CHECK(j["error"]["message"] == "gone");
}

TEST_CASE("pose_json lists every attribute") {
    PoseParams p;
    p.theta[0] = 12;
    const Json j = pose_json(p);
    CHECK(j["yaw"] == 12.0);
    CHECK(j.contains("exp11"));
    CHECK(j["identity"].size() == kIdentityDim);
}

TEST_CASE("session edits") {
    Service svc(models());
    CHECK(svc.attributes()["attributes"].size() == kPoseDim);
    const Json s = svc.create_session(source_png(2));
    const std::string id = s["session"];
    CHECK(s["tuned"] == false);
    CHECK(s["image_url"] == "/images/" + s["image"].get<std::string>());
    CHECK(svc.image_png(s["image"]).has_value());
    CHECK(svc.image_png(s["source_image"]).has_value());

    CHECK(svc.edit(id, {{"delta", {{"yaw", 0.0}}}})["image"] == s["image"]);
    const double half = 0.5 * (models().d.stats.high[0] - models().d.stats.low[0]);
    const Json up = svc.edit(id, {{"delta", {{"yaw", half}}}});
    CHECK(up["delta"]["yaw"].get<double>() == doctest::Approx(models().d.stats.a));
    CHECK(up["image"] != s["image"]);
    const Json back = svc.edit(id, {{"delta", {{"yaw", -half}}}});
    CHECK(std::abs(back["delta"]["yaw"].get<double>()) < 1e-12);
    CHECK(back["image"] == s["image"]);

    const Json front = svc.edit(id, {{"target", {{"yaw", 0.0}}}});
    CHECK(std::abs(front["pose"]["yaw"].get<double>()) < 2.0);
    CHECK(svc.edit(id, {{"target", {{"yaw", 0.0}}}})["image"] == front["image"]);  // absolute, no drift

    CHECK(code_of([&] { svc.edit(id, Json::array()); }) == "malformed_json");
    CHECK(code_of([&] { svc.edit(id, {{"deltas", Json::object()}}); }) == "invalid_field");
    CHECK(code_of([&] { svc.edit(id, {{"delta", {{"smile", 1.0}}}}); }) == "invalid_field");
    CHECK(code_of([&] { svc.edit(id, {{"delta", {{"yaw", "x"}}}}); }) == "invalid_field");
    CHECK(code_of([&] { svc.edit("nope", {{"delta", Json::object()}}); }) == "not_found");
    CHECK(code_of([&] { svc.create_session("not a png"); }) == "bad_image");
}

TEST_CASE("reenact sets the delta from the target estimate") {
    Service svc(models());
    const std::string png = source_png(3);
    const Json s = svc.create_session(png);
    const Json same = svc.reenact(s["session"], png);
    CHECK(same["image"] == s["image"]);
    const Json other = svc.reenact(s["session"], source_png(4));
    CHECK(std::abs(other["pose"]["yaw"].get<double>() - other["target_pose"]["yaw"].get<double>()) < 3.0);
}

TEST_CASE("sessions are isolated, tuned copies are capped, idle sessions expire") {
    ServiceConfig cfg;
    cfg.max_tuned = 2;
    cfg.tune.steps = 2;
    Service svc(models(), cfg);
    std::vector<std::string> ids;
    for (int i = 0; i < 3; ++i) ids.push_back(svc.create_session(source_png(10 + i))["session"]);
    CHECK(svc.session_count() == 3);
    const Json before = svc.edit(ids[1], Json::object());
    svc.edit(ids[0], {{"delta", {{"pitch", 5.0}}}});
    CHECK(svc.edit(ids[1], Json::object())["image"] == before["image"]);

    for (const auto& id : ids) CHECK(svc.tune(id)["tuned"] == true);
    CHECK(svc.tuned_count() == 2);
    CHECK(svc.edit(ids[0], Json::object())["tuned"] == false);  // least recently tuned was dropped

    svc.delete_session(ids[2]);
    CHECK(svc.session_count() == 2);
    CHECK(code_of([&] { svc.delete_session(ids[2]); }) == "not_found");
    svc.expire(std::chrono::steady_clock::now() + std::chrono::hours(1));
    CHECK(svc.session_count() == 0);
}

}

TEST_SUITE("http") {

TEST_CASE("routes over a live server") {
    Service svc(models());
    httplib::Server srv;
    mount_routes(srv, svc);
    const int port = srv.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread th([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(60, 0);

    auto attrs = cli.Get("/attributes");
    REQUIRE(attrs);
    CHECK(attrs->status == 200);
    CHECK(Json::parse(attrs->body)["attributes"].size() == kPoseDim);

    auto created = cli.Post("/sessions", source_png(20), "image/png");
    REQUIRE(created);
    CHECK(created->status == 201);
    const Json s = Json::parse(created->body);
    const std::string id = s["session"];

    httplib::MultipartFormDataItems form{{"image", source_png(21), "face.png", "image/png"}};
    auto multi = cli.Post("/sessions", form);
    REQUIRE(multi);
    CHECK(multi->status == 201);

    auto edited = cli.Post("/sessions/" + id + "/edit", R"({"delta": {"roll": 4}})", "application/json");
    REQUIRE(edited);
    CHECK(edited->status == 200);
    CHECK(Json::parse(edited->body)["delta"]["roll"].get<double>() > 0);

    auto bad = cli.Post("/sessions/" + id + "/edit", "{not json", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(Json::parse(bad->body)["error"]["code"] == "malformed_json");

    auto field = cli.Post("/sessions/" + id + "/edit", R"({"delta": {"smile": 1}})", "application/json");
    REQUIRE(field);
    CHECK(field->status == 400);
    CHECK(Json::parse(field->body)["error"]["code"] == "invalid_field");

    auto missing = cli.Post("/sessions/zzz/edit", "{}", "application/json");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    CHECK(Json::parse(missing->body)["error"]["code"] == "not_found");

    auto noroute = cli.Get("/nowhere");
    REQUIRE(noroute);
    CHECK(noroute->status == 404);
    CHECK(Json::parse(noroute->body)["error"]["code"] == "not_found");

    auto img = cli.Get(s["image_url"].get<std::string>());
    REQUIRE(img);
    CHECK(img->status == 200);
    CHECK(img->get_header_value("Content-Type") == "image/png");
    CHECK(img->body.substr(1, 3) == "PNG");
    CHECK(decode_png(img->body) == decode_png(*svc.image_png(s["image"])));
    auto noimg = cli.Get("/images/abcdef");
    REQUIRE(noimg);
    CHECK(noimg->status == 404);

    auto re = cli.Post("/sessions/" + id + "/reenact", source_png(22), "image/png");
    REQUIRE(re);
    CHECK(re->status == 200);
    CHECK(Json::parse(re->body).contains("target_pose"));
    auto emptyre = cli.Post("/sessions/" + id + "/reenact", "", "image/png");
    REQUIRE(emptyre);
    CHECK(emptyre->status == 400);

    // concurrent clients on separate sessions
    std::vector<std::thread> workers;
    std::vector<int> ok(4, 0);
    for (int k = 0; k < 4; ++k)
        workers.emplace_back([&, k] {
            httplib::Client c("127.0.0.1", port);
            c.set_read_timeout(60, 0);
            auto r = c.Post("/sessions", source_png(30 + k), "image/png");
            if (!r || r->status != 201) return;
            const std::string sid = Json::parse(r->body)["session"];
            auto e = c.Post("/sessions/" + sid + "/edit", R"({"target": {"yaw": 0}})", "application/json");
            ok[k] = e && e->status == 200 && Json::parse(e->body)["session"] == sid;
        });
    for (auto& t : workers) t.join();
    CHECK(std::count(ok.begin(), ok.end(), 1) == 4);

    auto del = cli.Delete("/sessions/" + id);
    REQUIRE(del);
    CHECK(del->status == 200);
    auto del2 = cli.Delete("/sessions/" + id);
    REQUIRE(del2);
    CHECK(del2->status == 404);

    srv.stop();
    th.join();
}

}
