#include "fixture.hpp"

#include "fr/service.hpp"

using namespace fr;
namespace fs = std::filesystem;

namespace {

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "frctl");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

// Workspace holding the shared test models, the closed-form directions and a small corpus.
const fs::path& workspace() {
    static const fs::path root = [] {
        const auto& w = test::world();
        const fs::path p = fs::temp_directory_path() / "fr_cli_ws";
        fs::remove_all(p);
        const Workspace ws(p);
        ws.save("generator", save_generator(w.gen));
        ws.save("regressor", save_regressor(w.reg));
        ws.save("embedder", save_embedder(w.emb));
        ws.save("encoder", save_encoder(test::small_encoder()));
        ws.save("stats", save_stats(w.stats));
        ws.save("directions/oracle", save_directions(test::oracle_in_rescaled_units(w.gen, w.stats)));
        save_corpus(build_real_corpus(w.gen, 40, 12), (p / "corpus").string());
        return p;
    }();
    return root;
}

Image read_png(const std::string& p) { return decode_png(read_file(p)); }

std::string in_ws(const std::string& rel) { return (workspace() / rel).string(); }

Json manifest(const std::string& name) { return Json::parse(read_file(in_ws("manifests/" + name))); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("init writes the frozen networks") {
    const fs::path p = fs::temp_directory_path() / "fr_cli_init";
    fs::remove_all(p);
    REQUIRE(cli({"--workspace", p.string(), "init", "--seed", "1"}) == 0);
    const Workspace ws(p);
    CHECK(ws.artifact_hash("generator") == sha256_hex(save_generator(build_generator(1)).serialize()));
    CHECK(ws.has_artifact("embedder"));
    CHECK(fs::exists(p / "manifests" / "init.json"));
    fs::remove_all(p);
}

TEST_CASE("edit to yaw 0 frontalizes") {
    REQUIRE(cli({"--workspace", workspace().string(), "edit", "--directions", "oracle", "--image",
                 in_ws("corpus/v001_f02.png"), "--attr", "yaw", "--value", "0", "--out", in_ws("out/edit.png")}) == 0);
    const auto& w = test::world();
    CHECK(std::abs(estimate_pose(w.reg, read_png(in_ws("out/edit.png"))).pose.theta[0]) < 2.0);
    const Json m = manifest("edit.json");
    CHECK(std::abs(m["summary"]["result_pose"]["yaw"].get<double>()) < 2.0);
}

TEST_CASE("self reenactment with the same frame reproduces the inversion") {
    const std::string src = in_ws("corpus/v002_f00.png");
    REQUIRE(cli({"--workspace", workspace().string(), "reenact", "--self", "--directions", "oracle", "--source", src,
                 "--target", src, "--out", in_ws("out/re.png")}) == 0);
    const auto& w = test::world();
    const Image s = read_png(src);
    const Image inv = quantize8(generate(w.gen, invert(test::small_encoder(), w.gen, w.reg, s)));
    CHECK(mean_abs_diff(read_png(in_ws("out/re.png")), inv) < 0.02);
}

TEST_CASE("eval over an explicit pair list") {
    Json pairs = Json::array();
    for (int i = 0; i < 20; ++i) {
        char a[64], b[64];
        std::snprintf(a, sizeof a, "corpus/v%03d_f00.png", i % 10);
        std::snprintf(b, sizeof b, "corpus/v%03d_f01.png", (i + 3) % 10);
        pairs.push_back({{"source", in_ws(a)}, {"target", in_ws(b)}});
    }
    write_file(in_ws("pairs.json"), pairs.dump());
    REQUIRE(cli({"--workspace", workspace().string(), "eval", "--mode", "cross", "--directions", "oracle", "--pairs",
                 in_ws("pairs.json"), "--out", in_ws("reports/explicit")}) == 0);
    const Json r = Json::parse(read_file(in_ws("reports/explicit/report.json")));
    CHECK(r["pairs"] == 20);
    CHECK(r["mode"] == "cross");
    const std::string csv = read_file(in_ws("reports/explicit/report.csv"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 21);
}

TEST_CASE("errors map to exit codes") {
    CHECK(cli({"no-such-command"}) != 0);
    CHECK(cli({"--workspace", workspace().string(), "edit", "--bogus"}) != 0);
    CHECK(cli({"--workspace", workspace().string(), "edit", "--image", in_ws("corpus/v000_f00.png"), "--attr", "smile",
               "--value", "1", "--directions", "oracle"}) == 1);
    const fs::path empty = fs::temp_directory_path() / "fr_cli_empty";
    fs::remove_all(empty);
    fs::create_directories(empty);
    CHECK(cli({"--workspace", empty.string(), "frontalize", "--image", in_ws("corpus/v000_f00.png")}) == 3);
    CHECK(cli({"--workspace", empty.string(), "train-directions", "--scheme", "synthetic"}) == 3);
    fs::remove_all(empty);
}

TEST_CASE("config file supplies subcommand options") {
    write_file(in_ws("run.toml"), "[analyze]\nn = 30\nattr = \"pitch\"\n");
    REQUIRE(cli({"--workspace", workspace().string(), "--config", in_ws("run.toml"), "analyze", "--disentanglement",
                 "--directions", "oracle", "--out", in_ws("reports/cfg")}) == 0);
    const Json m = manifest("analyze.json");
    CHECK(m["summary"]["attribute"] == "pitch");
    CHECK(fs::exists(in_ws("reports/cfg/disentanglement.csv")));
    const std::string csv = read_file(in_ws("reports/cfg/disentanglement.csv"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 31);
}

TEST_CASE("reruns write identical manifests") {
    const std::vector<std::string> args{"--workspace", workspace().string(), "train-directions", "--scheme", "mixed",
                                        "--iterations", "2", "--batch", "2", "--name", "tiny"};
    REQUIRE(cli(args) == 0);
    const std::string first = read_file(in_ws("manifests/train-directions.json"));
    const std::string ckpt = Workspace(workspace()).artifact_hash("directions/tiny");
    REQUIRE(cli(args) == 0);
    CHECK(read_file(in_ws("manifests/train-directions.json")) == first);
    CHECK(Workspace(workspace()).artifact_hash("directions/tiny") == ckpt);
    const Json m = Json::parse(first);
    CHECK(m["command"] == "train-directions");
}

}
