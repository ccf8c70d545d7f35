#include "fr/server.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fr {

namespace fs = std::filesystem;

namespace {

struct Manifest {
    std::string command;
    Json flags = Json::object();
    Json inputs = Json::object();
    Json outputs = Json::object();
    Json summary = Json::object();

    void artifact_in(const Workspace& ws, const std::string& name) { inputs[name] = ws.artifact_hash(name); }
    void file_in(const std::string& label, const fs::path& p) { inputs[label] = file_sha256(p); }
    void file_out(const std::string& label, const fs::path& p) { outputs[label] = file_sha256(p); }

    std::string text() const {
        return Json{{"command", command}, {"flags", flags}, {"inputs", inputs}, {"outputs", outputs}, {"summary", summary}}
                   .dump(2) +
               "\n";
    }
};

void collect_flags(const CLI::App* sub, Manifest& m) {
    for (const CLI::Option* opt : sub->get_options()) {
        if (opt == sub->get_help_ptr() || opt->get_lnames().empty()) continue;
        const std::string name = "--" + opt->get_lnames().front();
        if (name == "--workspace" || name == "--manifest") continue;
        if (opt->get_expected_max() == 0) {
            m.flags[name] = opt->count();
        } else if (opt->count() > 0) {
            std::string v;
            for (const auto& r : opt->results()) v += (v.empty() ? "" : ",") + r;
            m.flags[name] = v;
        } else {
            m.flags[name] = opt->get_default_str();
        }
    }
}

Image read_png(const std::string& path) { return decode_png(read_file(path)); }

void write_png(const fs::path& path, const Image& im) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file(path.string(), encode_png(im));
}

Json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// Combined hash of a corpus directory: index, sidecar, and every frame file in index order.
void corpus_in(const Workspace& ws, Manifest& m) {
    const fs::path dir = ws.path("corpus");
    if (!fs::exists(dir / "index.json"))
        throw Error("missing_artifact", "missing corpus (expected " + (dir / "index.json").string() + ")");
    m.file_in("corpus/index.json", dir / "index.json");
    const RealAnalogCorpus c = load_corpus(dir.string(), false);
    std::string all;
    for (const auto& f : c.frames) all += file_sha256(dir / (f.id + ".png"));
    m.inputs["corpus/frames"] = sha256_hex(all);
}

struct Options {
    std::string workspace, manifest;
    std::uint64_t seed = 1;
    // train-regressor / calibrate / encoder
    int samples = 0, heldout = 500;
    double tolerance = 0.02;
    // corpus
    int n = 200, frames_per_video = 4;
    // encoder
    int steps = 0;
    double threshold = 0.03, holdout = 0.2;
    // training
    std::string scheme, name, from = "mixed";
    int iterations = 2000, batch = 8;
    double lr = 1e-4, single_fraction = 0.5, real_fraction = 0.5;
    // inference
    std::string image, source, target, out, out_code, directions = "synthetic", attr = "yaw", mode, pairs;
    double value = 0;
    bool self = false, cross = false, tune = false, linearity = false, disentanglement = false, no_listen = false;
    // serve
    std::string host = "127.0.0.1";
    int port = 8080, idle_timeout = 1800, max_tuned = 4;
};

const ToyGenerator& maybe_tuned(const Models& m, const Image& img, const LatentCode& w, bool tune, ToyGenerator& slot) {
    if (!tune) return m.gen;
    slot = pivotal_tune(m.gen, m.emb, img, w);
    return slot;
}

void models_in(const Workspace& ws, Manifest& m, const std::string& directions) {
    for (const std::string& n : {"generator", "regressor", "embedder", "encoder"}) m.artifact_in(ws, n);
    m.artifact_in(ws, "directions/" + directions);
}

int run(const std::string& cmd, const Options& o, Manifest& m) {
    const Workspace ws(workspace_root(o.workspace));
    fs::create_directories(ws.root());

    if (cmd == "init") {
        const ToyGenerator g = build_generator(o.seed);
        const FrozenEmbedder e = build_embedder(o.seed);
        m.outputs["generator"] = ws.save("generator", save_generator(g));
        m.outputs["embedder"] = ws.save("embedder", save_embedder(e));
        m.summary["embedder_checksum"] = embedder_checksum(e);
    } else if (cmd == "train-regressor") {
        m.artifact_in(ws, "generator");
        const ToyGenerator g = load_generator(ws.load("generator"));
        RegressorTrainConfig cfg;
        cfg.n_samples = o.samples > 0 ? o.samples : 12000;
        cfg.n_heldout = o.heldout;
        cfg.seed = o.seed;
        cfg.tolerance = o.tolerance;
        RegressorReport rep;
        const PoseRegressor reg = train_regressor(g, cfg, &rep);
        m.outputs["regressor"] = ws.save("regressor", save_regressor(reg));
        m.summary["max_rel_rmse"] = rep.max_rel_rmse;
        m.summary["rel_rmse"] = vec_json(rep.rel_rmse);
    } else if (cmd == "calibrate") {
        m.artifact_in(ws, "generator");
        m.artifact_in(ws, "regressor");
        const PoseStats s = estimate_p_stats(load_generator(ws.load("generator")), load_regressor(ws.load("regressor")),
                                             o.samples > 0 ? o.samples : 10000, o.seed);
        m.outputs["stats"] = ws.save("stats", save_stats(s));
        m.summary["low"] = vec_json(s.low);
        m.summary["high"] = vec_json(s.high);
    } else if (cmd == "build-corpus") {
        m.artifact_in(ws, "generator");
        CorpusConfig cfg;
        cfg.frames_per_video = o.frames_per_video;
        const RealAnalogCorpus c = build_real_corpus(load_generator(ws.load("generator")), o.n, o.seed, cfg);
        const fs::path dir = ws.path("corpus");
        fs::remove_all(dir);
        save_corpus(c, dir.string());
        m.file_out("corpus/index.json", dir / "index.json");
        m.file_out("corpus/truth.ckpt", dir / "truth.ckpt");
        std::string all;
        for (const auto& f : c.frames) all += file_sha256(dir / (f.id + ".png"));
        m.outputs["corpus/frames"] = sha256_hex(all);
        m.summary["frames"] = c.frames.size();
    } else if (cmd == "train-encoder") {
        for (const std::string& n : {"generator", "regressor", "embedder"}) m.artifact_in(ws, n);
        corpus_in(ws, m);
        EncoderConfig cfg;
        cfg.synthetic_samples = o.samples > 0 ? o.samples : 3000;
        cfg.finetune_steps = o.steps;
        cfg.threshold = o.threshold;
        cfg.holdout_fraction = o.holdout;
        cfg.seed = o.seed;
        EncoderReport rep;
        const Encoder e = train_encoder(load_generator(ws.load("generator")), load_regressor(ws.load("regressor")),
                                        load_embedder(ws.load("embedder")), load_corpus(ws.path("corpus").string(), false),
                                        cfg, &rep);
        m.outputs["encoder"] = ws.save("encoder", save_encoder(e));
        m.summary["heldout_l1"] = rep.heldout_l1;
        m.summary["train_frames"] = rep.train_frames;
        m.summary["heldout_frames"] = rep.heldout_frames;
    } else if (cmd == "invert") {
        for (const std::string& n : {"generator", "regressor", "encoder"}) m.artifact_in(ws, n);
        m.file_in("image", o.image);
        const ToyGenerator g = load_generator(ws.load("generator"));
        const PoseRegressor reg = load_regressor(ws.load("regressor"));
        const Image img = read_png(o.image);
        const LatentCode w = invert(load_encoder(ws.load("encoder")), g, reg, img);
        Checkpoint ck("latent", 1);
        ck.put("w", w.data);
        const fs::path code = o.out_code.empty() ? fs::path("inverted.ckpt") : fs::path(o.out_code);
        if (code.has_parent_path()) fs::create_directories(code.parent_path());
        ck.save(code.string());
        m.file_out("code", code);
        const Image preview = generate(g, w);
        if (!o.out.empty()) {
            write_png(o.out, preview);
            m.file_out("image", o.out);
        }
        m.summary["pose"] = pose_json(estimate_pose(reg, img).pose);
        m.summary["reconstruction_l1"] = mean_abs_diff(preview, img);
    } else if (cmd == "train-directions" || cmd == "finetune-paired") {
        const bool paired = cmd == "finetune-paired";
        for (const std::string& n : {"generator", "regressor", "embedder", "stats"}) m.artifact_in(ws, n);
        TrainConfig cfg;
        cfg.scheme = paired ? Scheme::PAIRED : parse_scheme(o.scheme);
        if (!paired && cfg.scheme == Scheme::PAIRED)
            throw Error("invalid_argument", "use finetune-paired for the paired scheme");
        cfg.iterations = o.iterations;
        cfg.batch_size = o.batch;
        cfg.learning_rate = o.lr;
        cfg.single_attribute_fraction = o.single_fraction;
        cfg.mixed_real_fraction = o.real_fraction;
        cfg.seed = o.seed;
        validate(cfg);
        const ToyGenerator g = load_generator(ws.load("generator"));
        const PoseRegressor reg = load_regressor(ws.load("regressor"));
        const FrozenEmbedder emb = load_embedder(ws.load("embedder"));
        TrainingPools pools;
        if (cfg.scheme != Scheme::SYNTHETIC) {
            m.artifact_in(ws, "encoder");
            corpus_in(ws, m);
            const RealAnalogCorpus c = load_corpus(ws.path("corpus").string(), false);
            pools = build_pools(load_encoder(ws.load("encoder")), g, reg, c, split_corpus(c).train);
        }
        DirectionMatrix init;
        if (paired) {
            m.artifact_in(ws, "directions/" + o.from);
            init = load_directions(ws.load("directions/" + o.from));
        } else {
            init = init_directions(load_stats(ws.load("stats")), o.seed);
        }
        const std::string name = o.name.empty() ? (paired ? "paired" : o.scheme) : o.name;
        const fs::path log = ws.path("logs/" + name + ".jsonl");
        fs::create_directories(log.parent_path());
        std::string lines;
        const TrainContext ctx{g, reg, emb};
        // Wall time is left out of the persisted log so reruns stay byte-identical.
        const auto sink = [&](const LogRecord& r) {
            LogRecord q = r;
            q.wall_ms = 0;
            lines += log_line(q) + "\n";
            if (r.iteration % 100 == 0) std::cerr << log_line(r) << "\n";
        };
        const TrainResult res =
            paired ? finetune_paired(ctx, init, pools, cfg, sink) : train_directions(ctx, init, cfg, pools, sink);
        write_file(log.string(), lines);
        m.outputs["directions/" + name] = ws.save("directions/" + name, save_directions(res.directions));
        m.file_out("logs/" + name + ".jsonl", log);
        if (!res.log.empty()) m.summary["final_loss"] = res.log.back().loss.total;
    } else if (cmd == "reenact" || cmd == "edit" || cmd == "frontalize") {
        models_in(ws, m, o.directions);
        const Models models = load_models(ws, o.directions);
        const fs::path src_path = cmd == "reenact" ? o.source : o.image;
        m.file_in("source", src_path);
        const Image src = read_png(src_path.string());
        const LatentCode w = invert(models.enc, models.gen, models.reg, src);
        const PoseParams ps = estimate_pose(models.reg, src).pose;
        ToyGenerator slot;
        const ToyGenerator& g = maybe_tuned(models, src, w, o.tune, slot);
        Vec delta;
        PoseParams pt;
        Image target;
        if (cmd == "reenact") {
            m.file_in("target", o.target);
            target = read_png(o.target);
            pt = estimate_pose(models.reg, target).pose;
            delta = rescale(pt.pose_vector(), models.d.stats) - rescale(ps.pose_vector(), models.d.stats);
        } else if (cmd == "edit") {
            const int i = attribute_index(o.attr);
            if (i < 0) throw Error("invalid_argument", "unknown attribute '" + o.attr + "'");
            delta = delta_to_targets(models.d.stats, ps.pose_vector(), {{i, o.value}});
        } else {
            delta = delta_to_targets(models.d.stats, ps.pose_vector(), {{0, 0.0}, {1, 0.0}, {2, 0.0}});
        }
        const Image out = generate(g, apply_shift(w, delta_w(models.d.a, delta)));
        const fs::path out_path = o.out.empty() ? fs::path(cmd + ".png") : fs::path(o.out);
        write_png(out_path, out);
        m.file_out("image", out_path);
        const PoseParams pr = estimate_pose(models.reg, out).pose;
        m.summary["source_pose"] = pose_json(ps);
        m.summary["result_pose"] = pose_json(pr);
        m.summary["inversion_l1"] = mean_abs_diff(generate(g, w), src);
        if (cmd == "reenact") {
            const bool cross = o.cross && !o.self;
            m.summary["mode"] = cross ? "cross" : "self";
            m.summary["csim"] = csim(models.emb, out, cross ? src : target);
            m.summary["pose_l1_deg"] = pose_error(pr, pt);
            m.summary["exp_l1"] = expression_error(pr, pt);
        }
    } else if (cmd == "eval") {
        models_in(ws, m, o.directions);
        const Models models = load_models(ws, o.directions);
        const EvalMode mode = parse_eval_mode(o.mode);
        std::vector<EvalPair> pairs;
        if (!o.pairs.empty()) {
            m.file_in("pairs", o.pairs);
            Json list;
            try {
                list = Json::parse(read_file(o.pairs));
            } catch (const Json::exception& e) {
                throw Error("malformed_json", std::string("pair manifest: ") + e.what());
            }
            for (const Json& p : list) {
                const std::string s = p.at("source").get<std::string>(), t = p.at("target").get<std::string>();
                const Image si = read_png(s);
                pairs.push_back({s, t, invert(models.enc, models.gen, models.reg, si), si, read_png(t), nullptr});
            }
        } else {
            corpus_in(ws, m);
            pairs = corpus_pairs(models.enc, models.gen, models.reg, load_corpus(ws.path("corpus").string(), false), mode, o.n,
                                 o.seed);
        }
        std::map<std::string, ToyGenerator> tuned;
        if (o.tune)
            for (auto& p : pairs) {
                auto it = tuned.find(p.source_id);
                if (it == tuned.end())
                    it = tuned.emplace(p.source_id, pivotal_tune(models.gen, models.emb, p.source_image, p.source_code)).first;
                p.generator = &it->second;
            }
        const EvalReport rep = run_eval({models.gen, models.reg, models.emb, models.d}, pairs, mode);
        const fs::path dir = o.out.empty() ? ws.path("reports/eval_" + o.mode) : fs::path(o.out);
        fs::create_directories(dir);
        write_file((dir / "report.txt").string(), report_text(rep));
        write_file((dir / "report.json").string(), report_json(rep));
        write_file((dir / "report.csv").string(), report_csv(rep));
        for (const char* f : {"report.txt", "report.json", "report.csv"}) m.file_out(f, dir / f);
        m.summary["records"] = rep.records.size();
        m.summary["mean_pose_l1_deg"] = rep.mean_pose_l1_deg;
        m.summary["mean_csim"] = rep.mean_csim;
    } else if (cmd == "analyze") {
        if (o.linearity == o.disentanglement)
            throw Error("invalid_argument", "choose exactly one of --linearity or --disentanglement");
        for (const std::string& n : {"generator", "regressor"}) m.artifact_in(ws, n);
        m.artifact_in(ws, "directions/" + o.directions);
        const ToyGenerator g = load_generator(ws.load("generator"));
        const PoseRegressor reg = load_regressor(ws.load("regressor"));
        const DirectionMatrix d = load_directions(ws.load("directions/" + o.directions));
        const fs::path dir = o.out.empty() ? ws.path("reports") : fs::path(o.out);
        fs::create_directories(dir);
        if (o.linearity) {
            const LinearityResult r = linearity_analysis(g, reg, d, o.n, o.seed);
            std::string csv = "attribute,dw_norm,dp_abs\n";
            Json corr = Json::object();
            for (size_t a = 0; a < r.attributes.size(); ++a) {
                const std::string& name = attribute_names()[r.attributes[a]];
                corr[name] = r.correlation[a];
                for (const auto& s : r.samples[a]) csv += name + "," + Json(s[0]).dump() + "," + Json(s[1]).dump() + "\n";
            }
            write_file((dir / "linearity.csv").string(), csv);
            write_file((dir / "linearity.json").string(), Json{{"correlation", corr}}.dump(2) + "\n");
            m.file_out("linearity.csv", dir / "linearity.csv");
            m.file_out("linearity.json", dir / "linearity.json");
            m.summary["correlation"] = corr;
        } else {
            const int attr = attribute_index(o.attr);
            if (attr < 0) throw Error("invalid_argument", "unknown attribute '" + o.attr + "'");
            const DisentanglementReport r = disentanglement_report(g, reg, d, attr, o.n, o.seed);
            std::string csv;
            for (int j = 0; j < kPoseDim; ++j) csv += (j ? "," : "") + attribute_names()[j];
            csv += ",achieved_ratio\n";
            for (int k = 0; k < r.off_target.rows(); ++k) {
                for (int j = 0; j < kPoseDim; ++j) csv += (j ? "," : "") + Json(r.off_target(k, j)).dump();
                csv += "," + Json(r.achieved_ratio[k]).dump() + "\n";
            }
            Json med = Json::object();
            for (int j = 0; j < kPoseDim; ++j) med[attribute_names()[j]] = r.median_off_target[j];
            const Json js{{"attribute", o.attr}, {"median_off_target", med}, {"median_achieved", r.median_achieved}};
            write_file((dir / "disentanglement.csv").string(), csv);
            write_file((dir / "disentanglement.json").string(), js.dump(2) + "\n");
            m.file_out("disentanglement.csv", dir / "disentanglement.csv");
            m.file_out("disentanglement.json", dir / "disentanglement.json");
            m.summary = js;
        }
    } else if (cmd == "serve") {
        models_in(ws, m, o.directions);
        const Models models = load_models(ws, o.directions);
        ServiceConfig cfg;
        cfg.idle_timeout = std::chrono::seconds(o.idle_timeout);
        cfg.max_tuned = static_cast<size_t>(o.max_tuned);
        Service svc(models, cfg);
        m.summary["host"] = o.host;
        m.summary["port"] = o.port;
        if (o.no_listen) return 0;
        const std::string path = o.manifest.empty() ? ws.path("manifests/serve.json").string() : o.manifest;
        fs::create_directories(fs::path(path).parent_path());
        write_file(path, m.text());
        httplib::Server srv;
        mount_routes(srv, svc);
        std::cerr << "listening on " << o.host << ":" << o.port << "\n";
        if (!srv.listen(o.host, o.port)) throw Error("io", "cannot listen on " + o.host + ":" + std::to_string(o.port));
    }
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Latent-direction face reenactment toolkit"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--workspace", o.workspace, "Workspace root (default $FR_WORKSPACE or the current directory)");
    app.add_option("--manifest", o.manifest, "Manifest path (default <workspace>/manifests/<command>.json)");
    app.set_config("--config", "", "TOML file of option values, one [section] per subcommand");
    app.fallthrough();

    std::map<std::string, CLI::App*> subs;
    auto add = [&](const std::string& name, const std::string& help) {
        CLI::App* s = app.add_subcommand(name, help);
        subs[name] = s;
        return s;
    };

    auto* init = add("init", "Build the toy generator, shape model and frozen embedders");
    init->add_option("--seed", o.seed, "Random seed")->capture_default_str();

    auto* treg = add("train-regressor", "Train the pose regressor on generator renders");
    treg->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    treg->add_option("--samples", o.samples, "Training renders (default 12000)")->capture_default_str();
    treg->add_option("--heldout", o.heldout, "Held-out renders")->capture_default_str();
    treg->add_option("--tolerance", o.tolerance, "Held-out RMSE bound, fraction of range")->capture_default_str();

    auto* cal = add("calibrate", "Estimate the 1st/99th percentile pose statistics");
    cal->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    cal->add_option("--samples", o.samples, "Samples (default 10000)")->capture_default_str();

    auto* corp = add("build-corpus", "Render the real-analog corpus");
    corp->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    corp->add_option("--n", o.n, "Frames")->capture_default_str();
    corp->add_option("--frames-per-video", o.frames_per_video, "Frames sharing one identity")->capture_default_str();

    auto* tenc = add("train-encoder", "Train the inversion encoder");
    tenc->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    tenc->add_option("--samples", o.samples, "Synthetic samples (default 3000)")->capture_default_str();
    tenc->add_option("--steps", o.steps, "Fine-tune steps on corpus frames")->capture_default_str();
    tenc->add_option("--threshold", o.threshold, "Held-out L1 bound")->capture_default_str();
    tenc->add_option("--holdout", o.holdout, "Held-out fraction of videos")->capture_default_str();

    auto* inv = add("invert", "Invert an image to a W+ code");
    inv->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    inv->add_option("--image", o.image, "Input PNG")->required();
    inv->add_option("--out-code", o.out_code, "Output latent checkpoint (default inverted.ckpt)");
    inv->add_option("--out", o.out, "Output preview PNG");

    for (const std::string name : {"train-directions", "finetune-paired"}) {
        auto* s = add(name, name == "train-directions" ? "Train the direction matrix" : "Fine-tune directions on paired frames");
        s->add_option("--seed", o.seed, "Random seed")->capture_default_str();
        if (name == "train-directions")
            s->add_option("--scheme", o.scheme, "synthetic or mixed")->required()->check(CLI::IsMember({"synthetic", "mixed"}));
        else
            s->add_option("--from", o.from, "Directions to start from")->capture_default_str();
        s->add_option("--name", o.name, "Output name under directions/ (default scheme name)");
        s->add_option("--iterations", o.iterations, "Adam iterations")->capture_default_str();
        s->add_option("--batch", o.batch, "Batch size")->capture_default_str();
        s->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
        s->add_option("--single-fraction", o.single_fraction, "Single-attribute sampling probability")->capture_default_str();
        s->add_option("--real-fraction", o.real_fraction, "Inverted-code probability (mixed)")->capture_default_str();
    }

    auto* re = add("reenact", "Transfer the target's pose and expression to the source");
    re->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    re->add_option("--source", o.source, "Source PNG")->required();
    re->add_option("--target", o.target, "Target PNG")->required();
    re->add_flag("--self", o.self, "Self reenactment: csim against the target");
    re->add_flag("--cross", o.cross, "Cross-subject reenactment: csim against the source");
    re->add_option("--out", o.out, "Output PNG (default reenact.png)");

    auto* ed = add("edit", "Set one attribute of an image to a value");
    ed->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    ed->add_option("--image", o.image, "Input PNG")->required();
    ed->add_option("--attr", o.attr, "Attribute name (yaw, pitch, roll, exp0..exp11)")->required();
    ed->add_option("--value", o.value, "Target value in degrees or coefficient units")->required();
    ed->add_option("--out", o.out, "Output PNG (default edit.png)");

    auto* fr = add("frontalize", "Set yaw, pitch and roll to zero");
    fr->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    fr->add_option("--image", o.image, "Input PNG")->required();
    fr->add_option("--out", o.out, "Output PNG (default frontalize.png)");

    auto* ev = add("eval", "Reenactment metrics over a pair list");
    ev->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    ev->add_option("--mode", o.mode, "self or cross")->required()->check(CLI::IsMember({"self", "cross"}));
    ev->add_option("--pairs", o.pairs, "JSON list of {source, target} PNG paths (default: held-out corpus pairs)");
    ev->add_option("--n", o.n, "Corpus pairs when --pairs is absent")->capture_default_str();
    ev->add_option("--out", o.out, "Report directory (default <workspace>/reports/eval_<mode>)");

    auto* an = add("analyze", "Linearity or disentanglement analysis");
    an->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    an->add_flag("--linearity", o.linearity, "Correlation between |dw| and estimated change");
    an->add_flag("--disentanglement", o.disentanglement, "Off-target change of a single-attribute transfer");
    an->add_option("--attr", o.attr, "Attribute for --disentanglement")->capture_default_str();
    an->add_option("--n", o.n, "Edits per attribute or pairs")->capture_default_str();
    an->add_option("--out", o.out, "Report directory (default <workspace>/reports)");

    auto* sv = add("serve", "Run the HTTP service");
    sv->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    sv->add_option("--host", o.host, "Bind address")->capture_default_str();
    sv->add_option("--port", o.port, "Port")->capture_default_str();
    sv->add_option("--idle-timeout", o.idle_timeout, "Session idle timeout in seconds")->capture_default_str();
    sv->add_option("--max-tuned", o.max_tuned, "Sessions that may hold a tuned generator")->capture_default_str();
    sv->add_flag("--no-listen", o.no_listen, "Load checkpoints and write the manifest, then exit");

    for (auto* s : {re, ed, fr, ev, an, sv})
        s->add_option("--directions", o.directions, "Direction matrix name under directions/")->capture_default_str();
    for (auto* s : {re, ed, fr, ev}) s->add_flag("--tune", o.tune, "Pivotal-tune the generator on the source first");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    std::string cmd;
    for (const auto& [name, s] : subs)
        if (s->parsed()) cmd = name;
    Manifest m;
    m.command = cmd;
    collect_flags(subs[cmd], m);
    try {
        const int rc = run(cmd, o, m);
        if (cmd != "serve" || o.no_listen) {
            const Workspace ws(workspace_root(o.workspace));
            const std::string path =
                o.manifest.empty() ? ws.path("manifests/" + cmd + ".json").string() : o.manifest;
            fs::create_directories(fs::path(path).parent_path());
            write_file(path, m.text());
            std::cout << m.summary.dump() << "\n";
        }
        return rc;
    } catch (const Error& e) {
        std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
        return e.code() == "missing_artifact" ? 3 : e.code() == "training_failure" ? 4 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace fr
