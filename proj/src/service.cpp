#include "fr/service.hpp"

#include <cstdlib>

namespace fr {

namespace fs = std::filesystem;

Workspace::Workspace(fs::path root) : root_(std::move(root)) {}

fs::path Workspace::artifact_path(const std::string& name) const { return root_ / (name + ".ckpt"); }

bool Workspace::has_artifact(const std::string& name) const { return fs::exists(artifact_path(name)); }

void Workspace::require(const std::string& name) const {
    if (!has_artifact(name))
        throw Error("missing_artifact", "missing checkpoint '" + name + "' (expected " + artifact_path(name).string() + ")");
}

Checkpoint Workspace::load(const std::string& name) const {
    require(name);
    return Checkpoint::load(artifact_path(name).string());
}

std::string Workspace::save(const std::string& name, const Checkpoint& ck) const {
    const fs::path p = artifact_path(name);
    fs::create_directories(p.parent_path());
    const std::string bytes = ck.serialize();
    write_file(p.string(), bytes);
    return sha256_hex(bytes);
}

std::string Workspace::artifact_hash(const std::string& name) const {
    require(name);
    return file_sha256(artifact_path(name));
}

fs::path workspace_root(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("FR_WORKSPACE"); env && *env) return env;
    return fs::current_path();
}

std::string file_sha256(const fs::path& p) { return sha256_hex(read_file(p.string())); }

Models load_models(const Workspace& ws, const std::string& directions) {
    const std::vector<std::string> needed{"generator", "regressor", "embedder", "encoder", "directions/" + directions};
    for (const auto& n : needed) ws.require(n);
    return {load_generator(ws.load("generator")), load_regressor(ws.load("regressor")),
            load_embedder(ws.load("embedder")), load_encoder(ws.load("encoder")),
            load_directions(ws.load("directions/" + directions))};
}

Vec delta_from_raw(const PoseStats& s, const Vec& raw) {
    require(raw.size() == kPoseDim, "raw delta must have 15 values");
    return (2.0 * s.a * raw.array() / (s.high - s.low).array()).matrix();
}

Vec delta_to_targets(const PoseStats& s, const Vec& current, const std::map<int, double>& targets) {
    Vec target = current;
    for (const auto& [i, v] : targets) {
        require(i >= 0 && i < kPoseDim, "attribute index out of range");
        target[i] = v;
    }
    Vec d = rescale(target, s) - rescale(current, s);
    for (int i = 0; i < kPoseDim; ++i)
        if (!targets.count(i)) d[i] = 0;
    return d;
}

Json pose_json(const PoseParams& p) {
    Json j = Json::object();
    const Vec v = p.pose_vector();
    for (int i = 0; i < kPoseDim; ++i) j[attribute_names()[i]] = v[i];
    j["identity"] = std::vector<double>(p.identity.data(), p.identity.data() + p.identity.size());
    return j;
}

std::string ImageCache::put(const Image& im) {
    std::string png = encode_png(im);
    std::string hash = sha256_hex(png);
    std::lock_guard lock(mu_);
    if (auto it = items_.find(hash); it != items_.end()) {
        order_.erase(it->second.second);
        order_.push_front(hash);
        it->second.second = order_.begin();
        return hash;
    }
    order_.push_front(hash);
    items_[hash] = {std::move(png), order_.begin()};
    while (items_.size() > capacity_) {
        items_.erase(order_.back());
        order_.pop_back();
    }
    return hash;
}

std::optional<std::string> ImageCache::get(const std::string& hash) {
    std::lock_guard lock(mu_);
    const auto it = items_.find(hash);
    if (it == items_.end()) return std::nullopt;
    return it->second.first;
}

size_t ImageCache::size() {
    std::lock_guard lock(mu_);
    return items_.size();
}

int http_status(const std::string& code) {
    if (code == "not_found") return 404;
    if (code == "invalid_argument" || code == "invalid_field" || code == "malformed_json" || code == "bad_image")
        return 400;
    return 500;
}

Json error_json(const std::string& code, const std::string& message) {
    return {{"error", {{"code", code}, {"message", message}}}};
}

Service::Service(const Models& models, ServiceConfig cfg) : m_(models), cfg_(cfg), images_(cfg.max_images) {}

Json Service::attributes() const {
    Json list = Json::array();
    for (int i = 0; i < kPoseDim; ++i)
        list.push_back({{"name", attribute_names()[i]},
                        {"index", i},
                        {"low", m_.d.stats.low[i]},
                        {"high", m_.d.stats.high[i]}});
    return {{"attributes", list}, {"a", m_.d.stats.a}};
}

std::shared_ptr<Session> Service::find(const std::string& id) {
    expire(std::chrono::steady_clock::now());
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error("not_found", "unknown session '" + id + "'");
    return it->second;
}

void Service::expire(std::chrono::steady_clock::time_point now) {
    std::lock_guard lock(mu_);
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        std::unique_lock slock(it->second->mu, std::try_to_lock);
        // A session busy with a request is in use, not idle.
        if (slock.owns_lock() && now - it->second->last_used > cfg_.idle_timeout) {
            tuned_order_.remove(it->first);
            slock.unlock();
            it = sessions_.erase(it);
        } else {
            ++it;
        }
    }
}

Json Service::render(Session& s) {
    const ToyGenerator& g = s.tuned ? *s.tuned : m_.gen;
    const Image img = generate(g, apply_shift(s.w_inv, delta_w(m_.d.a, s.delta)));
    const PoseParams p = estimate_pose(m_.reg, img).pose;
    const std::string hash = images_.put(img);
    Json delta = Json::object();
    for (int i = 0; i < kPoseDim; ++i) delta[attribute_names()[i]] = s.delta[i];
    return {{"session", s.id},
            {"image", hash},
            {"image_url", "/images/" + hash},
            {"pose", pose_json(p)},
            {"delta", delta},
            {"tuned", static_cast<bool>(s.tuned)}};
}

Json Service::create_session(const std::string& png) {
    Image src = decode_png(png);
    auto s = std::make_shared<Session>();
    s->source = src;
    s->source_pose = estimate_pose(m_.reg, src).pose;
    s->w_inv = invert(m_.enc, m_.gen, m_.reg, src);
    s->last_used = std::chrono::steady_clock::now();
    expire(s->last_used);
    {
        std::lock_guard lock(mu_);
        s->id = "s" + std::to_string(++counter_);
        sessions_[s->id] = s;
    }
    std::lock_guard slock(s->mu);
    Json out = render(*s);
    out["source_image"] = images_.put(src);
    out["source_pose"] = pose_json(s->source_pose);
    return out;
}

namespace {

std::map<int, double> named_values(const Json& obj, const std::string& field) {
    if (!obj.is_object()) throw Error("invalid_field", "'" + field + "' must be an object of attribute values");
    std::map<int, double> out;
    for (const auto& [name, v] : obj.items()) {
        const int i = attribute_index(name);
        if (i < 0) throw Error("invalid_field", "unknown attribute '" + field + "." + name + "'");
        if (!v.is_number() || !std::isfinite(v.get<double>()))
            throw Error("invalid_field", "'" + field + "." + name + "' must be a finite number");
        out[i] = v.get<double>();
    }
    return out;
}

}  // namespace

Json Service::edit(const std::string& id, const Json& body) {
    if (!body.is_object()) throw Error("malformed_json", "edit body must be a JSON object");
    for (const auto& [k, v] : body.items())
        if (k != "delta" && k != "target") throw Error("invalid_field", "unexpected field '" + k + "'");
    std::map<int, double> delta, target;
    if (body.contains("delta")) delta = named_values(body["delta"], "delta");
    if (body.contains("target")) target = named_values(body["target"], "target");
    auto s = find(id);
    std::lock_guard slock(s->mu);
    Vec next = s->delta;
    if (!delta.empty()) {
        Vec raw = Vec::Zero(kPoseDim);
        for (const auto& [i, v] : delta) raw[i] = v;
        next += delta_from_raw(m_.d.stats, raw);
    }
    if (!target.empty()) {
        // Absolute targets are measured from the source estimate, so repeating a request does not drift.
        const Vec d = delta_to_targets(m_.d.stats, s->source_pose.pose_vector(), target);
        for (const auto& [i, v] : target) next[i] = d[i];
    }
    s->delta = next;
    s->last_used = std::chrono::steady_clock::now();
    return render(*s);
}

Json Service::reenact(const std::string& id, const std::string& target_png) {
    const Image target = decode_png(target_png);
    const PoseParams pt = estimate_pose(m_.reg, target).pose;
    auto s = find(id);
    std::lock_guard slock(s->mu);
    s->delta = rescale(pt.pose_vector(), m_.d.stats) - rescale(s->source_pose.pose_vector(), m_.d.stats);
    s->last_used = std::chrono::steady_clock::now();
    Json out = render(*s);
    out["target_pose"] = pose_json(pt);
    return out;
}

void Service::touch_tuned(const std::string& id) {
    tuned_order_.remove(id);
    tuned_order_.push_front(id);
    while (tuned_order_.size() > cfg_.max_tuned) {
        const std::string victim = tuned_order_.back();
        tuned_order_.pop_back();
        const auto it = sessions_.find(victim);
        if (it == sessions_.end()) continue;
        std::unique_lock vlock(it->second->mu, std::try_to_lock);
        if (vlock.owns_lock()) it->second->tuned.reset();
    }
}

Json Service::tune(const std::string& id) {
    auto s = find(id);
    std::unique_lock slock(s->mu);
    auto tuned = std::make_shared<const ToyGenerator>(pivotal_tune(m_.gen, m_.emb, s->source, s->w_inv, cfg_.tune));
    s->tuned = tuned;
    s->last_used = std::chrono::steady_clock::now();
    Json out = render(*s);
    slock.unlock();
    std::lock_guard lock(mu_);
    touch_tuned(id);
    return out;
}

std::optional<std::string> Service::image_png(const std::string& hash) { return images_.get(hash); }

void Service::delete_session(const std::string& id) {
    std::lock_guard lock(mu_);
    if (!sessions_.erase(id)) throw Error("not_found", "unknown session '" + id + "'");
    tuned_order_.remove(id);
}

size_t Service::session_count() {
    std::lock_guard lock(mu_);
    return sessions_.size();
}

size_t Service::tuned_count() {
    std::lock_guard lock(mu_);
    size_t n = 0;
    for (const auto& [id, s] : sessions_) {
        std::lock_guard slock(s->mu);
        n += s->tuned != nullptr;
    }
    return n;
}

}  // namespace fr
