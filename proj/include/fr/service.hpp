#pragma once

#include "fr/evaluation.hpp"
#include "fr/inversion.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

namespace fr {

using Json = nlohmann::json;

// Checkpoints live at <root>/<name>.ckpt, e.g. "regressor" or "directions/mixed".
class Workspace {
public:
    explicit Workspace(std::filesystem::path root);
    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path path(const std::string& rel) const { return root_ / rel; }
    std::filesystem::path artifact_path(const std::string& name) const;
    bool has_artifact(const std::string& name) const;
    // Throws Error("missing_artifact") naming the artifact.
    Checkpoint load(const std::string& name) const;
    void require(const std::string& name) const;
    // Returns the sha256 of the written bytes.
    std::string save(const std::string& name, const Checkpoint& ck) const;
    std::string artifact_hash(const std::string& name) const;

private:
    std::filesystem::path root_;
};

// The --workspace flag when given, else $FR_WORKSPACE, else the current directory.
std::filesystem::path workspace_root(const std::string& flag);

std::string file_sha256(const std::filesystem::path& p);

struct Models {
    ToyGenerator gen;
    PoseRegressor reg;
    FrozenEmbedder emb;
    Encoder enc;
    DirectionMatrix d;
};

// Loads generator, regressor, embedder, encoder and directions/<directions>.
Models load_models(const Workspace& ws, const std::string& directions);

// Raw attribute change (degrees, coefficients) to rescaled units.
Vec delta_from_raw(const PoseStats& s, const Vec& raw);
// Rescaled change that moves the listed attributes of `current` to raw target values.
Vec delta_to_targets(const PoseStats& s, const Vec& current, const std::map<int, double>& targets);

Json pose_json(const PoseParams& p);

class ImageCache {
public:
    explicit ImageCache(size_t capacity) : capacity_(capacity) {}
    // Stores the PNG encoding and returns its sha256.
    std::string put(const Image& im);
    std::optional<std::string> get(const std::string& hash);
    size_t size();

private:
    std::mutex mu_;
    size_t capacity_;
    std::list<std::string> order_;  // most recent first
    std::unordered_map<std::string, std::pair<std::string, std::list<std::string>::iterator>> items_;
};

struct ServiceConfig {
    std::chrono::seconds idle_timeout{1800};
    size_t max_tuned = 4;  // sessions holding a tuned generator copy
    size_t max_images = 512;
    TuneConfig tune;
};

struct Session {
    std::string id;
    Image source;
    LatentCode w_inv;
    PoseParams source_pose;
    Vec delta = Vec::Zero(kPoseDim);  // rescaled edit vector; the render is always G(w_inv + A delta)
    std::shared_ptr<const ToyGenerator> tuned;
    std::chrono::steady_clock::time_point last_used;
    std::mutex mu;
};

// Transport-free request handlers. Failures throw Error with a machine-readable code.
class Service {
public:
    Service(const Models& models, ServiceConfig cfg = {});

    Json attributes() const;
    Json create_session(const std::string& png);
    Json edit(const std::string& id, const Json& body);
    Json reenact(const std::string& id, const std::string& target_png);
    Json tune(const std::string& id);
    std::optional<std::string> image_png(const std::string& hash);
    void delete_session(const std::string& id);

    size_t session_count();
    size_t tuned_count();
    // Drops sessions idle longer than the timeout, measured at `now`.
    void expire(std::chrono::steady_clock::time_point now);

private:
    std::shared_ptr<Session> find(const std::string& id);
    Json render(Session& s);
    void touch_tuned(const std::string& id);

    const Models& m_;
    ServiceConfig cfg_;
    ImageCache images_;
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::list<std::string> tuned_order_;  // most recent first
    std::uint64_t counter_ = 0;
};

// HTTP status for an error code.
int http_status(const std::string& code);
Json error_json(const std::string& code, const std::string& message);

// Command-line entry point; returns the exit status.
int run_cli(int argc, const char* const* argv);

}  // namespace fr
