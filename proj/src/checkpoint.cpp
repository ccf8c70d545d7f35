#include "fr/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fr {

namespace {

constexpr char kMagic[8] = {'F', 'R', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kContainerVersion = 1;

template <typename T>
void put_raw(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& s) : s_(s) {}
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, s_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string out = s_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    bool done() const { return pos_ == s_.size(); }

private:
    void need(size_t n) const {
        if (pos_ + n > s_.size()) throw Error("checkpoint_corrupt", "checkpoint truncated");
    }
    const std::string& s_;
    size_t pos_ = 0;
};

}  // namespace

Checkpoint::Checkpoint(const std::string& kind, std::int64_t version) {
    put_str("kind", kind);
    put_int("version", version);
}

const Mat& Checkpoint::mat(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end() || !std::holds_alternative<Mat>(it->second))
        throw Error("checkpoint_field", "missing matrix field '" + name + "'");
    return std::get<Mat>(it->second);
}

Vec Checkpoint::vec(const std::string& name) const {
    const Mat& m = mat(name);
    return Eigen::Map<const Vec>(m.data(), m.size());
}

std::int64_t Checkpoint::integer(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end() || !std::holds_alternative<std::int64_t>(it->second))
        throw Error("checkpoint_field", "missing integer field '" + name + "'");
    return std::get<std::int64_t>(it->second);
}

const std::string& Checkpoint::str(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end() || !std::holds_alternative<std::string>(it->second))
        throw Error("checkpoint_field", "missing string field '" + name + "'");
    return std::get<std::string>(it->second);
}

void Checkpoint::expect_kind(const std::string& kind) const {
    if (!has("kind") || str("kind") != kind)
        throw Error("checkpoint_kind", "expected a '" + kind + "' checkpoint");
}

std::string Checkpoint::serialize() const {
    std::string out(kMagic, 8);
    put_raw<std::uint32_t>(out, kContainerVersion);
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, value] : entries_) {
        put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        if (const Mat* m = std::get_if<Mat>(&value)) {
            put_raw<std::uint8_t>(out, 0);
            put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(m->rows()));
            put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(m->cols()));
            for (Eigen::Index i = 0; i < m->rows(); ++i)
                for (Eigen::Index j = 0; j < m->cols(); ++j) put_raw<double>(out, (*m)(i, j));
        } else if (const std::int64_t* v = std::get_if<std::int64_t>(&value)) {
            put_raw<std::uint8_t>(out, 1);
            put_raw<std::int64_t>(out, *v);
        } else {
            const std::string& s = std::get<std::string>(value);
            put_raw<std::uint8_t>(out, 2);
            put_raw<std::uint64_t>(out, s.size());
            out += s;
        }
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
    Reader r(bytes);
    if (r.bytes(8) != std::string(kMagic, 8)) throw Error("checkpoint_corrupt", "bad checkpoint magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kContainerVersion)
        throw Error("checkpoint_version", "unsupported container version " + std::to_string(version));
    const auto n = r.get<std::uint32_t>();
    Checkpoint ck;
    for (std::uint32_t e = 0; e < n; ++e) {
        const auto len = r.get<std::uint32_t>();
        std::string name = r.bytes(len);
        const auto type = r.get<std::uint8_t>();
        if (type == 0) {
            const auto rows = r.get<std::uint64_t>();
            const auto cols = r.get<std::uint64_t>();
            Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get<double>();
            ck.entries_[name] = std::move(m);
        } else if (type == 1) {
            ck.entries_[name] = r.get<std::int64_t>();
        } else if (type == 2) {
            const auto slen = r.get<std::uint64_t>();
            ck.entries_[name] = r.bytes(slen);
        } else {
            throw Error("checkpoint_corrupt", "unknown entry type");
        }
    }
    if (!r.done()) throw Error("checkpoint_corrupt", "trailing bytes in checkpoint");
    return ck;
}

void Checkpoint::save(const std::string& path) const { write_file(path, serialize()); }

Checkpoint Checkpoint::load(const std::string& path) {
    if (!std::filesystem::exists(path)) throw Error("missing_checkpoint", "checkpoint not found: " + path);
    return deserialize(read_file(path));
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("io", "cannot write " + path);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace fr
