#pragma once

#include "fr/core.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <variant>

namespace fr {

// Versioned container shared by every module.
//
// Layout (all integers little-endian):
//   8 bytes  magic "FRCKPT01"
//   u32      container version (currently 1)
//   u32      entry count
//   per entry, sorted by name:
//     u32 name length, name bytes
//     u8  type: 0 = f64 matrix, 1 = i64 scalar, 2 = string
//     matrix: u64 rows, u64 cols, rows*cols f64 in row-major order
//     i64:    8 bytes
//     string: u64 length, bytes
//
// Every checkpoint carries a "kind" string and a "version" i64 entry.
class Checkpoint {
public:
    using Value = std::variant<Mat, std::int64_t, std::string>;

    Checkpoint() = default;
    Checkpoint(const std::string& kind, std::int64_t version);

    void put(const std::string& name, const Mat& m) { entries_[name] = m; }
    void put(const std::string& name, const Vec& v) { entries_[name] = Mat(v); }
    void put_int(const std::string& name, std::int64_t v) { entries_[name] = v; }
    void put_str(const std::string& name, const std::string& s) { entries_[name] = s; }

    bool has(const std::string& name) const { return entries_.count(name) > 0; }
    const Mat& mat(const std::string& name) const;
    Vec vec(const std::string& name) const;
    std::int64_t integer(const std::string& name) const;
    const std::string& str(const std::string& name) const;

    std::string kind() const { return str("kind"); }
    // Throws Error("checkpoint_kind") when the stored kind differs.
    void expect_kind(const std::string& kind) const;

    std::string serialize() const;
    static Checkpoint deserialize(const std::string& bytes);

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    const std::map<std::string, Value>& entries() const { return entries_; }

private:
    std::map<std::string, Value> entries_;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace fr
