#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fr {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Thrown when a caller breaks a documented precondition (dimension mismatch, bad index).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Runtime failure with a machine-readable code, e.g. "training_failure" or "not_found".
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

inline void require(bool ok, const char* what) {
    if (!ok) throw ContractViolation(what);
}

// Seeded generator. Normals use Box-Muller on top of mt19937_64 so streams are
// identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform() { return (eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t bits() { return eng_(); }
    int index(int n) { return static_cast<int>(uniform() * n) % n; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    Vec normal_vec(int n, double std = 1.0) {
        Vec v(n);
        for (int i = 0; i < n; ++i) v[i] = std * normal();
        return v;
    }

    Mat normal_mat(int r, int c, double std = 1.0) {
        Mat m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) m(i, j) = std * normal();
        return m;
    }

    // Independent child stream; used to give sub-tasks their own sequence.
    std::uint64_t fork() { return eng_() ^ 0x9e3779b97f4a7c15ULL; }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(const Mat& m);

// Random orthonormal n x n matrix (QR of a Gaussian matrix with sign fix).
Mat random_orthogonal(int n, Rng& rng);

}  // namespace fr
