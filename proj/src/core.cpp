#include "fr/core.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstring>
#include <vector>

namespace fr {

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

std::string sha256_hex(const Mat& m) {
    std::vector<double> buf(static_cast<size_t>(m.size()));
    size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) buf[k++] = m(i, j);
    std::string bytes(reinterpret_cast<const char*>(buf.data()), buf.size() * sizeof(double));
    bytes += std::to_string(m.rows()) + "x" + std::to_string(m.cols());
    return sha256_hex(bytes);
}

Mat random_orthogonal(int n, Rng& rng) {
    Mat g = rng.normal_mat(n, n);
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ() * Mat::Identity(n, n);
    Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < n; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    return q;
}

}  // namespace fr
