#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "mixucb/arms.hpp"

namespace testing_support {

// Fresh scratch directory, removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("mixucb_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline mixucb::Sample vec(std::initializer_list<double> v) {
    mixucb::Sample x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double d : v) x[i++] = d;
    return x;
}

// Plain gaussian kernel written out independently of the library.
inline double gauss(const mixucb::Sample& x, const mixucb::Sample& y, double sigma, bool squared = false) {
    double d2 = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) d2 += (x[k] - y[k]) * (x[k] - y[k]);
    const double v = std::exp(-d2 / (2.0 * sigma * sigma));
    return squared ? v * v : v;
}

inline Eigen::MatrixXd random_psd(int m, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd A(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) A(i, j) = n(rng);
    Eigen::MatrixXd Q = A * A.transpose();
    return 0.5 * (Q + Q.transpose());
}

inline Eigen::VectorXd random_simplex(int m, std::mt19937_64& rng) {
    std::exponential_distribution<double> e(1.0);
    Eigen::VectorXd a(m);
    for (int i = 0; i < m; ++i) a[i] = e(rng);
    return a / a.sum();
}

}  // namespace testing_support
