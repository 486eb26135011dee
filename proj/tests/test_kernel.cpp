#include <gtest/gtest.h>

#include <random>

#include "mixucb/kernel.hpp"
#include "support.hpp"

using namespace mixucb;
using testing_support::vec;

TEST(Kernel, SelfSimilarityIsOne) {
    for (double sigma : {0.1, 1.0, 40.0}) {
        const auto k = KernelSpec::gaussian(sigma);
        EXPECT_EQ(eval(k, vec({3.0, -1.0}), vec({3.0, -1.0})), 1.0);
        EXPECT_EQ(eval(k.as_squared(), vec({3.0, -1.0}), vec({3.0, -1.0})), 1.0);
    }
}

TEST(Kernel, ClosedFormValues) {
    const auto k = KernelSpec::gaussian(1.0);
    EXPECT_NEAR(eval(k, vec({0.0}), vec({std::sqrt(2.0)})), 0.36787944117144233, 1e-15);
    EXPECT_NEAR(eval(k.as_squared(), vec({0.0}), vec({std::sqrt(2.0)})), 0.1353352832366127, 1e-15);
    EXPECT_NEAR(eval(KernelSpec::gaussian(2.0), vec({0.0, 0.0}), vec({2.0, 2.0})), std::exp(-1.0), 1e-15);
}

TEST(Kernel, BoundsAndRange) {
    const auto k = KernelSpec::gaussian(0.7);
    EXPECT_EQ(bounds(k).lower, 0.0);
    EXPECT_EQ(bounds(k).upper, 1.0);
    EXPECT_EQ(bounds(k.as_squared()).lower, 0.0);
    EXPECT_EQ(bounds(k.as_squared()).upper, 1.0);
    EXPECT_EQ(bounds(k).range(), 1.0);
    EXPECT_EQ(bounds(KernelSpec::zero()).range(), 0.0);
}

TEST(Kernel, InvalidInputs) {
    EXPECT_THROW(KernelSpec::gaussian(0.0), ConfigError);
    EXPECT_THROW(KernelSpec::gaussian(-1.0), ConfigError);
    EXPECT_THROW(eval(KernelSpec::gaussian(1.0), vec({0.0}), vec({0.0, 1.0})), ConfigError);
}

TEST(Kernel, ZeroKernelIsIdenticallyZero) {
    EXPECT_EQ(eval(KernelSpec::zero(), vec({0.0}), vec({0.0})), 0.0);
    EXPECT_EQ(eval(KernelSpec::zero(), vec({0.0}), vec({5.0})), 0.0);
}

TEST(KernelProperty, SymmetryMonotonicityAndSquaring) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 2.0);
    std::uniform_real_distribution<double> bw(0.2, 5.0);
    for (int trial = 0; trial < 500; ++trial) {
        const auto k = KernelSpec::gaussian(bw(rng));
        Sample x(4), y(4);
        for (int i = 0; i < 4; ++i) {
            x[i] = n(rng);
            y[i] = n(rng);
        }
        const double v = eval(k, x, y);
        EXPECT_EQ(v, eval(k, y, x));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        const double sq = eval(k.as_squared(), x, y);
        EXPECT_LE(std::abs(sq - v * v), 1e-15 * std::max(sq, 1e-300));
        const Sample z = x + 1.5 * (y - x);
        EXPECT_LE(eval(k, x, z), v);
        EXPECT_NEAR(v, testing_support::gauss(x, y, k.bandwidth), 1e-15);
    }
}

TEST(KernelProperty, GramMatrixIsPsd) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 1.0);
    for (bool squared : {false, true}) {
        for (int trial = 0; trial < 20; ++trial) {
            auto k = KernelSpec::gaussian(0.5 + trial * 0.1);
            if (squared) k = k.as_squared();
            std::vector<Sample> xs(30, Sample(3));
            for (auto& x : xs)
                for (int i = 0; i < 3; ++i) x[i] = n(rng);
            Eigen::MatrixXd G(30, 30);
            for (int a = 0; a < 30; ++a)
                for (int b = 0; b < 30; ++b) G(a, b) = eval(k, xs[a], xs[b]);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
            EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-9);
        }
    }
}
