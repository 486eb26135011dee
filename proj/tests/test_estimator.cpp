#include <gtest/gtest.h>

#include <random>

#include "mixucb/estimator.hpp"
#include "support.hpp"

using namespace mixucb;
using testing_support::gauss;
using testing_support::vec;

namespace {

// Pair and linear sums recomputed from scratch.
struct BruteForce {
    Eigen::MatrixXd S;
    Eigen::VectorXd F;
};

BruteForce recompute(const EmpiricalState& st) {
    const auto m = static_cast<Eigen::Index>(st.arms());
    BruteForce b{Eigen::MatrixXd::Zero(m, m), Eigen::VectorXd::Zero(m)};
    for (Eigen::Index i = 0; i < m; ++i) {
        for (const auto& x : st.samples(i)) b.F[i] += st.loss().f(x);
        for (Eigen::Index j = 0; j < m; ++j)
            for (const auto& x : st.samples(i))
                for (const auto& y : st.samples(j)) b.S(i, j) += st.loss().kappa(x, y);
    }
    return b;
}

Sample random_sample(std::mt19937_64& rng, int d, double shift) {
    std::normal_distribution<double> n(shift, 1.0);
    Sample x(d);
    for (int k = 0; k < d; ++k) x[k] = n(rng);
    return x;
}

}  // namespace

TEST(Estimator, FirstSampleAndPairExpansion) {
    EmpiricalState st(rke_spec(KernelSpec::gaussian(1.0)), 2);
    const auto x = vec({0.0});
    const auto y = vec({1.0});
    st.add_sample(0, x);
    EXPECT_EQ(st.pair_sum(0, 0), 1.0);
    st.add_sample(0, y);
    const double kxy = gauss(x, y, 1.0, true);
    EXPECT_NEAR(st.kernel_matrix()(0, 0), (1.0 + 2.0 * kxy + 1.0) / 4.0, 1e-15);
    EXPECT_EQ(st.total(), 2u);
    EXPECT_EQ(st.count(0), 2u);
    EXPECT_EQ(st.count(1), 0u);
}

TEST(Estimator, IncrementalMatchesBruteForce) {
    const auto ref = std::make_shared<ReferencePool>(std::vector<Sample>{vec({0, 0, 0}), vec({1, 1, 1}), vec({2, 0, 1})});
    const auto spec = mmd_spec(KernelSpec::gaussian(1.5), ref);
    EmpiricalState st(spec, 3);
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> arm(0, 2);
    for (int k = 0; k < 50; ++k) {
        const int i = arm(rng);
        st.add_sample(static_cast<std::size_t>(i), random_sample(rng, 3, i));
    }
    const auto b = recompute(st);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(st.linear_sum(i), b.F[static_cast<Eigen::Index>(i)], 1e-9);
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(st.pair_sum(i, j), b.S(i, j), 1e-9);
    }
}

TEST(Estimator, SampleLossExamples) {
    const auto spec = rke_spec(KernelSpec::gaussian(1.0));
    EmpiricalState st(spec, 3);
    const auto x = vec({0.5, 0.5});
    for (std::size_t i = 0; i < 3; ++i) st.add_sample(i, x);
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial)
        EXPECT_NEAR(st.sample_loss(testing_support::random_simplex(3, rng)), 1.0, 1e-15);

    EmpiricalState two(spec, 2);
    const auto a = vec({0.0});
    const auto b = vec({0.7});
    two.add_sample(0, a);
    two.add_sample(1, b);
    const double c = gauss(a, b, 1.0, true);
    MixtureWeights half(2);
    half << 0.5, 0.5;
    EXPECT_NEAR(two.sample_loss(half), 0.5 + 0.5 * c, 1e-15);
    EXPECT_NEAR(two.sample_loss(basis_vector(2, 1)), two.kernel_matrix()(1, 1) + two.linear_vector()[1], 1e-15);
}

TEST(Estimator, ZeroWeightArmsMayBeEmpty) {
    EmpiricalState st(rke_spec(KernelSpec::gaussian(1.0)), 3);
    st.add_sample(0, vec({0.0}));
    st.add_sample(0, vec({0.3}));
    EXPECT_NO_THROW(st.sample_loss(basis_vector(3, 0)));
    MixtureWeights a(3);
    a << 0.5, 0.5, 0.0;
    EXPECT_THROW(st.sample_loss(a), ConfigError);
    MixtureWeights bad(3);
    bad << 0.5, 0.2, 0.2;
    EXPECT_THROW(st.sample_loss(bad), ConfigError);
}

TEST(Estimator, DimensionMismatchRejected) {
    EmpiricalState st(rke_spec(KernelSpec::gaussian(1.0)), 2);
    st.add_sample(0, vec({0.0, 1.0}));
    EXPECT_THROW(st.add_sample(1, vec({0.0})), ConfigError);
    EXPECT_THROW(st.add_sample(2, vec({0.0, 1.0})), ConfigError);
}

TEST(Estimator, ConfidenceVectorT) {
    ConfidenceParams p{4.0, 3.0, 1.0};
    const double expected = 3.0 * std::sqrt(4.0 * std::log(100.0) / 50.0) + 1.0 / 25.0;
    EXPECT_NEAR(expected, 1.8609, 1e-4);
    const auto eps = confidence_radius({25, 25, 25, 25}, 4.0 * std::log(100.0), 3.0, 1.0);
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(eps[i], expected, 1e-15);

    EmpiricalState st(rke_spec(KernelSpec::gaussian(1.0)), 4);
    for (int k = 0; k < 25; ++k)
        for (std::size_t i = 0; i < 4; ++i) st.add_sample(i, vec({static_cast<double>(i)}));
    const auto from_state = confidence_vector_t(st, p);
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(from_state[i], expected, 1e-15);

    // quadrupling n halves the first term
    const auto eps4 = confidence_radius({100}, 4.0 * std::log(100.0), 3.0, 0.0);
    const auto eps1 = confidence_radius({25}, 4.0 * std::log(100.0), 3.0, 0.0);
    EXPECT_NEAR(eps4[0], eps1[0] / 2.0, 1e-15);

    ConfidenceParams zero{4.0, 0.0, 0.0};
    EXPECT_EQ(confidence_vector_t(st, zero).norm(), 0.0);
}

TEST(Estimator, ConfidenceVectorPreconditions) {
    EmpiricalState st(rke_spec(KernelSpec::gaussian(1.0)), 2);
    st.add_sample(0, vec({0.0}));
    EXPECT_THROW(confidence_vector_t(st, ConfidenceParams{}), ConfigError);
    st.add_sample(0, vec({0.0}));
    EXPECT_THROW(confidence_vector_t(st, ConfidenceParams{}), ConfigError);
    st.add_sample(1, vec({0.0}));
    EXPECT_NO_THROW(confidence_vector_t(st, ConfidenceParams{}));
    EXPECT_THROW(confidence_vector_t(st, ConfidenceParams{1.0, 2.0, 1.0}), ConfigError);
}

TEST(Estimator, ConfidenceVectorDelta) {
    const auto spec = rke_spec(KernelSpec::gaussian(1.0));
    const auto eps = confidence_vector_delta(std::vector<std::size_t>{50, 50, 50}, 0.05, spec);
    const double expected = 2.0 * std::sqrt(std::log(20.0) / 100.0) + 0.02;
    EXPECT_NEAR(expected, 0.3661, 1e-4);
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(eps[i], expected, 1e-15);
    const auto near_one = confidence_vector_delta(std::vector<std::size_t>{10}, 1.0 - 1e-12, spec);
    EXPECT_NEAR(near_one[0], 0.1, 1e-5);
    EXPECT_THROW(confidence_vector_delta(std::vector<std::size_t>{10}, 1.0, spec), ConfigError);
    EXPECT_THROW(confidence_vector_delta(std::vector<std::size_t>{10}, 0.0, spec), ConfigError);

    const auto uni = uniform_confidence_vector({10, 20}, 0.05, 100, spec);
    const double log_term = std::log(4.0 * 10000.0 / 0.1);
    EXPECT_NEAR(uni[0], 2.0 * std::sqrt(log_term / 20.0) + 0.1, 1e-14);
    EXPECT_NEAR(uni[1], 2.0 * std::sqrt(log_term / 40.0) + 0.05, 1e-14);
}

TEST(Estimator, ProportionVector) {
    EmpiricalState st(rke_spec(KernelSpec::gaussian(1.0)), 2);
    EXPECT_THROW(st.proportion_vector(), ConfigError);
    for (int k = 0; k < 3; ++k) st.add_sample(0, vec({0.0}));
    st.add_sample(1, vec({1.0}));
    EXPECT_EQ(st.proportion_vector()[0], 0.75);
    EXPECT_EQ(st.proportion_vector()[1], 0.25);

    EmpiricalState rr(rke_spec(KernelSpec::gaussian(1.0)), 4);
    for (std::size_t i = 0; i < 4; ++i) rr.add_sample(i, vec({0.0}));
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(rr.proportion_vector()[i], 0.25);
}

TEST(Estimator, EmpiricalLossIsSampleLossAtProportions) {
    const auto spec = rke_spec(KernelSpec::gaussian(1.0));
    EmpiricalState st(spec, 3);
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> arm(0, 2);
    std::vector<Sample> all;
    for (int k = 0; k < 60; ++k) {
        const int i = arm(rng);
        all.push_back(random_sample(rng, 2, 2.0 * i));
        st.add_sample(static_cast<std::size_t>(i), all.back());
    }
    double direct = 0.0;
    for (const auto& x : all)
        for (const auto& y : all) direct += spec.kappa(x, y);
    direct /= 3600.0;
    EXPECT_NEAR(st.empirical_loss(), direct, 1e-12);
    EXPECT_NEAR(st.sample_loss(st.proportion_vector()), direct, 1e-12);
}

TEST(EstimatorProperty, InvariantsUnderRandomInterleavings) {
    const auto spec = rke_spec(KernelSpec::gaussian(0.8));
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        EmpiricalState st(spec, 4);
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<int> arm(0, 3);
        for (std::size_t k = 1; k <= 120; ++k) {
            const int i = arm(rng);
            st.add_sample(static_cast<std::size_t>(i), random_sample(rng, 3, i));
            std::size_t sum = 0;
            for (auto n : st.counts()) sum += n;
            EXPECT_EQ(sum, k);
            EXPECT_EQ(st.total(), k);
        }
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                EXPECT_EQ(st.pair_sum(i, j), st.pair_sum(j, i));
                const double nn = static_cast<double>(st.count(i) * st.count(j));
                EXPECT_GE(st.pair_sum(i, j), spec.kappa0 * nn - 1e-9);
                EXPECT_LE(st.pair_sum(i, j), spec.kappa1 * nn + 1e-9);
            }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(st.kernel_matrix());
        EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-9);

        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int trial = 0; trial < 30; ++trial) {
            const auto a = testing_support::random_simplex(4, rng);
            const auto b = testing_support::random_simplex(4, rng);
            MixtureWeights mid = 0.5 * (a + b);
            mid /= mid.sum();
            const double la = st.sample_loss(a);
            EXPECT_LE(st.sample_loss(mid), 0.5 * (la + st.sample_loss(b)) + 1e-9);
            EXPECT_GE(la, spec.kappa0 + spec.f0 - 1e-12);
            EXPECT_LE(la, spec.kappa1 + spec.f1 + 1e-12);
        }
    }
}
