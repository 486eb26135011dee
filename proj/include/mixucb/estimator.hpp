#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mixucb/arms.hpp"
#include "mixucb/error.hpp"
#include "mixucb/score.hpp"
#include "mixucb/simplex_opt.hpp"

namespace mixucb {

// Optimism parameters of the confidence radius. beta > 1 is required; beta >= 4 for the regret guarantee.
struct ConfidenceParams {
    double beta = 4.0;
    double delta_L = 2.0;
    double delta_kappa = 1.0;

    static ConfidenceParams from(const LossSpec& spec, double beta = 4.0) {
        ConfidenceParams p{beta, spec.delta_L(), spec.delta_kappa()};
        p.validate();
        return p;
    }

    void validate() const {
        if (!(beta > 1.0)) throw ConfigError("beta must be > 1");
        if (!(delta_L >= 0.0) || !(delta_kappa >= 0.0)) throw ConfigError("confidence ranges must be >= 0");
    }
};

namespace detail {
// Neumaier compensated accumulator.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;

    void add(double v) {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v))
            carry += (sum - t) + v;
        else
            carry += (v - t) + sum;
        sum = t;
    }
    double value() const { return sum + carry; }
};
}  // namespace detail

// Per-arm samples with incrementally maintained pair sums S_ij (self-pairs included) and linear sums F_i.
class EmpiricalState {
public:
    EmpiricalState(LossSpec spec, std::size_t arms)
        : spec_(std::move(spec)), samples_(arms), counts_(arms, 0), pair_(arms * arms), linear_(arms) {
        if (arms == 0) throw ConfigError("at least one arm required");
    }

    std::size_t arms() const { return counts_.size(); }
    std::size_t total() const { return total_; }
    std::size_t count(std::size_t i) const { return counts_.at(i); }
    const std::vector<std::size_t>& counts() const { return counts_; }
    const std::vector<Sample>& samples(std::size_t i) const { return samples_.at(i); }
    const LossSpec& loss() const { return spec_; }

    // Cost linear in the number of samples already held.
    void add_sample(std::size_t i, const Sample& x) {
        if (i >= arms()) throw ConfigError("arm index out of range");
        if (!is_finite(x)) throw ConfigError("sample has non-finite coordinates");
        if (dim_ < 0) dim_ = x.size();
        if (x.size() != dim_)
            throw ConfigError("sample dimension mismatch (expected " + std::to_string(dim_) + ", got " +
                              std::to_string(x.size()) + ")");
        const std::size_t m = arms();
        std::vector<double> row(m, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            detail::CompensatedSum acc;
            for (const auto& y : samples_[j]) acc.add(spec_.kappa(x, y));
            row[j] = acc.value();
        }
        const double self = spec_.kappa(x, x);
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            pair_[i * m + j].add(row[j]);
            pair_[j * m + i].add(row[j]);
        }
        pair_[i * m + i].add(2.0 * row[i]);
        pair_[i * m + i].add(self);
        linear_[i].add(spec_.f(x));
        samples_[i].push_back(x);
        ++counts_[i];
        ++total_;
    }

    double pair_sum(std::size_t i, std::size_t j) const { return pair_.at(i * arms() + j).value(); }
    double linear_sum(std::size_t i) const { return linear_.at(i).value(); }

    // Entries involving an arm with no samples are 0.
    Eigen::MatrixXd kernel_matrix() const {
        const auto m = static_cast<Eigen::Index>(arms());
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m, m);
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < m; ++j) {
                const auto ni = counts_[static_cast<std::size_t>(i)];
                const auto nj = counts_[static_cast<std::size_t>(j)];
                if (ni == 0 || nj == 0) continue;
                K(i, j) = pair_sum(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) /
                          (static_cast<double>(ni) * static_cast<double>(nj));
            }
        return K;
    }

    Eigen::VectorXd linear_vector() const {
        const auto m = static_cast<Eigen::Index>(arms());
        Eigen::VectorXd f = Eigen::VectorXd::Zero(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto ni = counts_[static_cast<std::size_t>(i)];
            if (ni > 0) f[i] = linear_sum(static_cast<std::size_t>(i)) / static_cast<double>(ni);
        }
        return f;
    }

    // Plug-in loss of the empirical mixture; arms with alpha_i = 0 contribute nothing.
    double sample_loss(const MixtureWeights& alpha) const {
        require_probability_vector(alpha, static_cast<Eigen::Index>(arms()));
        for (std::size_t i = 0; i < arms(); ++i)
            if (alpha[static_cast<Eigen::Index>(i)] > 0.0 && counts_[i] == 0)
                throw ConfigError("sample loss: arm " + std::to_string(i + 1) + " has positive weight but no samples");
        return alpha.dot(kernel_matrix() * alpha) + linear_vector().dot(alpha);
    }

    // L of the empirical distribution of every sample gathered so far, i.e. sample_loss at n / t.
    double empirical_loss() const {
        if (total_ == 0) throw ConfigError("empirical loss of an empty state");
        detail::CompensatedSum kappa;
        detail::CompensatedSum lin;
        for (std::size_t i = 0; i < arms(); ++i) {
            lin.add(linear_sum(i));
            for (std::size_t j = 0; j < arms(); ++j) kappa.add(pair_sum(i, j));
        }
        const double t = static_cast<double>(total_);
        return kappa.value() / (t * t) + lin.value() / t;
    }

    MixtureWeights proportion_vector() const {
        if (total_ == 0) throw ConfigError("proportion vector of an empty state");
        const auto m = static_cast<Eigen::Index>(arms());
        MixtureWeights p(m);
        for (Eigen::Index i = 0; i < m; ++i)
            p[i] = static_cast<double>(counts_[static_cast<std::size_t>(i)]) / static_cast<double>(total_);
        return p;
    }

    Eigen::VectorXd count_vector() const {
        const auto m = static_cast<Eigen::Index>(arms());
        Eigen::VectorXd n(m);
        for (Eigen::Index i = 0; i < m; ++i) n[i] = static_cast<double>(counts_[static_cast<std::size_t>(i)]);
        return n;
    }

private:
    LossSpec spec_;
    Eigen::Index dim_ = -1;
    std::vector<std::vector<Sample>> samples_;
    std::vector<std::size_t> counts_;
    std::size_t total_ = 0;
    std::vector<detail::CompensatedSum> pair_;
    std::vector<detail::CompensatedSum> linear_;
};

// eps_i = Delta_L sqrt(beta ln t / (2 n_i)) + Delta_kappa / n_i at t = total samples.
inline Eigen::VectorXd confidence_vector_t(const EmpiricalState& state, const ConfidenceParams& params) {
    params.validate();
    if (state.total() < 2) throw ConfigError("confidence radius needs t >= 2");
    const auto m = static_cast<Eigen::Index>(state.arms());
    const double log_t = std::log(static_cast<double>(state.total()));
    Eigen::VectorXd eps(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto n = state.count(static_cast<std::size_t>(i));
        if (n == 0) throw ConfigError("confidence radius needs every arm sampled at least once");
        const double ni = static_cast<double>(n);
        eps[i] = params.delta_L * std::sqrt(params.beta * log_t / (2.0 * ni)) + params.delta_kappa / ni;
    }
    return eps;
}

inline Eigen::VectorXd confidence_radius(const std::vector<std::size_t>& counts, double log_term, double delta_L,
                                         double delta_kappa) {
    const auto m = static_cast<Eigen::Index>(counts.size());
    Eigen::VectorXd eps(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto n = counts[static_cast<std::size_t>(i)];
        if (n == 0) throw ConfigError("confidence radius needs every arm sampled at least once");
        const double ni = static_cast<double>(n);
        eps[i] = delta_L * std::sqrt(log_term / (2.0 * ni)) + delta_kappa / ni;
    }
    return eps;
}

// Fixed-alpha deviation radius at confidence level delta: holds each side with probability >= 1 - delta.
inline Eigen::VectorXd confidence_vector_delta(const std::vector<std::size_t>& counts, double delta,
                                               const LossSpec& spec) {
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
    return confidence_radius(counts, std::log(1.0 / delta), spec.delta_L(), spec.delta_kappa());
}

inline Eigen::VectorXd confidence_vector_delta(const EmpiricalState& state, double delta, const LossSpec& spec) {
    return confidence_vector_delta(state.counts(), delta, spec);
}

// Radius valid simultaneously for all alpha and all counts n_i <= horizon.
inline Eigen::VectorXd uniform_confidence_vector(const std::vector<std::size_t>& counts, double delta,
                                                 std::size_t horizon, const LossSpec& spec) {
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
    const double m = static_cast<double>(counts.size());
    const double T = static_cast<double>(horizon);
    return confidence_radius(counts, std::log(m * m * T * T / (2.0 * delta)), spec.delta_L(), spec.delta_kappa());
}

}  // namespace mixucb
