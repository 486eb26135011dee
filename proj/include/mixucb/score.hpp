#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mixucb/arms.hpp"
#include "mixucb/error.hpp"
#include "mixucb/kernel.hpp"
#include "mixucb/simplex_opt.hpp"

namespace mixucb {

// Samples from the reference distribution Q.
class ReferencePool {
public:
    explicit ReferencePool(std::vector<Sample> samples) : samples_(std::move(samples)) {
        if (samples_.empty()) throw ConfigError("reference pool is empty");
        const auto d = samples_.front().size();
        for (const auto& y : samples_)
            if (y.size() != d || !is_finite(y)) throw ConfigError("reference pool rows must be finite and of equal dimension");
    }

    const std::vector<Sample>& samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    Eigen::Index dimension() const { return samples_.front().size(); }

    // Squared distance from each point to its k-th nearest other point (duplicates count).
    std::vector<double> knn_radii_squared(int k_nn) const {
        if (k_nn < 1) throw ConfigError("k_nn must be positive");
        if (samples_.size() <= static_cast<std::size_t>(k_nn))
            throw ConfigError("reference pool too small for k_nn = " + std::to_string(k_nn));
        std::vector<double> radii(samples_.size());
        std::vector<double> dist(samples_.size() - 1);
        for (std::size_t a = 0; a < samples_.size(); ++a) {
            std::size_t w = 0;
            for (std::size_t b = 0; b < samples_.size(); ++b)
                if (b != a) dist[w++] = (samples_[a] - samples_[b]).squaredNorm();
            std::nth_element(dist.begin(), dist.begin() + (k_nn - 1), dist.end());
            radii[a] = dist[static_cast<std::size_t>(k_nn - 1)];
        }
        return radii;
    }

    // V-statistic E[k(Y,Y')] over the pool; the constant dropped from the MMD loss.
    double mean_kernel(const KernelSpec& kernel) const {
        double total = 0.0;
        for (std::size_t a = 0; a < samples_.size(); ++a) {
            total += eval(kernel, samples_[a], samples_[a]);
            for (std::size_t b = a + 1; b < samples_.size(); ++b) total += 2.0 * eval(kernel, samples_[a], samples_[b]);
        }
        const auto n = static_cast<double>(samples_.size());
        return total / (n * n);
    }

private:
    std::vector<Sample> samples_;
};

// One additive piece of the linear term f.
struct LinearComponent {
    enum class Kind { MmdReference, Precision, Density, Reward };

    Kind kind = Kind::Reward;
    double weight = 1.0;
    std::shared_ptr<const ReferencePool> pool;
    KernelSpec kernel;             // MmdReference
    int k_nn = 0;                  // Precision, Density
    std::vector<double> radii2;    // Precision, Density
    Eigen::Index coordinate = 0;   // Reward

    double eval(const Sample& x) const {
        switch (kind) {
            case Kind::MmdReference: {
                double total = 0.0;
                for (const auto& y : pool->samples()) total += mixucb::eval(kernel, x, y);
                return -2.0 * weight * total / static_cast<double>(pool->size());
            }
            case Kind::Precision: {
                check_dimension(x);
                const auto& ys = pool->samples();
                for (std::size_t a = 0; a < ys.size(); ++a)
                    if ((x - ys[a]).squaredNorm() <= radii2[a]) return -weight;
                return 0.0;
            }
            case Kind::Density: {
                check_dimension(x);
                const auto& ys = pool->samples();
                std::size_t count = 0;
                for (std::size_t a = 0; a < ys.size(); ++a)
                    if ((x - ys[a]).squaredNorm() <= radii2[a]) ++count;
                return -weight * static_cast<double>(count) / static_cast<double>(k_nn);
            }
            case Kind::Reward:
                if (coordinate >= x.size()) throw ConfigError("reward term: coordinate out of range");
                return -weight * std::clamp(x[coordinate], 0.0, 1.0);
        }
        return 0.0;
    }

    // (f0, f1) for this component.
    std::pair<double, double> bounds() const {
        switch (kind) {
            case Kind::MmdReference: return {-2.0 * weight, 0.0};
            case Kind::Precision: return {-weight, 0.0};
            case Kind::Density:
                return {-weight * static_cast<double>(pool->size()) / static_cast<double>(k_nn), 0.0};
            case Kind::Reward: return {-weight, 0.0};
        }
        return {0.0, 0.0};
    }

private:
    void check_dimension(const Sample& x) const {
        if (x.size() != pool->dimension()) throw ConfigError("linear term: dimension mismatch");
    }
};

// f in the quadratic loss; a sum of components, empty meaning identically zero.
struct LinearTerm {
    std::vector<LinearComponent> parts;

    bool is_zero() const { return parts.empty(); }

    std::string kind() const {
        if (parts.empty()) return "zero";
        if (parts.size() > 1) return "weighted-sum";
        switch (parts.front().kind) {
            case LinearComponent::Kind::MmdReference: return "mmd-reference";
            case LinearComponent::Kind::Precision: return "precision";
            case LinearComponent::Kind::Density: return "density";
            case LinearComponent::Kind::Reward: return "reward";
        }
        return "zero";
    }

    double eval(const Sample& x) const {
        double total = 0.0;
        for (const auto& part : parts) total += part.eval(x);
        return total;
    }

    std::pair<double, double> bounds() const {
        double lo = 0.0;
        double hi = 0.0;
        for (const auto& part : parts) {
            const auto [a, b] = part.bounds();
            lo += a;
            hi += b;
        }
        return {lo, hi};
    }
};

// L(P) = E[kappa(X, X')] + E[f(X)] with bounded kappa and f.
struct LossSpec {
    enum class Metric { Rke, Mmd, Custom };

    KernelSpec quad;
    LinearTerm linear;
    double kappa0 = 0.0;
    double kappa1 = 1.0;
    double f0 = 0.0;
    double f1 = 0.0;
    Metric metric = Metric::Custom;
    // E[k(Y,Y')] over the reference pool, added back when reporting MMD values.
    std::optional<double> mmd_constant;

    double delta_kappa() const { return kappa1 - kappa0; }
    double delta_f() const { return f1 - f0; }
    double delta_L() const { return 2.0 * delta_kappa() + delta_f(); }

    double kappa(const Sample& x, const Sample& y) const { return eval(quad, x, y); }
    double f(const Sample& x) const { return linear.eval(x); }
};

inline LossSpec make_loss(KernelSpec quad, LinearTerm linear, LossSpec::Metric metric) {
    LossSpec spec;
    spec.quad = quad;
    const auto kb = bounds(quad);
    spec.kappa0 = kb.lower;
    spec.kappa1 = kb.upper;
    const auto [f0, f1] = linear.bounds();
    spec.f0 = f0;
    spec.f1 = f1;
    spec.linear = std::move(linear);
    spec.metric = metric;
    return spec;
}

// Diversity loss whose inverse is the RKE mode count.
inline LossSpec rke_spec(const KernelSpec& kernel) {
    return make_loss(kernel.as_squared(), LinearTerm{}, LossSpec::Metric::Rke);
}

// MMD (or KID over embeddings) to the reference distribution, without the constant E[k(Y,Y')].
inline LossSpec mmd_spec(const KernelSpec& kernel, std::shared_ptr<const ReferencePool> reference) {
    if (!reference || reference->size() == 0) throw ConfigError("mmd: empty reference pool");
    LinearComponent part;
    part.kind = LinearComponent::Kind::MmdReference;
    part.weight = 1.0;
    part.pool = reference;
    part.kernel = kernel;
    LossSpec spec = make_loss(kernel, LinearTerm{{part}}, LossSpec::Metric::Mmd);
    spec.mmd_constant = reference->mean_kernel(kernel);
    return spec;
}

namespace detail {
inline LinearTerm knn_term(LinearComponent::Kind kind, std::shared_ptr<const ReferencePool> reference, int k_nn,
                           double lambda) {
    if (!reference) throw ConfigError("quality term: missing reference pool");
    if (!(lambda >= 0.0)) throw ConfigError("quality term: weight must be >= 0");
    LinearComponent part;
    part.kind = kind;
    part.weight = lambda;
    part.k_nn = k_nn;
    part.radii2 = reference->knn_radii_squared(k_nn);
    part.pool = std::move(reference);
    return LinearTerm{{std::move(part)}};
}
}  // namespace detail

// f(x) = -lambda if x lies in any reference k-NN ball, else 0.
inline LinearTerm precision_term(std::shared_ptr<const ReferencePool> reference, int k_nn, double lambda) {
    return detail::knn_term(LinearComponent::Kind::Precision, std::move(reference), k_nn, lambda);
}

// f(x) = -(lambda / k_nn) * number of reference k-NN balls containing x.
inline LinearTerm density_term(std::shared_ptr<const ReferencePool> reference, int k_nn, double lambda) {
    return detail::knn_term(LinearComponent::Kind::Density, std::move(reference), k_nn, lambda);
}

// f(x) = -weight * clamp(x[coordinate], 0, 1): a bounded negative reward, the linear bandit case.
inline LinearTerm reward_term(Eigen::Index coordinate, double weight = 1.0) {
    LinearComponent part;
    part.kind = LinearComponent::Kind::Reward;
    part.weight = weight;
    part.coordinate = coordinate;
    return LinearTerm{{part}};
}

inline LossSpec combine(const LossSpec& quad_source, const LinearTerm& extra) {
    LinearTerm linear = quad_source.linear;
    linear.parts.insert(linear.parts.end(), extra.parts.begin(), extra.parts.end());
    LossSpec out = make_loss(quad_source.quad, std::move(linear), quad_source.metric);
    out.kappa0 = quad_source.kappa0;
    out.kappa1 = quad_source.kappa1;
    out.mmd_constant = quad_source.mmd_constant;
    return out;
}

inline double rke_mode_count(double loss_value) {
    if (!(loss_value > 0.0)) throw ConfigError("mode count needs a positive loss value");
    return 1.0 / loss_value;
}

// Monte Carlo estimates of K_ij = E[kappa(X_i, X_j')] and f_i = E[f(X_i)].
struct PopulationMatrices {
    Eigen::MatrixXd K;
    Eigen::VectorXd f;
};

// Arms with include[i] == false are skipped and left at zero. Diagonal entries use distinct pairs.
inline PopulationMatrices population_matrices(const LossSpec& spec, const std::vector<SourceSpec>& sources,
                                              std::size_t n_mc, RngSeed seed, const std::vector<bool>& include = {}) {
    if (n_mc < 2) throw ConfigError("population estimate needs at least 2 samples per arm");
    const auto m = static_cast<Eigen::Index>(sources.size());
    std::vector<std::vector<Sample>> draws(sources.size());
    for (std::size_t i = 0; i < sources.size(); ++i) {
        if (!include.empty() && !include[i]) continue;
        auto source = build_source(sources[i], derive_seed(seed, kArmStreamBase + i));
        draws[i] = source.draw_batch(n_mc);
    }
    PopulationMatrices out{Eigen::MatrixXd::Zero(m, m), Eigen::VectorXd::Zero(m)};
    const double n = static_cast<double>(n_mc);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& xi = draws[static_cast<std::size_t>(i)];
        if (xi.empty()) continue;
        double fsum = 0.0;
        for (const auto& x : xi) fsum += spec.f(x);
        out.f[i] = fsum / n;
        double diag = 0.0;
        for (std::size_t a = 0; a < xi.size(); ++a)
            for (std::size_t b = a + 1; b < xi.size(); ++b) diag += spec.kappa(xi[a], xi[b]);
        out.K(i, i) = 2.0 * diag / (n * (n - 1.0));
        for (Eigen::Index j = i + 1; j < m; ++j) {
            const auto& xj = draws[static_cast<std::size_t>(j)];
            if (xj.empty()) continue;
            double cross = 0.0;
            for (const auto& x : xi)
                for (const auto& y : xj) cross += spec.kappa(x, y);
            out.K(i, j) = out.K(j, i) = cross / (n * n);
        }
    }
    return out;
}

inline double quadratic_loss(const PopulationMatrices& pm, const Eigen::VectorXd& alpha) {
    return alpha.dot(pm.K * alpha) + pm.f.dot(alpha);
}

// Monte Carlo estimate of L(alpha) = alpha' K alpha + f' alpha.
inline double population_loss(const LossSpec& spec, const std::vector<SourceSpec>& sources, const MixtureWeights& alpha,
                              std::size_t n_mc, RngSeed seed) {
    require_probability_vector(alpha, static_cast<Eigen::Index>(sources.size()));
    std::vector<bool> include(sources.size());
    for (std::size_t i = 0; i < sources.size(); ++i) include[i] = alpha[static_cast<Eigen::Index>(i)] > 0.0;
    return quadratic_loss(population_matrices(spec, sources, n_mc, seed, include), alpha);
}

struct OracleEstimate {
    MixtureWeights alpha;
    double loss = 0.0;
    PopulationMatrices matrices;
};

// Minimizer of the Monte Carlo population loss over the simplex.
inline OracleEstimate optimal_mixture(const LossSpec& spec, const std::vector<SourceSpec>& sources, std::size_t n_mc,
                                      RngSeed seed, double tol = 1e-10) {
    OracleEstimate out;
    out.matrices = population_matrices(spec, sources, n_mc, seed);
    QuadraticProgram qp(out.matrices.K, out.matrices.f);
    out.alpha = minimize(qp, std::nullopt, SolverOptions{tol});
    out.loss = quadratic_loss(out.matrices, out.alpha);
    return out;
}

}  // namespace mixucb
