#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixucb/error.hpp"

namespace mixucb {

// A probability vector over arms.
using MixtureWeights = Eigen::VectorXd;

inline bool is_probability_vector(const Eigen::VectorXd& alpha, double tol = 1e-9) {
    if (alpha.size() == 0 || !alpha.allFinite()) return false;
    if ((alpha.array() < 0.0).any()) return false;
    return std::abs(alpha.sum() - 1.0) <= tol;
}

inline void require_probability_vector(const Eigen::VectorXd& alpha, Eigen::Index m, double tol = 1e-9) {
    if (alpha.size() != m) throw ConfigError("mixture weights: expected " + std::to_string(m) + " entries");
    if (!is_probability_vector(alpha, tol)) throw ConfigError("mixture weights: not a probability vector");
}

inline MixtureWeights basis_vector(Eigen::Index m, Eigen::Index i) {
    MixtureWeights e = MixtureWeights::Zero(m);
    e[i] = 1.0;
    return e;
}

// minimize alpha' Q alpha + c' alpha over probability vectors supported on `support`.
struct QuadraticProgram {
    Eigen::MatrixXd Q;
    Eigen::VectorXd c;
    std::vector<Eigen::Index> support;

    QuadraticProgram() = default;
    QuadraticProgram(Eigen::MatrixXd q, Eigen::VectorXd lin) : Q(std::move(q)), c(std::move(lin)) {
        support.resize(static_cast<std::size_t>(c.size()));
        for (Eigen::Index i = 0; i < c.size(); ++i) support[static_cast<std::size_t>(i)] = i;
    }
    QuadraticProgram(Eigen::MatrixXd q, Eigen::VectorXd lin, std::vector<Eigen::Index> supp)
        : Q(std::move(q)), c(std::move(lin)), support(std::move(supp)) {}

    Eigen::Index dimension() const { return c.size(); }

    double objective(const Eigen::VectorXd& alpha) const { return alpha.dot(Q * alpha) + c.dot(alpha); }
    Eigen::VectorXd gradient(const Eigen::VectorXd& alpha) const { return 2.0 * (Q * alpha) + c; }
};

inline void validate(const QuadraticProgram& qp) {
    const Eigen::Index m = qp.c.size();
    if (m == 0) throw ConfigError("quadratic program: empty dimension");
    if (qp.Q.rows() != m || qp.Q.cols() != m) throw ConfigError("quadratic program: Q must be m x m");
    if (!qp.Q.allFinite() || !qp.c.allFinite()) throw ConfigError("quadratic program: non-finite entries");
    if (((qp.Q - qp.Q.transpose()).cwiseAbs().array() > 1e-12).any())
        throw ConfigError("quadratic program: Q is not symmetric");
    if (qp.support.empty()) throw ConfigError("quadratic program: empty support");
    std::vector<bool> seen(static_cast<std::size_t>(m), false);
    for (auto i : qp.support) {
        if (i < 0 || i >= m || seen[static_cast<std::size_t>(i)])
            throw ConfigError("quadratic program: invalid support index");
        seen[static_cast<std::size_t>(i)] = true;
    }
}

// Euclidean projection onto the probability simplex (sort and threshold).
inline MixtureWeights project_simplex(const Eigen::VectorXd& v) {
    const Eigen::Index m = v.size();
    std::vector<double> sorted(v.data(), v.data() + m);
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
        cumulative += sorted[static_cast<std::size_t>(k)];
        const double candidate = (cumulative - 1.0) / static_cast<double>(k + 1);
        if (sorted[static_cast<std::size_t>(k)] - candidate > 0.0) theta = candidate;
    }
    return (v.array() - theta).cwiseMax(0.0).matrix();
}

// Norm of the projection of -grad onto the tangent cone of the simplex at alpha.
// Coordinates with alpha_i == 0 may only move upward.
inline double projected_gradient_norm(const Eigen::VectorXd& grad, const Eigen::VectorXd& alpha) {
    const Eigen::Index m = grad.size();
    auto direction = [&](double mu) {
        Eigen::VectorXd d(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double di = mu - grad[i];
            d[i] = alpha[i] > 0.0 ? di : std::max(0.0, di);
        }
        return d;
    };
    double lo = grad.minCoeff() - 1.0;
    double hi = grad.maxCoeff() + 1.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (direction(mid).sum() > 0.0)
            hi = mid;
        else
            lo = mid;
    }
    return direction(0.5 * (lo + hi)).norm();
}

struct SolverOptions {
    double tol = 1e-8;
    int max_iterations = 200000;
};

// Accelerated projected gradient with function-value restart. Stops when both the
// Frank-Wolfe duality gap and the gradient-mapping norm are below tol.
inline MixtureWeights minimize(const QuadraticProgram& qp, const std::optional<MixtureWeights>& warm_start = std::nullopt,
                               const SolverOptions& options = {}) {
    validate(qp);
    const Eigen::Index m = qp.dimension();
    const auto k = static_cast<Eigen::Index>(qp.support.size());
    MixtureWeights full = MixtureWeights::Zero(m);
    if (k == 1) {
        full[qp.support.front()] = 1.0;
        return full;
    }

    Eigen::MatrixXd Q(k, k);
    Eigen::VectorXd c(k);
    for (Eigen::Index a = 0; a < k; ++a) {
        c[a] = qp.c[qp.support[static_cast<std::size_t>(a)]];
        for (Eigen::Index b = 0; b < k; ++b)
            Q(a, b) = qp.Q(qp.support[static_cast<std::size_t>(a)], qp.support[static_cast<std::size_t>(b)]);
    }
    Q = 0.5 * (Q + Q.transpose()).eval();

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Q, Eigen::EigenvaluesOnly);
    const double lambda_max = eig.eigenvalues().maxCoeff();
    auto scatter = [&](const Eigen::VectorXd& x) {
        MixtureWeights out = MixtureWeights::Zero(m);
        for (Eigen::Index a = 0; a < k; ++a) out[qp.support[static_cast<std::size_t>(a)]] = x[a];
        return out;
    };
    if (lambda_max <= 1e-12) {
        Eigen::Index best = 0;
        for (Eigen::Index a = 1; a < k; ++a)
            if (c[a] < c[best]) best = a;
        Eigen::VectorXd x = Eigen::VectorXd::Zero(k);
        x[best] = 1.0;
        return scatter(x);
    }

    Eigen::VectorXd x(k);
    if (warm_start && warm_start->size() == m) {
        for (Eigen::Index a = 0; a < k; ++a) x[a] = (*warm_start)[qp.support[static_cast<std::size_t>(a)]];
        x = project_simplex(x);
    } else {
        x.setConstant(1.0 / static_cast<double>(k));
    }

    const double lipschitz = 2.0 * lambda_max;
    auto objective = [&](const Eigen::VectorXd& a) { return a.dot(Q * a) + c.dot(a); };
    auto converged = [&](const Eigen::VectorXd& a) {
        const Eigen::VectorXd g = 2.0 * (Q * a) + c;
        const double gap = g.dot(a) - g.minCoeff();
        const double mapping = lipschitz * (a - project_simplex(a - g / lipschitz)).norm();
        return gap <= options.tol && mapping <= options.tol;
    };

    Eigen::VectorXd y = x;
    double momentum = 1.0;
    double fx = objective(x);
    for (int it = 0; it < options.max_iterations; ++it) {
        if (converged(x)) break;
        const Eigen::VectorXd g = 2.0 * (Q * y) + c;
        Eigen::VectorXd next = project_simplex(y - g / lipschitz);
        const double fnext = objective(next);
        if (fnext > fx) {
            // restart from a plain projected gradient step at x
            momentum = 1.0;
            const Eigen::VectorXd gx = 2.0 * (Q * x) + c;
            next = project_simplex(x - gx / lipschitz);
            y = next;
            x = next;
            fx = objective(x);
            continue;
        }
        const double next_momentum = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
        y = next + ((momentum - 1.0) / next_momentum) * (next - x);
        momentum = next_momentum;
        x = next;
        fx = fnext;
    }
    return scatter(x);
}

// Exhaustive search over simplex points with denominator `resolution`; m <= 4.
// Iterates in lexicographic order and keeps strict improvements, so ties go to the lexicographically first.
inline MixtureWeights grid_oracle(const QuadraticProgram& qp, int resolution) {
    validate(qp);
    if (qp.dimension() > 4) throw ConfigError("grid oracle: at most 4 arms supported");
    if (resolution < 1) throw ConfigError("grid oracle: resolution must be positive");
    const Eigen::Index m = qp.dimension();
    std::vector<Eigen::Index> support = qp.support;
    std::sort(support.begin(), support.end());
    const auto k = support.size();

    MixtureWeights best;
    double best_value = std::numeric_limits<double>::infinity();
    std::vector<int> counts(k, 0);
    MixtureWeights alpha = MixtureWeights::Zero(m);

    std::function<void(std::size_t, int)> visit = [&](std::size_t pos, int left) {
        if (pos + 1 == k) {
            counts[pos] = left;
            for (std::size_t a = 0; a < k; ++a)
                alpha[support[a]] = static_cast<double>(counts[a]) / static_cast<double>(resolution);
            const double value = qp.objective(alpha);
            if (value < best_value) {
                best_value = value;
                best = alpha;
            }
            return;
        }
        for (int v = 0; v <= left; ++v) {
            counts[pos] = v;
            visit(pos + 1, left - v);
        }
    };
    visit(0, resolution);
    return best;
}

}  // namespace mixucb
