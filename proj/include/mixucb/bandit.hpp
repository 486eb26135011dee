#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mixucb/arms.hpp"
#include "mixucb/error.hpp"
#include "mixucb/estimator.hpp"
#include "mixucb/rng.hpp"
#include "mixucb/score.hpp"
#include "mixucb/simplex_opt.hpp"

namespace mixucb {

enum class PolicyKind {
    MixtureUcbCab,
    MixtureUcbOgd,
    SparseMixtureUcbCab,
    VanillaUcb,
    SuccessiveHalving,
    MixtureOracle,
    OneArmOracle,
};

inline std::string_view to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::MixtureUcbCab: return "mixture-ucb-cab";
        case PolicyKind::MixtureUcbOgd: return "mixture-ucb-ogd";
        case PolicyKind::SparseMixtureUcbCab: return "sparse-mixture-ucb-cab";
        case PolicyKind::VanillaUcb: return "vanilla-ucb";
        case PolicyKind::SuccessiveHalving: return "successive-halving";
        case PolicyKind::MixtureOracle: return "mixture-oracle";
        case PolicyKind::OneArmOracle: return "one-arm-oracle";
    }
    return "unknown";
}

inline PolicyKind parse_policy_kind(std::string_view text) {
    for (auto kind : {PolicyKind::MixtureUcbCab, PolicyKind::MixtureUcbOgd, PolicyKind::SparseMixtureUcbCab,
                      PolicyKind::VanillaUcb, PolicyKind::SuccessiveHalving, PolicyKind::MixtureOracle,
                      PolicyKind::OneArmOracle})
        if (to_string(kind) == text) return kind;
    throw ConfigError("unknown policy kind '" + std::string(text) + "'");
}

struct PolicyConfig {
    PolicyKind kind = PolicyKind::MixtureUcbCab;
    std::string name;  // label in exports; defaults to the kind

    double beta = 4.0;
    // Overrides of the theory values 2*Delta_kappa + Delta_f and kappa1 - kappa0.
    std::optional<double> delta_L;
    std::optional<double> delta_kappa;

    std::size_t batch = 1;   // samples per pull
    std::size_t stride = 1;  // CAB re-solves the program every `stride` decisions

    // sparse-mixture-ucb-cab
    double lambda = 0.0;
    bool allow_unsubscribe = true;
    std::optional<std::size_t> sparsity;  // fixed-sparsity target; lambda then grows from 0
    double lambda_growth = 1.05;
    double lambda_start = 1e-4;  // first nonzero lambda of the growth schedule

    std::optional<MixtureWeights> oracle_alpha;  // mixture-oracle
    std::size_t oracle_arm = 0;                  // one-arm-oracle, zero-based

    std::string label() const { return name.empty() ? std::string(to_string(kind)) : name; }

    bool needs_initialization() const {
        return kind == PolicyKind::MixtureUcbCab || kind == PolicyKind::MixtureUcbOgd ||
               kind == PolicyKind::SparseMixtureUcbCab || kind == PolicyKind::VanillaUcb;
    }

    ConfidenceParams confidence(const LossSpec& spec) const {
        ConfidenceParams p{beta, delta_L.value_or(spec.delta_L()), delta_kappa.value_or(spec.delta_kappa())};
        p.validate();
        return p;
    }

    void validate(std::size_t m) const {
        if (m == 0) throw ConfigError("at least one arm required");
        if (batch == 0) throw ConfigError("batch size must be >= 1");
        if (stride == 0) throw ConfigError("stride must be >= 1");
        if (!(beta > 1.0)) throw ConfigError("beta must be > 1");
        if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
        if (sparsity) {
            if (*sparsity < 1 || *sparsity > m) throw ConfigError("sparsity target must lie in [1, m]");
            if (!(lambda_growth > 1.0)) throw ConfigError("lambda growth factor must be > 1");
            if (!(lambda_start > 0.0)) throw ConfigError("lambda start must be > 0");
        }
        if (kind == PolicyKind::MixtureOracle) {
            if (!oracle_alpha) throw ConfigError("mixture-oracle needs alpha");
            require_probability_vector(*oracle_alpha, static_cast<Eigen::Index>(m));
        }
        if (kind == PolicyKind::OneArmOracle && oracle_arm >= m) throw ConfigError("one-arm-oracle arm out of range");
    }
};

struct RoundRecord {
    std::size_t t = 0;  // samples gathered after this pull
    std::size_t arm = 0;
    std::vector<std::size_t> counts;
    double loss = 0.0;  // loss of the empirical distribution of all samples so far
    std::optional<MixtureWeights> alpha;
    std::optional<std::vector<bool>> subscribed;
};

struct Trajectory {
    std::string policy;
    std::vector<RoundRecord> rounds;
    std::shared_ptr<const EmpiricalState> state;  // every gathered sample
    MixtureWeights final_proportion;
    double final_loss = 0.0;
    std::optional<std::vector<bool>> final_subscribed;
    double wall_seconds = 0.0;

    std::vector<std::size_t> arm_sequence() const {
        std::vector<std::size_t> arms;
        arms.reserve(rounds.size());
        for (const auto& r : rounds) arms.push_back(r.arm);
        return arms;
    }
};

// Draws i with probability alpha_i.
inline std::size_t sample_arm(const MixtureWeights& alpha, Engine& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(rng);
    double cumulative = 0.0;
    std::size_t last_positive = 0;
    for (Eigen::Index i = 0; i < alpha.size(); ++i) {
        if (alpha[i] <= 0.0) continue;
        cumulative += alpha[i];
        last_positive = static_cast<std::size_t>(i);
        if (u < cumulative) return last_positive;
    }
    return last_positive;
}

inline std::size_t argmin_lowest(const Eigen::VectorXd& v) {
    std::size_t best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v[i] < v[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
    return best;
}

struct CabDecision {
    std::size_t arm = 0;
    MixtureWeights alpha;
};

// Optimistic mixture argmin(L_hat(alpha) - eps' alpha), then a random arm drawn from it.
inline CabDecision cab_step(const EmpiricalState& state, const ConfidenceParams& params, Engine& policy_rng,
                            const std::optional<MixtureWeights>& warm_start = std::nullopt) {
    const Eigen::VectorXd eps = confidence_vector_t(state, params);
    const QuadraticProgram qp(state.kernel_matrix(), state.linear_vector() - eps);
    CabDecision d;
    d.alpha = minimize(qp, warm_start);
    d.arm = sample_arm(d.alpha, policy_rng);
    return d;
}

// Gradient of the optimistic loss at the proportion vector; steepest-descent arm, ties to lowest index.
inline Eigen::VectorXd ogd_gradient(const EmpiricalState& state, const ConfidenceParams& params) {
    const Eigen::VectorXd eps = confidence_vector_t(state, params);
    const double t = static_cast<double>(state.total());
    return ((2.0 / t) * (state.kernel_matrix() * state.count_vector()) + state.linear_vector()) - eps;
}

inline std::size_t ogd_step(const EmpiricalState& state, const ConfidenceParams& params) {
    return argmin_lowest(ogd_gradient(state, params));
}

// Single arm minimizing the lower confidence bound K_ii + f_i - eps_i.
inline std::size_t vanilla_ucb_step(const EmpiricalState& state, const ConfidenceParams& params) {
    if (state.arms() == 1) return 0;
    const Eigen::VectorXd eps = confidence_vector_t(state, params);
    const Eigen::VectorXd diag = state.kernel_matrix().diagonal();
    return argmin_lowest((diag + state.linear_vector()) - eps);
}

struct SparseDecision {
    std::size_t arm = 0;
    MixtureWeights alpha;
    std::vector<bool> subscribed;
    std::size_t removed = 0;
};

namespace detail {
inline std::vector<Eigen::Index> support_of(const std::vector<bool>& subscribed, std::optional<std::size_t> skip = {}) {
    std::vector<Eigen::Index> supp;
    for (std::size_t i = 0; i < subscribed.size(); ++i)
        if (subscribed[i] && (!skip || *skip != i)) supp.push_back(static_cast<Eigen::Index>(i));
    return supp;
}
}  // namespace detail

// Backward elimination over the subscribed set: drop the arm whose removal has the smallest
// upper-confidence cost C' whenever C' <= C (the lower-confidence cost with it), then sample from
// the optimistic mixture restricted to what is left. Never shrinks below max(1, min_size).
inline SparseDecision sparse_cab_step(const EmpiricalState& state, const ConfidenceParams& params, double lambda,
                                      std::vector<bool> subscribed, Engine& policy_rng,
                                      const std::optional<MixtureWeights>& warm_start = std::nullopt,
                                      std::size_t min_size = 1, bool allow_unsubscribe = true) {
    if (subscribed.size() != state.arms()) throw ConfigError("subscribed set size mismatch");
    const Eigen::VectorXd eps = confidence_vector_t(state, params);
    const Eigen::MatrixXd K = state.kernel_matrix();
    const Eigen::VectorXd f = state.linear_vector();
    const Eigen::VectorXd lower_c = f - eps;
    const Eigen::VectorXd upper_c = f + eps;

    SparseDecision d;
    std::optional<MixtureWeights> warm = warm_start;
    for (;;) {
        const auto supp = detail::support_of(subscribed);
        if (supp.empty()) throw ConfigError("subscribed set is empty");
        const auto size = static_cast<double>(supp.size());
        const QuadraticProgram lower(K, lower_c, supp);
        d.alpha = minimize(lower, warm);
        warm = d.alpha;
        const double cost = lower.objective(d.alpha) + lambda * size;
        if (!allow_unsubscribe || supp.size() < 2 || supp.size() <= std::max<std::size_t>(1, min_size)) break;

        double best_cost = std::numeric_limits<double>::infinity();
        std::size_t worst = 0;
        for (auto i : supp) {
            const QuadraticProgram upper(K, upper_c, detail::support_of(subscribed, static_cast<std::size_t>(i)));
            const double c = upper.objective(minimize(upper, d.alpha)) + lambda * (size - 1.0);
            if (c < best_cost) {
                best_cost = c;
                worst = static_cast<std::size_t>(i);
            }
        }
        if (best_cost > cost) break;
        subscribed[worst] = false;
        ++d.removed;
    }
    d.subscribed = std::move(subscribed);
    d.arm = sample_arm(d.alpha, policy_rng);
    return d;
}

// Upper bound on expected regret per round of the CAB policy for beta >= 4, m >= 2.
inline double regret_bound(double delta_L, double beta, std::size_t m, std::size_t T) {
    const double t = static_cast<double>(T);
    return 4.0 * delta_L * std::sqrt(beta * static_cast<double>(m) * std::log(t) / t);
}

namespace detail {

class RunContext {
public:
    RunContext(const PolicyConfig& policy, std::vector<SampleSource>& sources, const LossSpec& spec, RngSeed seed)
        : policy_(policy),
          sources_(sources),
          state_(std::make_shared<EmpiricalState>(spec, sources.size())),
          rng_(make_engine(derive_seed(seed, kPolicyStream))),
          start_(std::chrono::steady_clock::now()) {
        trajectory_.policy = policy.label();
    }

    EmpiricalState& state() { return *state_; }
    Engine& rng() { return rng_; }
    std::size_t total() const { return state_->total(); }

    void pull(std::size_t arm, std::optional<MixtureWeights> alpha = std::nullopt,
              std::optional<std::vector<bool>> subscribed = std::nullopt) {
        for (const auto& x : sources_[arm].draw_batch(policy_.batch)) state_->add_sample(arm, x);
        RoundRecord r;
        r.t = state_->total();
        r.arm = arm;
        r.counts = state_->counts();
        r.loss = state_->empirical_loss();
        r.alpha = std::move(alpha);
        r.subscribed = std::move(subscribed);
        trajectory_.rounds.push_back(std::move(r));
    }

    Trajectory finish(std::optional<std::vector<bool>> subscribed = std::nullopt) {
        trajectory_.final_proportion = state_->proportion_vector();
        trajectory_.final_loss = state_->empirical_loss();
        trajectory_.final_subscribed = std::move(subscribed);
        trajectory_.state = state_;
        trajectory_.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        return std::move(trajectory_);
    }

private:
    const PolicyConfig& policy_;
    std::vector<SampleSource>& sources_;
    std::shared_ptr<EmpiricalState> state_;
    Engine rng_;
    std::chrono::steady_clock::time_point start_;
    Trajectory trajectory_;
};

inline std::size_t ceil_log2(std::size_t m) {
    std::size_t r = 0;
    while ((std::size_t{1} << r) < m) ++r;
    return r;
}

}  // namespace detail

// ceil(log2 m) elimination phases of T/(phases+1) samples each, split evenly over the survivors
// (at least one pull each); after a phase the worse half by single-arm sample loss is dropped
// (ties drop the higher index). The remaining budget goes to the last survivor.
inline Trajectory successive_halving_run(std::vector<SampleSource>& sources, const LossSpec& spec, std::size_t T,
                                         RngSeed seed, const PolicyConfig& policy = {PolicyKind::SuccessiveHalving}) {
    const std::size_t m = sources.size();
    policy.validate(m);
    const std::size_t l = policy.batch;
    const std::size_t horizon = (T + l - 1) / l * l;
    const std::size_t phases = detail::ceil_log2(m);
    if (horizon < m * std::max<std::size_t>(phases, 1) * l)
        throw ConfigError("successive halving: budget too small for " + std::to_string(m) + " arms");
    detail::RunContext ctx(policy, sources, spec, seed);

    std::vector<std::size_t> survivors(m);
    for (std::size_t i = 0; i < m; ++i) survivors[i] = i;
    const std::size_t phase_budget = horizon / (phases + 1);
    for (std::size_t p = 0; p < phases && survivors.size() > 1; ++p) {
        const std::size_t pulls_each = std::max<std::size_t>(1, phase_budget / (survivors.size() * l));
        for (std::size_t k = 0; k < pulls_each; ++k)
            for (auto arm : survivors)
                if (ctx.total() + l <= horizon) ctx.pull(arm);
        const Eigen::MatrixXd K = ctx.state().kernel_matrix();
        const Eigen::VectorXd f = ctx.state().linear_vector();
        std::vector<std::pair<double, std::size_t>> scored;
        for (auto arm : survivors) {
            const auto a = static_cast<Eigen::Index>(arm);
            const double loss = ctx.state().count(arm) > 0 ? K(a, a) + f[a] : std::numeric_limits<double>::infinity();
            scored.emplace_back(loss, arm);
        }
        std::sort(scored.begin(), scored.end());
        const std::size_t keep = (survivors.size() + 1) / 2;
        survivors.clear();
        for (std::size_t k = 0; k < keep; ++k) survivors.push_back(scored[k].second);
        std::sort(survivors.begin(), survivors.end());
    }
    while (ctx.total() + l <= horizon) ctx.pull(survivors.front());
    return ctx.finish();
}

// Rounds for the fixed-sparsity variant: lambda starts at 0, grows geometrically each decision while
// |S| > target, and S freezes once it reaches the target.
inline Trajectory sparse_fixed_sparsity_run(std::vector<SampleSource>& sources, const LossSpec& spec, std::size_t T,
                                            RngSeed seed, std::size_t target, PolicyConfig policy = {
                                                                                    PolicyKind::SparseMixtureUcbCab}) {
    policy.kind = PolicyKind::SparseMixtureUcbCab;
    policy.sparsity = target;
    policy.lambda = 0.0;
    const std::size_t m = sources.size();
    policy.validate(m);
    const std::size_t l = policy.batch;
    const std::size_t horizon = (T + l - 1) / l * l;
    if (horizon < m * l) throw ConfigError("T must be at least the number of arms");
    const ConfidenceParams params = policy.confidence(spec);
    detail::RunContext ctx(policy, sources, spec, seed);

    std::vector<bool> subscribed(m, true);
    for (std::size_t i = 0; i < m; ++i) ctx.pull(i, std::nullopt, subscribed);
    double lambda = 0.0;
    std::optional<MixtureWeights> warm;
    auto active = [&] { return static_cast<std::size_t>(std::count(subscribed.begin(), subscribed.end(), true)); };
    while (ctx.total() + l <= horizon) {
        if (m == 1) {
            ctx.pull(0, basis_vector(1, 0), subscribed);
            continue;
        }
        const bool frozen = active() <= target;
        auto d = sparse_cab_step(ctx.state(), params, lambda, subscribed, ctx.rng(), warm, target, !frozen);
        subscribed = d.subscribed;
        warm = d.alpha;
        ctx.pull(d.arm, d.alpha, subscribed);
        if (active() > target) lambda = lambda == 0.0 ? policy.lambda_start : lambda * policy.lambda_growth;
    }
    return ctx.finish(subscribed);
}

// One run of `policy` for T samples (rounded up to a multiple of the batch size).
inline Trajectory run(const PolicyConfig& policy, std::vector<SampleSource>& sources, const LossSpec& spec,
                      std::size_t T, RngSeed seed) {
    const std::size_t m = sources.size();
    policy.validate(m);
    if (T == 0) throw ConfigError("T must be positive");
    if (policy.kind == PolicyKind::SuccessiveHalving) return successive_halving_run(sources, spec, T, seed, policy);
    if (policy.kind == PolicyKind::SparseMixtureUcbCab && policy.sparsity)
        return sparse_fixed_sparsity_run(sources, spec, T, seed, *policy.sparsity, policy);

    const std::size_t l = policy.batch;
    const std::size_t horizon = (T + l - 1) / l * l;
    if (policy.needs_initialization() && horizon < m * l)
        throw ConfigError("T must be at least the number of arms (" + std::to_string(m) + ")");
    const ConfidenceParams params = policy.confidence(spec);
    detail::RunContext ctx(policy, sources, spec, seed);

    const bool sparse = policy.kind == PolicyKind::SparseMixtureUcbCab;
    std::vector<bool> subscribed(m, true);
    auto subs = [&]() -> std::optional<std::vector<bool>> {
        if (sparse) return subscribed;
        return std::nullopt;
    };
    if (policy.needs_initialization())
        for (std::size_t i = 0; i < m; ++i) ctx.pull(i, std::nullopt, subs());

    std::optional<MixtureWeights> alpha;
    std::size_t decisions = 0;
    while (ctx.total() + l <= horizon) {
        switch (policy.kind) {
            case PolicyKind::MixtureOracle: {
                ctx.pull(sample_arm(*policy.oracle_alpha, ctx.rng()), policy.oracle_alpha);
                break;
            }
            case PolicyKind::OneArmOracle: ctx.pull(policy.oracle_arm); break;
            case PolicyKind::VanillaUcb: ctx.pull(vanilla_ucb_step(ctx.state(), params)); break;
            case PolicyKind::MixtureUcbOgd: ctx.pull(m == 1 ? 0 : ogd_step(ctx.state(), params)); break;
            case PolicyKind::MixtureUcbCab: {
                if (m == 1) {
                    ctx.pull(0, basis_vector(1, 0));
                    break;
                }
                if (!alpha || decisions % policy.stride == 0) {
                    auto d = cab_step(ctx.state(), params, ctx.rng(), alpha);
                    alpha = d.alpha;
                    ctx.pull(d.arm, alpha);
                } else {
                    ctx.pull(sample_arm(*alpha, ctx.rng()), alpha);
                }
                break;
            }
            case PolicyKind::SparseMixtureUcbCab: {
                if (m == 1) {
                    ctx.pull(0, basis_vector(1, 0), subs());
                    break;
                }
                auto d = sparse_cab_step(ctx.state(), params, policy.lambda, subscribed, ctx.rng(), alpha, 1,
                                         policy.allow_unsubscribe);
                subscribed = d.subscribed;
                alpha = d.alpha;
                ctx.pull(d.arm, alpha, subs());
                break;
            }
            case PolicyKind::SuccessiveHalving: break;
        }
        ++decisions;
    }
    return ctx.finish(subs());
}

// Regret per round: loss of the gathered samples' empirical distribution minus the optimal mixture loss.
inline double regret_per_round(const Trajectory& trajectory, double optimal_loss) {
    return trajectory.final_loss - optimal_loss;
}

inline double regret_per_round(const Trajectory& trajectory, const LossSpec& spec,
                               const std::vector<SourceSpec>& sources, std::size_t oracle_budget, RngSeed oracle_seed) {
    return regret_per_round(trajectory, optimal_mixture(spec, sources, oracle_budget, oracle_seed).loss);
}

}  // namespace mixucb
