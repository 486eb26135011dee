#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mixucb/arms.hpp"
#include "mixucb/bandit.hpp"
#include "mixucb/error.hpp"
#include "mixucb/estimator.hpp"
#include "mixucb/kernel.hpp"
#include "mixucb/rng.hpp"
#include "mixucb/score.hpp"
#include "mixucb/simplex_opt.hpp"

namespace mixucb {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct QualityConfig {
    std::string kind = "none";  // none | precision | density
    double lambda = 0.0;
    int k_nn = 5;
};

struct CheckConfig {
    std::vector<double> deltas{0.05, 0.01};
    std::size_t replications = 1000;
    MixtureWeights alpha;                   // empty: uniform
    std::vector<std::size_t> counts;        // empty: 50 per arm
    std::vector<std::size_t> lemma_counts{1, 5, 20, 50};
    int lemma_alpha_resolution = 4;
    std::vector<std::size_t> horizons{500, 2000};
};

struct ExperimentConfig {
    json raw;  // normalized document; the manifest echoes it verbatim
    std::filesystem::path base_dir;

    std::vector<SourceSpec> arms;
    std::string metric = "rke";  // rke | mmd | linear
    KernelSpec kernel = KernelSpec::gaussian(1.0);
    QualityConfig quality;
    Eigen::Index reward_coordinate = 0;
    std::vector<PolicyConfig> policies;
    std::vector<bool> oracle_alpha_from_oracle;  // per policy: mixture-oracle alpha = computed optimum
    std::size_t T = 1000;
    std::uint64_t base_seed = 1;
    std::size_t seeds = 1;
    std::size_t oracle_budget = 1000;
    std::uint64_t oracle_seed = 7;
    std::string output_dir = "out";
    std::string format = "csv";
    std::size_t jobs = 1;
    CheckConfig check;

    std::size_t arm_count() const { return arms.size(); }
    std::vector<std::uint64_t> seed_list() const {
        std::vector<std::uint64_t> s(seeds);
        for (std::size_t r = 0; r < seeds; ++r) s[r] = base_seed + r;
        return s;
    }
};

namespace detail {

inline json default_policy() {
    return json{{"kind", "mixture-ucb-cab"},
                {"name", ""},
                {"beta", 4.0},
                {"delta_L", nullptr},
                {"delta_kappa", nullptr},
                {"batch", 1},
                {"stride", 1},
                {"lambda", 0.0},
                {"allow_unsubscribe", true},
                {"sparsity", nullptr},
                {"lambda_growth", 1.05},
                {"lambda_start", 1e-4},
                {"alpha", nullptr},
                {"arm", 1}};
}

// Fill every missing key with its default so overrides can address it.
inline void merge_defaults(json& target, const json& defaults) {
    if (!target.is_object()) return;
    for (auto it = defaults.begin(); it != defaults.end(); ++it) {
        if (!target.contains(it.key()))
            target[it.key()] = it.value();
        else if (it.value().is_object() && target[it.key()].is_object())
            merge_defaults(target[it.key()], it.value());
    }
}

template <typename T>
T get_or(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || j.at(key).is_null()) throw ConfigError(where + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(where + ": key '" + std::string(key) + "' has the wrong type");
    }
}

inline Sample to_sample(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a nonempty numeric array");
    Sample x(static_cast<Eigen::Index>(j.size()));
    for (std::size_t k = 0; k < j.size(); ++k) {
        if (!j[k].is_number()) throw ConfigError(where + ": expected numbers");
        x[static_cast<Eigen::Index>(k)] = j[k].get<double>();
    }
    return x;
}

inline Eigen::VectorXd to_vector(const json& j, const std::string& where) { return to_sample(j, where); }

inline std::string resolve_path(const std::filesystem::path& base, const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_relative() && !base.empty()) p = base / p;
    return p.string();
}

inline SourceSpec parse_source(const json& j, const std::filesystem::path& base, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    const auto kind = get_or<std::string>(j, "kind", where);
    if (kind == "gaussian-mixture") {
        GaussianMixtureSpec g;
        const auto& means = j.at("means");
        if (!means.is_array() || means.empty()) throw ConfigError(where + ": means must be a nonempty array");
        for (const auto& mu : means) g.means.push_back(to_sample(mu, where + ".means"));
        const auto k = g.means.size();
        if (j.contains("sd") && j.at("sd").is_number()) {
            g.sds.assign(k, j.at("sd").get<double>());
        } else {
            const auto sds = to_vector(j.at("sd"), where + ".sd");
            g.sds.assign(sds.data(), sds.data() + sds.size());
        }
        if (!j.contains("weights") || j.at("weights").is_null()) {
            g.weights.assign(k, 1.0 / static_cast<double>(k));
            if (k == 1) g.weights = {1.0};
        } else {
            const auto w = to_vector(j.at("weights"), where + ".weights");
            g.weights.assign(w.data(), w.data() + w.size());
        }
        try {
            validate(g);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
        return g;
    }
    if (kind == "file-pool") {
        FilePoolSpec f;
        f.path = resolve_path(base, get_or<std::string>(j, "path", where));
        const auto mode = j.value("mode", std::string("without-replacement"));
        if (mode == "without-replacement")
            f.mode = DrawMode::WithoutReplacement;
        else if (mode == "with-replacement")
            f.mode = DrawMode::WithReplacement;
        else
            throw ConfigError(where + ": unknown draw mode '" + mode + "'");
        return f;
    }
    throw ConfigError(where + ": unknown arm kind '" + kind + "'");
}

inline PolicyConfig parse_policy(const json& j, std::size_t m, const std::string& where, bool& alpha_from_oracle) {
    PolicyConfig p;
    p.kind = parse_policy_kind(get_or<std::string>(j, "kind", where));
    p.name = j.value("name", std::string());
    p.beta = get_or<double>(j, "beta", where);
    if (!j.at("delta_L").is_null()) p.delta_L = get_or<double>(j, "delta_L", where);
    if (!j.at("delta_kappa").is_null()) p.delta_kappa = get_or<double>(j, "delta_kappa", where);
    p.batch = get_or<std::size_t>(j, "batch", where);
    p.stride = get_or<std::size_t>(j, "stride", where);
    p.lambda = get_or<double>(j, "lambda", where);
    p.allow_unsubscribe = get_or<bool>(j, "allow_unsubscribe", where);
    if (!j.at("sparsity").is_null()) p.sparsity = get_or<std::size_t>(j, "sparsity", where);
    p.lambda_growth = get_or<double>(j, "lambda_growth", where);
    p.lambda_start = get_or<double>(j, "lambda_start", where);
    alpha_from_oracle = false;
    const auto& alpha = j.at("alpha");
    if (p.kind == PolicyKind::MixtureOracle) {
        if (alpha.is_string() && alpha.get<std::string>() == "oracle")
            alpha_from_oracle = true;
        else if (alpha.is_array())
            p.oracle_alpha = to_vector(alpha, where + ".alpha");
        else
            throw ConfigError(where + ": mixture-oracle needs alpha (an array or \"oracle\")");
    }
    const auto arm = get_or<long long>(j, "arm", where);
    if (arm < 1) throw ConfigError(where + ": arm is 1-based");
    p.oracle_arm = static_cast<std::size_t>(arm - 1);
    try {
        if (alpha_from_oracle) {
            PolicyConfig probe = p;
            probe.oracle_alpha = MixtureWeights::Constant(static_cast<Eigen::Index>(m), 1.0 / static_cast<double>(m));
            probe.validate(m);
        } else {
            p.validate(m);
        }
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return p;
}

// Walks a dotted key path ("run.T", "policies.0.beta"); nullptr when any component is missing.
inline json* find_key(json& root, const std::string& dotted) {
    json* node = &root;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (node->is_object()) {
            if (!node->contains(part)) return nullptr;
            node = &(*node)[part];
        } else if (node->is_array()) {
            if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) return nullptr;
            const auto idx = std::stoul(part);
            if (idx >= node->size()) return nullptr;
            node = &(*node)[idx];
        } else {
            return nullptr;
        }
    }
    return node;
}

}  // namespace detail

// Fill defaults for every section; no validation.
inline json normalize_config(json raw) {
    if (!raw.is_object()) throw ConfigError("config: top level must be an object");
    detail::merge_defaults(raw, json{{"arms", json::array()},
                                     {"loss",
                                      {{"metric", "rke"},
                                       {"kernel", {{"kind", "gaussian"}, {"bandwidth", 1.0}}},
                                       {"reference", nullptr},
                                       {"quality", {{"kind", "none"}, {"lambda", 0.0}, {"k_nn", 5}}},
                                       {"reward_coordinate", 0}}},
                                     {"policies", json::array()},
                                     {"run",
                                      {{"T", 1000},
                                       {"base_seed", 1},
                                       {"seeds", 1},
                                       {"oracle_budget", 1000},
                                       {"oracle_seed", 7},
                                       {"output_dir", "out"},
                                       {"format", "csv"},
                                       {"jobs", 1}}},
                                     {"check",
                                      {{"deltas", {0.05, 0.01}},
                                       {"replications", 1000},
                                       {"alpha", nullptr},
                                       {"counts", nullptr},
                                       {"lemma_counts", {1, 5, 20, 50}},
                                       {"lemma_alpha_resolution", 4},
                                       {"horizons", {500, 2000}}}}});
    if (raw["policies"].is_array())
        for (auto& p : raw["policies"]) detail::merge_defaults(p, detail::default_policy());
    return raw;
}

// KEY=VALUE; VALUE parsed as JSON when possible, else taken as a string. KEY must already exist.
inline void apply_override(json& normalized, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like KEY=VALUE: '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json* node = detail::find_key(normalized, key);
    if (!node) throw ConfigError("override references unknown config key '" + key + "'");
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    *node = std::move(value);
}

inline ExperimentConfig parse_config(const json& document, const std::filesystem::path& base_dir = {}) {
    ExperimentConfig cfg;
    cfg.raw = normalize_config(document);
    cfg.base_dir = base_dir;
    const json& raw = cfg.raw;

    const auto& arms = raw.at("arms");
    if (!arms.is_array() || arms.empty()) throw ConfigError("config: arms must be a nonempty array");
    for (std::size_t i = 0; i < arms.size(); ++i)
        cfg.arms.push_back(detail::parse_source(arms[i], base_dir, "arms." + std::to_string(i)));
    const std::size_t m = cfg.arms.size();
    Eigen::Index dim = -1;
    for (const auto& a : cfg.arms)
        if (const auto* g = std::get_if<GaussianMixtureSpec>(&a)) {
            if (dim < 0) dim = g->means.front().size();
            if (g->means.front().size() != dim) throw ConfigError("config: arms have different dimensions");
        }

    const auto& loss = raw.at("loss");
    cfg.metric = detail::get_or<std::string>(loss, "metric", "loss");
    if (cfg.metric != "rke" && cfg.metric != "mmd" && cfg.metric != "linear")
        throw ConfigError("loss: unknown metric '" + cfg.metric + "'");
    const auto& kernel = loss.at("kernel");
    const auto kernel_kind = detail::get_or<std::string>(kernel, "kind", "loss.kernel");
    if (kernel_kind == "gaussian")
        cfg.kernel = KernelSpec::gaussian(detail::get_or<double>(kernel, "bandwidth", "loss.kernel"));
    else if (kernel_kind == "zero")
        cfg.kernel = KernelSpec::zero();
    else
        throw ConfigError("loss.kernel: unknown kind '" + kernel_kind + "'");
    const auto& quality = loss.at("quality");
    cfg.quality.kind = detail::get_or<std::string>(quality, "kind", "loss.quality");
    cfg.quality.lambda = detail::get_or<double>(quality, "lambda", "loss.quality");
    cfg.quality.k_nn = detail::get_or<int>(quality, "k_nn", "loss.quality");
    if (cfg.quality.kind != "none" && cfg.quality.kind != "precision" && cfg.quality.kind != "density")
        throw ConfigError("loss.quality: unknown kind '" + cfg.quality.kind + "'");
    if (!(cfg.quality.lambda >= 0.0)) throw ConfigError("loss.quality: lambda must be >= 0");
    if (cfg.quality.k_nn < 1) throw ConfigError("loss.quality: k_nn must be positive");
    const bool needs_reference = cfg.metric == "mmd" || cfg.quality.kind != "none";
    if (needs_reference && loss.at("reference").is_null()) throw ConfigError("loss: this metric needs a reference pool");
    cfg.reward_coordinate = detail::get_or<Eigen::Index>(loss, "reward_coordinate", "loss");

    const auto& policies = raw.at("policies");
    if (!policies.is_array() || policies.empty()) throw ConfigError("config: at least one policy required");
    for (std::size_t i = 0; i < policies.size(); ++i) {
        bool from_oracle = false;
        cfg.policies.push_back(
            detail::parse_policy(policies[i], m, "policies." + std::to_string(i), from_oracle));
        cfg.oracle_alpha_from_oracle.push_back(from_oracle);
    }

    const auto& run = raw.at("run");
    cfg.T = detail::get_or<std::size_t>(run, "T", "run");
    cfg.base_seed = detail::get_or<std::uint64_t>(run, "base_seed", "run");
    cfg.seeds = detail::get_or<std::size_t>(run, "seeds", "run");
    cfg.oracle_budget = detail::get_or<std::size_t>(run, "oracle_budget", "run");
    cfg.oracle_seed = detail::get_or<std::uint64_t>(run, "oracle_seed", "run");
    cfg.output_dir = detail::get_or<std::string>(run, "output_dir", "run");
    cfg.format = detail::get_or<std::string>(run, "format", "run");
    cfg.jobs = detail::get_or<std::size_t>(run, "jobs", "run");
    if (cfg.seeds < 1) throw ConfigError("run: at least one seed required");
    if (cfg.T < m) throw ConfigError("run: T must be at least the number of arms");
    if (cfg.format != "csv" && cfg.format != "json") throw ConfigError("run: format must be csv or json");
    if (cfg.jobs < 1) throw ConfigError("run: jobs must be >= 1");

    const auto& check = raw.at("check");
    cfg.check.deltas = check.at("deltas").get<std::vector<double>>();
    for (double d : cfg.check.deltas)
        if (!(d > 0.0 && d < 1.0)) throw ConfigError("check: deltas must lie in (0, 1)");
    cfg.check.replications = detail::get_or<std::size_t>(check, "replications", "check");
    if (!check.at("alpha").is_null()) {
        cfg.check.alpha = detail::to_vector(check.at("alpha"), "check.alpha");
        require_probability_vector(cfg.check.alpha, static_cast<Eigen::Index>(m));
    }
    if (!check.at("counts").is_null()) {
        cfg.check.counts = check.at("counts").get<std::vector<std::size_t>>();
        if (cfg.check.counts.size() != m) throw ConfigError("check: counts needs one entry per arm");
        for (auto n : cfg.check.counts)
            if (n < 1) throw ConfigError("check: counts must be >= 1");
    }
    cfg.check.lemma_counts = check.at("lemma_counts").get<std::vector<std::size_t>>();
    for (auto n : cfg.check.lemma_counts)
        if (n < 1) throw ConfigError("check: lemma_counts must be >= 1");
    cfg.check.lemma_alpha_resolution = detail::get_or<int>(check, "lemma_alpha_resolution", "check");
    cfg.check.horizons = check.at("horizons").get<std::vector<std::size_t>>();
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
    json normalized = normalize_config(std::move(doc));
    for (const auto& o : overrides) apply_override(normalized, o);
    return parse_config(normalized, path.parent_path());
}

// Builds the loss; reads reference pools from disk.
inline LossSpec build_loss(const ExperimentConfig& cfg) {
    std::shared_ptr<const ReferencePool> reference;
    const auto& ref = cfg.raw.at("loss").at("reference");
    if (!ref.is_null()) {
        if (ref.contains("path")) {
            reference = std::make_shared<ReferencePool>(
                load_embedding_file(detail::resolve_path(cfg.base_dir, ref.at("path").get<std::string>())));
        } else if (ref.contains("source")) {
            const auto spec = detail::parse_source(ref.at("source"), cfg.base_dir, "loss.reference.source");
            const auto size = detail::get_or<std::size_t>(ref, "size", "loss.reference");
            const auto seed = ref.value("seed", std::uint64_t{0});
            auto src = build_source(spec, derive_seed(RngSeed{seed}, kReferenceStream));
            reference = std::make_shared<ReferencePool>(src.draw_batch(size));
        } else {
            throw ConfigError("loss.reference: needs 'path' or 'source'");
        }
    }
    LossSpec spec;
    if (cfg.metric == "rke")
        spec = rke_spec(cfg.kernel);
    else if (cfg.metric == "mmd")
        spec = mmd_spec(cfg.kernel, reference);
    else
        spec = combine(make_loss(cfg.kernel, LinearTerm{}, LossSpec::Metric::Custom),
                       reward_term(cfg.reward_coordinate));
    if (cfg.quality.kind == "precision")
        spec = combine(spec, precision_term(reference, cfg.quality.k_nn, cfg.quality.lambda));
    else if (cfg.quality.kind == "density")
        spec = combine(spec, density_term(reference, cfg.quality.k_nn, cfg.quality.lambda));
    return spec;
}

// Reported score: RKE mode count, MMD with its constant restored, otherwise the loss itself.
inline double score_of(const LossSpec& spec, double loss) {
    if (spec.metric == LossSpec::Metric::Rke && spec.linear.is_zero()) return loss > 0.0 ? rke_mode_count(loss) : 0.0;
    if (spec.metric == LossSpec::Metric::Mmd && spec.mmd_constant) return loss + *spec.mmd_constant;
    return loss;
}

inline std::string score_name(const LossSpec& spec) {
    if (spec.metric == LossSpec::Metric::Rke && spec.linear.is_zero()) return "rke_mode_count";
    if (spec.metric == LossSpec::Metric::Mmd && spec.mmd_constant) return "mmd";
    return "loss";
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

struct OracleResult {
    MixtureWeights alpha;
    double loss = 0.0;
    double score = 0.0;
    std::optional<double> grid_loss;  // cross-check value when m <= 3
};

// QP on Monte Carlo matrices (distinct-pair diagonals); cross-checked on a simplex grid when m <= 3.
inline OracleResult compute_oracle(const ExperimentConfig& cfg, const LossSpec& spec) {
    if (cfg.oracle_budget < 100) throw ConfigError("oracle budget must be at least 100 samples per arm");
    const auto est = optimal_mixture(spec, cfg.arms, cfg.oracle_budget, RngSeed{cfg.oracle_seed});
    OracleResult out{est.alpha, est.loss, score_of(spec, est.loss), std::nullopt};
    if (cfg.arm_count() <= 3) {
        const QuadraticProgram qp(est.matrices.K, est.matrices.f);
        const int resolution = cfg.arm_count() == 3 ? 300 : 2000;
        const double grid = qp.objective(grid_oracle(qp, resolution));
        out.grid_loss = grid;
        if (std::abs(grid - est.loss) > 1e-3)
            throw RuntimeError("oracle cross-check failed: solver loss " + std::to_string(est.loss) +
                               " vs grid loss " + std::to_string(grid));
        out.loss = std::max(est.loss, grid);
        out.score = score_of(spec, out.loss);
    }
    return out;
}

inline OracleResult compute_oracle(const ExperimentConfig& cfg) { return compute_oracle(cfg, build_loss(cfg)); }

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

struct RunResult {
    std::size_t policy_index = 0;
    std::string policy;
    std::uint64_t seed = 0;
    Trajectory trajectory;
    double final_loss = 0.0;
    double final_score = 0.0;
    double regret = 0.0;
};

struct AggregatePoint {
    std::size_t policy_index = 0;
    std::string policy;
    std::size_t round = 0;
    std::size_t runs = 0;
    double mean_loss = 0.0;
    double sd_loss = 0.0;
    double mean_score = 0.0;
    double sd_score = 0.0;
};

struct ExperimentResult {
    ExperimentConfig config;
    LossSpec loss;
    OracleResult oracle;
    std::vector<std::size_t> checkpoints;
    std::vector<RunResult> runs;  // policy-major, then seed order
    std::vector<AggregatePoint> aggregates;
    std::string score_label;
};

// m, 2m, ..., 10m, then x1.5 steps, always ending at T.
inline std::vector<std::size_t> checkpoint_grid(std::size_t m, std::size_t T) {
    std::vector<std::size_t> grid;
    for (std::size_t k = 1; k <= 10 && k * m < T; ++k) grid.push_back(k * m);
    double next = static_cast<double>(grid.empty() ? m : grid.back());
    for (;;) {
        next = std::ceil(next * 1.5);
        if (next >= static_cast<double>(T)) break;
        grid.push_back(static_cast<std::size_t>(next));
    }
    grid.push_back(T);
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return grid;
}

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

// Loss at the last record with t <= round.
inline const RoundRecord* record_at(const Trajectory& traj, std::size_t round) {
    const RoundRecord* found = nullptr;
    for (const auto& r : traj.rounds) {
        if (r.t > round) break;
        found = &r;
    }
    return found;
}

using ProgressFn = std::function<void(const std::string&)>;

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t jobs = 1,
                                       const ProgressFn& progress = {}) {
    ExperimentResult result;
    result.config = cfg;
    result.loss = build_loss(cfg);
    result.score_label = score_name(result.loss);
    const std::size_t m = cfg.arm_count();
    if (progress) progress("computing oracle mixture");
    result.oracle = compute_oracle(cfg, result.loss);
    result.checkpoints = checkpoint_grid(m, cfg.T);

    std::vector<PolicyConfig> policies = cfg.policies;
    for (std::size_t p = 0; p < policies.size(); ++p)
        if (cfg.oracle_alpha_from_oracle[p]) policies[p].oracle_alpha = result.oracle.alpha;

    const auto seeds = cfg.seed_list();
    const std::size_t total = policies.size() * seeds.size();
    result.runs.resize(total);
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr failure;
    auto worker = [&] {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= total) return;
            const std::size_t p = k / seeds.size();
            const std::size_t s = k % seeds.size();
            try {
                auto sources = build_sources(cfg.arms, RngSeed{seeds[s]}, cfg.T);
                RunResult r;
                r.policy_index = p;
                r.policy = policies[p].label();
                r.seed = seeds[s];
                r.trajectory = run(policies[p], sources, result.loss, cfg.T, RngSeed{seeds[s]});
                r.final_loss = r.trajectory.final_loss;
                r.final_score = score_of(result.loss, r.final_loss);
                r.regret = regret_per_round(r.trajectory, result.oracle.loss);
                if (progress)
                    progress("finished " + r.policy + " seed " + std::to_string(r.seed) + " in " +
                             std::to_string(r.trajectory.wall_seconds) + " s");
                result.runs[k] = std::move(r);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!failure) failure = std::current_exception();
                next.store(total);
                return;
            }
        }
    };
    const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, total));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    for (std::size_t p = 0; p < policies.size(); ++p) {
        for (auto round : result.checkpoints) {
            std::vector<double> losses;
            std::vector<double> scores;
            for (std::size_t s = 0; s < seeds.size(); ++s) {
                const auto* rec = record_at(result.runs[p * seeds.size() + s].trajectory, round);
                if (!rec) continue;
                losses.push_back(rec->loss);
                scores.push_back(score_of(result.loss, rec->loss));
            }
            if (losses.empty()) continue;
            AggregatePoint a;
            a.policy_index = p;
            a.policy = policies[p].label();
            a.round = round;
            a.runs = losses.size();
            std::tie(a.mean_loss, a.sd_loss) = mean_sd(losses);
            std::tie(a.mean_score, a.sd_score) = mean_sd(scores);
            result.aggregates.push_back(a);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Concentration checks
// ---------------------------------------------------------------------------

struct DeviationRate {
    double delta = 0.0;
    double radius = 0.0;      // eps(delta)' alpha for the fixed-alpha check
    double rate_upper = 0.0;  // P(L_hat - L >= radius)
    double rate_lower = 0.0;  // P(L - L_hat >= radius)
};

struct UniformDeviationRate {
    double delta = 0.0;
    double rate_upper = 0.0;  // some (n, alpha) on the grid has L_hat - L >= radius
    double rate_lower = 0.0;
    double worst_ratio = 0.0;  // max over replications and grid of |L_hat - L| / radius
};

struct ConcentrationReport {
    MixtureWeights alpha;
    std::vector<std::size_t> counts;
    std::size_t replications = 0;
    double population_loss = 0.0;
    std::vector<DeviationRate> fixed_alpha;
    std::vector<UniformDeviationRate> uniform;
};

struct ConcentrationSetup {
    LossSpec loss;
    std::vector<SourceSpec> arms;
    MixtureWeights alpha;
    std::vector<std::size_t> counts;
    std::vector<double> deltas;
    std::size_t replications = 1000;
    std::size_t population_budget = 2000;
    std::vector<std::size_t> lemma_counts;  // empty: skip the uniform sweep
    int lemma_alpha_resolution = 4;
    std::optional<double> delta_L;  // radius overrides; default to the loss sensitivities
    std::optional<double> delta_kappa;
    RngSeed seed{1};
};

namespace detail {

// Kernel block sums over sample prefixes: prefix[i][j](a, b) = sum over first a of arm i, first b of arm j.
class PrefixGram {
public:
    PrefixGram(const LossSpec& loss, const std::vector<std::vector<Sample>>& draws) : m_(draws.size()) {
        blocks_.resize(m_ * m_);
        linear_.resize(m_);
        for (std::size_t i = 0; i < m_; ++i) {
            const auto& xi = draws[i];
            linear_[i].assign(xi.size() + 1, 0.0);
            for (std::size_t a = 0; a < xi.size(); ++a) linear_[i][a + 1] = linear_[i][a] + loss.f(xi[a]);
            for (std::size_t j = i; j < m_; ++j) {
                const auto& xj = draws[j];
                Eigen::MatrixXd P = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(xi.size() + 1),
                                                          static_cast<Eigen::Index>(xj.size() + 1));
                for (std::size_t a = 0; a < xi.size(); ++a)
                    for (std::size_t b = 0; b < xj.size(); ++b) {
                        const auto A = static_cast<Eigen::Index>(a);
                        const auto B = static_cast<Eigen::Index>(b);
                        const double v = (i == j && b < a) ? P(B + 1, A + 1) - P(B, A + 1) - P(B + 1, A) + P(B, A)
                                                           : loss.kappa(xi[a], xj[b]);
                        P(A + 1, B + 1) = v + P(A, B + 1) + P(A + 1, B) - P(A, B);
                    }
                blocks_[i * m_ + j] = P;
                if (j != i) blocks_[j * m_ + i] = P.transpose();
            }
        }
    }

    double sample_loss(const std::vector<std::size_t>& n, const MixtureWeights& alpha) const {
        double total = 0.0;
        for (std::size_t i = 0; i < m_; ++i) {
            const double ai = alpha[static_cast<Eigen::Index>(i)];
            if (ai == 0.0) continue;
            total += ai * linear_[i][n[i]] / static_cast<double>(n[i]);
            for (std::size_t j = 0; j < m_; ++j) {
                const double aj = alpha[static_cast<Eigen::Index>(j)];
                if (aj == 0.0) continue;
                const double s = blocks_[i * m_ + j](static_cast<Eigen::Index>(n[i]), static_cast<Eigen::Index>(n[j]));
                total += ai * aj * s / (static_cast<double>(n[i]) * static_cast<double>(n[j]));
            }
        }
        return total;
    }

private:
    std::size_t m_;
    std::vector<Eigen::MatrixXd> blocks_;
    std::vector<std::vector<double>> linear_;
};

inline std::vector<MixtureWeights> simplex_grid(std::size_t m, int resolution) {
    std::vector<MixtureWeights> out;
    std::vector<int> c(m, 0);
    std::function<void(std::size_t, int)> rec = [&](std::size_t pos, int left) {
        if (pos + 1 == m) {
            c[pos] = left;
            MixtureWeights a(static_cast<Eigen::Index>(m));
            for (std::size_t i = 0; i < m; ++i) a[static_cast<Eigen::Index>(i)] = c[i] / static_cast<double>(resolution);
            out.push_back(a);
            return;
        }
        for (int v = 0; v <= left; ++v) {
            c[pos] = v;
            rec(pos + 1, left - v);
        }
    };
    rec(0, resolution);
    return out;
}

inline std::vector<std::vector<std::size_t>> count_grid(std::size_t m, const std::vector<std::size_t>& values) {
    std::vector<std::vector<std::size_t>> out(1);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<std::vector<std::size_t>> next;
        for (const auto& prefix : out)
            for (auto v : values) {
                auto row = prefix;
                row.push_back(v);
                next.push_back(std::move(row));
            }
        out = std::move(next);
    }
    return out;
}

}  // namespace detail

// Monte Carlo frequency of one-sided deviations of L_hat from L beyond the fixed-alpha radius, plus a
// sweep over (counts, alpha) grids against the radius that holds uniformly over both.
inline ConcentrationReport validate_concentration(const ConcentrationSetup& setup) {
    const std::size_t m = setup.arms.size();
    require_probability_vector(setup.alpha, static_cast<Eigen::Index>(m));
    if (setup.counts.size() != m) throw ConfigError("concentration: counts needs one entry per arm");
    if (setup.replications < 1000) throw ConfigError("concentration: at least 1000 replications required");

    const auto pm = population_matrices(setup.loss, setup.arms, setup.population_budget,
                                        derive_seed(setup.seed, kOracleStream));
    ConcentrationReport report;
    report.alpha = setup.alpha;
    report.counts = setup.counts;
    report.replications = setup.replications;
    report.population_loss = quadratic_loss(pm, setup.alpha);

    std::vector<std::size_t> draws_per_arm = setup.counts;
    std::size_t horizon = 0;
    for (auto v : setup.lemma_counts) horizon = std::max(horizon, v);
    for (auto& d : draws_per_arm) d = std::max(d, horizon);

    const double dL = setup.delta_L.value_or(setup.loss.delta_L());
    const double dk = setup.delta_kappa.value_or(setup.loss.delta_kappa());
    for (double delta : setup.deltas) {
        if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("concentration: delta must lie in (0, 1)");
        const Eigen::VectorXd eps = confidence_radius(setup.counts, std::log(1.0 / delta), dL, dk);
        report.fixed_alpha.push_back({delta, eps.dot(setup.alpha), 0.0, 0.0});
        report.uniform.push_back({delta, 0.0, 0.0, 0.0});
    }
    const auto alphas = setup.lemma_counts.empty() ? std::vector<MixtureWeights>{}
                                                   : detail::simplex_grid(m, setup.lemma_alpha_resolution);
    const auto configs = setup.lemma_counts.empty() ? std::vector<std::vector<std::size_t>>{}
                                                    : detail::count_grid(m, setup.lemma_counts);
    std::vector<double> pop_alpha;
    for (const auto& a : alphas) pop_alpha.push_back(quadratic_loss(pm, a));
    // radius per (delta, config) as vectors; dotted with alpha inside the loop
    std::vector<std::vector<Eigen::VectorXd>> uniform_eps(setup.deltas.size());
    for (std::size_t d = 0; d < setup.deltas.size(); ++d)
        for (const auto& n : configs)
            uniform_eps[d].push_back(confidence_radius(
                n, std::log(static_cast<double>(m * m) * static_cast<double>(horizon) * static_cast<double>(horizon) /
                            (2.0 * setup.deltas[d])),
                dL, dk));

    std::vector<std::size_t> hits_up(setup.deltas.size(), 0), hits_lo(setup.deltas.size(), 0);
    std::vector<std::size_t> uni_up(setup.deltas.size(), 0), uni_lo(setup.deltas.size(), 0);
    for (std::size_t r = 0; r < setup.replications; ++r) {
        const RngSeed rep_seed = derive_seed(setup.seed, r);
        std::vector<std::vector<Sample>> draws(m);
        for (std::size_t i = 0; i < m; ++i) {
            auto src = build_source(setup.arms[i], derive_seed(rep_seed, kArmStreamBase + i));
            draws[i] = src.draw_batch(draws_per_arm[i]);
        }
        const detail::PrefixGram gram(setup.loss, draws);
        const double dev = gram.sample_loss(setup.counts, setup.alpha) - report.population_loss;
        for (std::size_t d = 0; d < setup.deltas.size(); ++d) {
            if (dev >= report.fixed_alpha[d].radius) ++hits_up[d];
            if (-dev >= report.fixed_alpha[d].radius) ++hits_lo[d];
        }
        if (configs.empty()) continue;
        std::vector<bool> up(setup.deltas.size(), false), lo(setup.deltas.size(), false);
        for (std::size_t c = 0; c < configs.size(); ++c)
            for (std::size_t a = 0; a < alphas.size(); ++a) {
                const double deviation = gram.sample_loss(configs[c], alphas[a]) - pop_alpha[a];
                for (std::size_t d = 0; d < setup.deltas.size(); ++d) {
                    const double radius = uniform_eps[d][c].dot(alphas[a]);
                    if (deviation >= radius) up[d] = true;
                    if (-deviation >= radius) lo[d] = true;
                    if (radius > 0.0)
                        report.uniform[d].worst_ratio = std::max(report.uniform[d].worst_ratio, std::abs(deviation) / radius);
                }
            }
        for (std::size_t d = 0; d < setup.deltas.size(); ++d) {
            uni_up[d] += up[d] ? 1 : 0;
            uni_lo[d] += lo[d] ? 1 : 0;
        }
    }
    const double reps = static_cast<double>(setup.replications);
    for (std::size_t d = 0; d < setup.deltas.size(); ++d) {
        report.fixed_alpha[d].rate_upper = static_cast<double>(hits_up[d]) / reps;
        report.fixed_alpha[d].rate_lower = static_cast<double>(hits_lo[d]) / reps;
        if (!configs.empty()) {
            report.uniform[d].rate_upper = static_cast<double>(uni_up[d]) / reps;
            report.uniform[d].rate_lower = static_cast<double>(uni_lo[d]) / reps;
        }
    }
    if (configs.empty()) report.uniform.clear();
    return report;
}

inline ConcentrationSetup concentration_setup(const ExperimentConfig& cfg, const LossSpec& loss) {
    const std::size_t m = cfg.arm_count();
    ConcentrationSetup s;
    s.loss = loss;
    s.arms = cfg.arms;
    s.alpha = cfg.check.alpha.size() ? cfg.check.alpha
                                     : MixtureWeights::Constant(static_cast<Eigen::Index>(m), 1.0 / static_cast<double>(m));
    s.counts = cfg.check.counts.empty() ? std::vector<std::size_t>(m, 50) : cfg.check.counts;
    s.deltas = cfg.check.deltas;
    s.replications = cfg.check.replications;
    s.population_budget = cfg.oracle_budget;
    s.lemma_counts = cfg.check.lemma_counts;
    s.lemma_alpha_resolution = cfg.check.lemma_alpha_resolution;
    s.seed = RngSeed{cfg.base_seed};
    return s;
}

struct EnvelopeRow {
    std::size_t horizon = 0;
    std::uint64_t seed = 0;
    double regret = 0.0;
    double bound = 0.0;
    bool holds() const { return regret <= bound; }
};

// Regret per round of Mixture-UCB-CAB (first CAB policy in the config, or defaults) against the envelope.
inline std::vector<EnvelopeRow> regret_envelope(const ExperimentConfig& cfg, const LossSpec& loss, double optimal_loss,
                                                const std::vector<std::size_t>& horizons) {
    PolicyConfig cab;
    for (const auto& p : cfg.policies)
        if (p.kind == PolicyKind::MixtureUcbCab) {
            cab = p;
            break;
        }
    const ConfidenceParams params = cab.confidence(loss);
    std::vector<EnvelopeRow> rows;
    for (auto T : horizons)
        for (auto seed : cfg.seed_list()) {
            auto sources = build_sources(cfg.arms, RngSeed{seed}, T);
            const auto traj = run(cab, sources, loss, T, RngSeed{seed});
            rows.push_back({T, seed, regret_per_round(traj, optimal_loss),
                            regret_bound(params.delta_L, params.beta, cfg.arm_count(), T)});
        }
    return rows;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline std::string file_stem(const RunResult& r) {
    std::string label;
    for (char ch : r.policy) label += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-') ? ch : '_';
    return "p" + std::to_string(r.policy_index + 1) + "_" + label + "_seed" + std::to_string(r.seed);
}

inline std::string trajectory_csv(const RunResult& r, const LossSpec& loss, std::size_t m) {
    std::ostringstream out;
    out << "t,policy,seed,arm,loss,score";
    for (std::size_t i = 1; i <= m; ++i) out << ",n_" << i;
    for (std::size_t i = 1; i <= m; ++i) out << ",alpha_" << i;
    out << '\n';
    for (const auto& rec : r.trajectory.rounds) {
        out << rec.t << ',' << r.policy << ',' << r.seed << ',' << rec.arm + 1 << ',' << format_number(rec.loss) << ','
            << format_number(score_of(loss, rec.loss));
        for (auto n : rec.counts) out << ',' << n;
        for (std::size_t i = 0; i < m; ++i) {
            out << ',';
            if (rec.alpha) out << format_number((*rec.alpha)[static_cast<Eigen::Index>(i)]);
        }
        out << '\n';
    }
    return out.str();
}

inline json trajectory_json(const RunResult& r, const LossSpec& loss) {
    json rows = json::array();
    for (const auto& rec : r.trajectory.rounds) {
        json row{{"t", rec.t},
                 {"arm", rec.arm + 1},
                 {"loss", rec.loss},
                 {"score", score_of(loss, rec.loss)},
                 {"counts", rec.counts}};
        if (rec.alpha)
            row["alpha"] = std::vector<double>(rec.alpha->data(), rec.alpha->data() + rec.alpha->size());
        else
            row["alpha"] = nullptr;
        if (rec.subscribed) {
            json subs = json::array();
            for (std::size_t i = 0; i < rec.subscribed->size(); ++i)
                if ((*rec.subscribed)[i]) subs.push_back(i + 1);
            row["subscribed"] = subs;
        }
        rows.push_back(std::move(row));
    }
    return json{{"policy", r.policy}, {"seed", r.seed}, {"rounds", std::move(rows)}};
}

inline std::string aggregates_csv(const ExperimentResult& result) {
    std::ostringstream out;
    out << "round,policy,runs,mean_loss,sd_loss,mean_score,sd_score\n";
    for (const auto& a : result.aggregates)
        out << a.round << ',' << a.policy << ',' << a.runs << ',' << format_number(a.mean_loss) << ','
            << format_number(a.sd_loss) << ',' << format_number(a.mean_score) << ',' << format_number(a.sd_score)
            << '\n';
    return out.str();
}

inline std::string summary_csv(const ExperimentResult& result) {
    const std::size_t m = result.config.arm_count();
    std::ostringstream out;
    out << "policy,seed,final_loss,final_score,regret";
    for (std::size_t i = 1; i <= m; ++i) out << ",p_" << i;
    out << '\n';
    for (const auto& r : result.runs) {
        out << r.policy << ',' << r.seed << ',' << format_number(r.final_loss) << ',' << format_number(r.final_score)
            << ',' << format_number(r.regret);
        for (Eigen::Index i = 0; i < r.trajectory.final_proportion.size(); ++i)
            out << ',' << format_number(r.trajectory.final_proportion[i]);
        out << '\n';
    }
    return out.str();
}

inline json manifest_json(const ExperimentResult& result, const std::vector<std::string>& files) {
    const auto& a = result.oracle.alpha;
    json oracle{{"alpha", std::vector<double>(a.data(), a.data() + a.size())},
                {"loss", result.oracle.loss},
                {"score", result.oracle.score}};
    return json{{"config", result.config.raw},
                {"seeds", result.config.seed_list()},
                {"score", result.score_label},
                {"oracle", oracle},
                {"checkpoints", result.checkpoints},
                {"files", files}};
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write " + path.string());
    out << content;
    if (!out) throw RuntimeError("failed writing " + path.string());
}

// Writes trajectories/, aggregates, summary and manifest.json under out_dir. Returns the relative paths.
inline std::vector<std::string> export_result(const ExperimentResult& result, const std::filesystem::path& out_dir,
                                              const std::string& format) {
    if (format != "csv" && format != "json") throw ConfigError("export format must be csv or json");
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "trajectories", ec);
    if (ec) throw RuntimeError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    const std::size_t m = result.config.arm_count();
    std::vector<std::string> files;
    for (const auto& r : result.runs) {
        const std::string rel = "trajectories/" + file_stem(r) + "." + format;
        if (format == "csv")
            write_file(out_dir / rel, trajectory_csv(r, result.loss, m));
        else
            write_file(out_dir / rel, trajectory_json(r, result.loss).dump(1) + "\n");
        files.push_back(rel);
    }
    if (format == "csv") {
        write_file(out_dir / "aggregates.csv", aggregates_csv(result));
        write_file(out_dir / "summary.csv", summary_csv(result));
        files.push_back("aggregates.csv");
        files.push_back("summary.csv");
    } else {
        json agg = json::array();
        for (const auto& a : result.aggregates)
            agg.push_back({{"round", a.round},
                           {"policy", a.policy},
                           {"runs", a.runs},
                           {"mean_loss", a.mean_loss},
                           {"sd_loss", a.sd_loss},
                           {"mean_score", a.mean_score},
                           {"sd_score", a.sd_score}});
        write_file(out_dir / "aggregates.json", agg.dump(1) + "\n");
        files.push_back("aggregates.json");
    }
    files.push_back("manifest.json");
    write_file(out_dir / "manifest.json", manifest_json(result, files).dump(2) + "\n");
    return files;
}

}  // namespace mixucb
