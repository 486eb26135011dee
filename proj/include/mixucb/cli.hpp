#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixucb/error.hpp"
#include "mixucb/harness.hpp"

namespace mixucb {

// Environment variable that replaces run.output_dir; --out takes precedence over it.
inline constexpr const char* kOutDirEnv = "MIXUCB_OUT_DIR";

struct CliOptions {
    std::string subcommand;
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::string> out;
    std::optional<std::size_t> jobs;
    bool quiet = false;
};

namespace detail {

inline std::string resolve_output_dir(const CliOptions& opts, const ExperimentConfig& cfg) {
    if (opts.out) return *opts.out;
    if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
    return cfg.output_dir;
}

inline void print_policy_table(std::ostream& out, const ExperimentResult& result) {
    out << "policy,runs,mean_final_loss,sd_final_loss,mean_final_score,sd_final_score,mean_regret\n";
    const std::size_t seeds = result.config.seeds;
    for (std::size_t p = 0; p < result.config.policies.size(); ++p) {
        std::vector<double> loss, score, regret;
        for (std::size_t s = 0; s < seeds; ++s) {
            const auto& r = result.runs[p * seeds + s];
            loss.push_back(r.final_loss);
            score.push_back(r.final_score);
            regret.push_back(r.regret);
        }
        const auto [ml, sl] = mean_sd(loss);
        const auto [ms, ss] = mean_sd(score);
        const auto mr = mean_sd(regret).first;
        out << result.runs[p * seeds].policy << ',' << seeds << ',' << format_number(ml) << ',' << format_number(sl)
            << ',' << format_number(ms) << ',' << format_number(ss) << ',' << format_number(mr) << '\n';
    }
}

inline std::string join(const Eigen::VectorXd& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + format_number(v[i]);
    return s;
}

inline int dispatch(const CliOptions& opts, std::ostream& out, std::ostream& err) {
    const ExperimentConfig cfg = load_config(opts.config, opts.overrides);
    const std::size_t jobs = opts.jobs.value_or(cfg.jobs);
    if (jobs < 1) throw ConfigError("--jobs must be >= 1");
    ProgressFn progress;
    if (!opts.quiet) progress = [&err](const std::string& msg) { err << "[mixucb] " << msg << '\n'; };

    if (opts.subcommand == "validate-config") {
        const LossSpec loss = build_loss(cfg);
        for (std::size_t i = 0; i < cfg.arms.size(); ++i)
            if (const auto* f = std::get_if<FilePoolSpec>(&cfg.arms[i])) {
                const auto rows = load_embedding_file(f->path);
                if (f->mode == DrawMode::WithoutReplacement && rows.size() < cfg.T)
                    throw ConfigError(f->path + ": pool has fewer rows than T draws without replacement");
            }
        out << "config ok: " << cfg.arm_count() << " arms, " << cfg.policies.size() << " policies, " << cfg.seeds
            << " seeds, loss " << score_name(loss) << '\n';
        return 0;
    }
    if (opts.subcommand == "oracle") {
        const LossSpec loss = build_loss(cfg);
        const auto oracle = compute_oracle(cfg, loss);
        out << "alpha: " << join(oracle.alpha) << '\n';
        out << "loss: " << format_number(oracle.loss) << '\n';
        if (oracle.grid_loss) out << "grid_loss: " << format_number(*oracle.grid_loss) << '\n';
        if (score_name(loss) == "rke_mode_count") out << "mode_count: " << format_number(oracle.score) << '\n';
        if (score_name(loss) == "mmd") out << "mmd: " << format_number(oracle.score) << '\n';
        return 0;
    }
    if (opts.subcommand == "run" || opts.subcommand == "compare") {
        const auto result = run_experiment(cfg, jobs, progress);
        if (opts.subcommand == "run") {
            const std::filesystem::path dir = resolve_output_dir(opts, cfg);
            const auto files = export_result(result, dir, cfg.format);
            if (progress) progress("wrote " + std::to_string(files.size()) + " files to " + dir.string());
        }
        print_policy_table(out, result);
        return 0;
    }
    if (opts.subcommand == "check-bound") {
        const LossSpec loss = build_loss(cfg);
        if (progress) progress("running concentration check");
        const auto report = validate_concentration(concentration_setup(cfg, loss));
        out << "# fixed alpha (" << join(report.alpha) << "), population loss "
            << format_number(report.population_loss) << ", " << report.replications << " replications\n";
        out << "delta,radius,rate_upper,rate_lower,holds\n";
        for (const auto& r : report.fixed_alpha)
            out << format_number(r.delta) << ',' << format_number(r.radius) << ',' << format_number(r.rate_upper)
                << ',' << format_number(r.rate_lower) << ','
                << (r.rate_upper <= r.delta && r.rate_lower <= r.delta ? "yes" : "no") << '\n';
        if (!report.uniform.empty()) {
            out << "# uniform sweep over counts and alpha grid\n";
            out << "delta,rate_upper,rate_lower,worst_ratio,holds\n";
            for (const auto& r : report.uniform)
                out << format_number(r.delta) << ',' << format_number(r.rate_upper) << ','
                    << format_number(r.rate_lower) << ',' << format_number(r.worst_ratio) << ','
                    << (r.rate_upper <= r.delta && r.rate_lower <= r.delta ? "yes" : "no") << '\n';
        }
        if (progress) progress("computing oracle mixture");
        const auto oracle = compute_oracle(cfg, loss);
        if (progress) progress("running regret envelope");
        const auto rows = regret_envelope(cfg, loss, oracle.loss, cfg.check.horizons);
        out << "# regret envelope, optimal loss " << format_number(oracle.loss) << '\n';
        out << "T,seed,regret,bound,holds\n";
        for (const auto& r : rows)
            out << r.horizon << ',' << r.seed << ',' << format_number(r.regret) << ',' << format_number(r.bound) << ','
                << (r.holds() ? "yes" : "no") << '\n';
        return 0;
    }
    throw ConfigError("unknown subcommand " + opts.subcommand);
}

}  // namespace detail

// Exit codes: 0 success, 1 configuration error, 2 runtime error.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Online selection of sample-source mixtures under kernel losses", "mixucb"};
    app.require_subcommand(1, 1);
    CliOptions opts;
    auto add_common = [&opts](CLI::App* sub, bool config_required) {
        auto* cfg = sub->add_option("--config", opts.config, "experiment config (JSON)");
        if (config_required) cfg->required();
        sub->add_option("--set", opts.overrides, "override a config key, KEY=VALUE (repeatable)");
        sub->add_option("--out", opts.out, std::string("output directory (overrides ") + kOutDirEnv + ")");
        sub->add_option("--jobs", opts.jobs, "maximum concurrent runs");
        sub->add_flag("--quiet", opts.quiet, "suppress progress output");
    };
    add_common(app.add_subcommand("run", "run all policies and seeds, then export results"), true);
    add_common(app.add_subcommand("oracle", "estimate the optimal mixture"), true);
    add_common(app.add_subcommand("compare", "run all policies and print an aggregate table"), true);
    add_common(app.add_subcommand("check-bound", "validate concentration and the regret envelope"), true);
    add_common(app.add_subcommand("validate-config", "check a config without running anything"), true);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    opts.subcommand = app.get_subcommands().front()->get_name();
    try {
        return detail::dispatch(opts, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace mixucb
