#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mixucb/error.hpp"
#include "mixucb/rng.hpp"

namespace mixucb {

// One generated item's embedding.
using Sample = Eigen::VectorXd;

inline bool is_finite(const Sample& x) {
    return x.size() >= 1 && x.allFinite();
}

// Isotropic gaussian mixture: component c has mean means[c], per-coordinate sd sds[c].
struct GaussianMixtureSpec {
    std::vector<Sample> means;
    std::vector<double> sds;
    std::vector<double> weights;
};

enum class DrawMode { WithoutReplacement, WithReplacement };

struct FilePoolSpec {
    std::string path;
    DrawMode mode = DrawMode::WithoutReplacement;
};

using SourceSpec = std::variant<GaussianMixtureSpec, FilePoolSpec>;

inline GaussianMixtureSpec point_mass(Sample at) {
    return GaussianMixtureSpec{{std::move(at)}, {0.0}, {1.0}};
}

inline GaussianMixtureSpec isotropic_gaussian(Sample mean, double sd) {
    return GaussianMixtureSpec{{std::move(mean)}, {sd}, {1.0}};
}

inline void validate(const GaussianMixtureSpec& spec) {
    const std::size_t k = spec.means.size();
    if (k == 0) throw ConfigError("gaussian-mixture: at least one component required");
    if (spec.sds.size() != k || spec.weights.size() != k)
        throw ConfigError("gaussian-mixture: means, sds and weights must have equal length");
    const auto d = spec.means.front().size();
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        if (spec.means[c].size() != d || !is_finite(spec.means[c]))
            throw ConfigError("gaussian-mixture: component means must be finite and of equal dimension");
        if (!(spec.sds[c] >= 0.0) || !std::isfinite(spec.sds[c]))
            throw ConfigError("gaussian-mixture: sd must be finite and >= 0");
        if (!(spec.weights[c] >= 0.0)) throw ConfigError("gaussian-mixture: invalid weights (negative entry)");
        total += spec.weights[c];
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("gaussian-mixture: invalid weights (must sum to 1)");
}

// Embedding pool file: one sample per line, comma separated decimals, optional leading '#' header line.
inline std::vector<Sample> parse_embedding_text(std::istream& in, const std::string& origin) {
    std::vector<Sample> rows;
    std::string line;
    std::size_t line_no = 0;
    Eigen::Index width = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 && !line.empty() && line.front() == '#') continue;
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<double> values;
        std::stringstream fields(line);
        std::string field;
        while (std::getline(fields, field, ',')) {
            const char* begin = field.c_str();
            char* end = nullptr;
            const double v = std::strtod(begin, &end);
            while (end && (*end == ' ' || *end == '\t')) ++end;
            if (end == begin || (end && *end != '\0') || !std::isfinite(v))
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": malformed number '" + field + "'");
            values.push_back(v);
        }
        if (!line.empty() && line.back() == ',')
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": trailing comma");
        const auto n = static_cast<Eigen::Index>(values.size());
        if (width < 0) width = n;
        if (n != width)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": inconsistent row dimension (expected " +
                              std::to_string(width) + ", got " + std::to_string(n) + ")");
        rows.emplace_back(Eigen::Map<const Eigen::VectorXd>(values.data(), n));
    }
    if (rows.empty()) throw ConfigError(origin + ": empty pool");
    return rows;
}

inline std::vector<Sample> load_embedding_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open embedding file: " + path);
    return parse_embedding_text(in, path);
}

// Stateful, seeded draw stream. Single owner; rebuild with a new seed for another run.
class SampleSource {
public:
    SampleSource(GaussianMixtureSpec spec, RngSeed seed) : engine_(make_engine(seed)), gaussian_(std::move(spec)) {
        validate(gaussian_);
        dim_ = gaussian_.means.front().size();
        cumulative_.resize(gaussian_.weights.size());
        std::partial_sum(gaussian_.weights.begin(), gaussian_.weights.end(), cumulative_.begin());
    }

    SampleSource(std::vector<Sample> pool, DrawMode mode, RngSeed seed)
        : engine_(make_engine(seed)), pool_(std::move(pool)), mode_(mode) {
        if (pool_.empty()) throw ConfigError("empty pool");
        dim_ = pool_.front().size();
        for (const auto& row : pool_)
            if (row.size() != dim_ || !is_finite(row)) throw ConfigError("pool rows must be finite and of equal dimension");
        order_.resize(pool_.size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        if (mode_ == DrawMode::WithoutReplacement) std::shuffle(order_.begin(), order_.end(), engine_);
    }

    Eigen::Index dimension() const { return dim_; }
    bool is_pool() const { return !pool_.empty(); }

    // Draws still available; nullopt when unlimited.
    std::optional<std::size_t> remaining() const {
        if (is_pool() && mode_ == DrawMode::WithoutReplacement) return pool_.size() - cursor_;
        return std::nullopt;
    }

    Sample draw() {
        if (is_pool()) return draw_pool();
        return draw_gaussian();
    }

    std::vector<Sample> draw_batch(std::size_t l) {
        if (l == 0) throw ConfigError("batch size must be positive");
        if (auto left = remaining(); left && *left < l) throw RuntimeError("sample pool exhausted");
        std::vector<Sample> out;
        out.reserve(l);
        for (std::size_t i = 0; i < l; ++i) out.push_back(draw());
        return out;
    }

private:
    Sample draw_gaussian() {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double u = unit(engine_);
        std::size_t c = cumulative_.size();
        for (std::size_t j = 0; j < cumulative_.size(); ++j) {
            if (gaussian_.weights[j] > 0.0 && u < cumulative_[j]) {
                c = j;
                break;
            }
        }
        if (c == cumulative_.size()) {
            // rounding: u beyond the last cumulative weight
            c = cumulative_.size() - 1;
            while (gaussian_.weights[c] <= 0.0) --c;
        }
        const double sd = gaussian_.sds[c];
        Sample x = gaussian_.means[c];
        if (sd > 0.0) {
            std::normal_distribution<double> normal(0.0, 1.0);
            for (Eigen::Index k = 0; k < dim_; ++k) x[k] += sd * normal(engine_);
        }
        return x;
    }

    Sample draw_pool() {
        if (mode_ == DrawMode::WithoutReplacement) {
            if (cursor_ >= order_.size()) throw RuntimeError("sample pool exhausted");
            return pool_[order_[cursor_++]];
        }
        std::uniform_int_distribution<std::size_t> pick(0, pool_.size() - 1);
        return pool_[pick(engine_)];
    }

    Engine engine_;
    Eigen::Index dim_ = 0;
    GaussianMixtureSpec gaussian_;
    std::vector<double> cumulative_;
    std::vector<Sample> pool_;
    DrawMode mode_ = DrawMode::WithReplacement;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

// planned_draws, when given, is checked against without-replacement pool sizes.
inline SampleSource build_source(const SourceSpec& spec, RngSeed seed,
                                 std::optional<std::size_t> planned_draws = std::nullopt) {
    if (const auto* g = std::get_if<GaussianMixtureSpec>(&spec)) return SampleSource(*g, seed);
    const auto& file = std::get<FilePoolSpec>(spec);
    auto rows = load_embedding_file(file.path);
    if (file.mode == DrawMode::WithoutReplacement && planned_draws && rows.size() < *planned_draws)
        throw ConfigError(file.path + ": pool has " + std::to_string(rows.size()) + " rows but " +
                          std::to_string(*planned_draws) + " draws are planned without replacement");
    return SampleSource(std::move(rows), file.mode, seed);
}

inline std::vector<SampleSource> build_sources(const std::vector<SourceSpec>& specs, RngSeed run_seed,
                                               std::optional<std::size_t> planned_draws = std::nullopt) {
    std::vector<SampleSource> out;
    out.reserve(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i)
        out.push_back(build_source(specs[i], derive_seed(run_seed, kArmStreamBase + i), planned_draws));
    return out;
}

}  // namespace mixucb
