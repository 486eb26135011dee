#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "mixucb/arms.hpp"
#include "mixucb/error.hpp"

namespace mixucb {

// Gaussian kernel exp(-|x-y|^2 / (2 sigma^2)), optionally squared.
// The zero kind is the identically-zero kernel under which the quadratic loss becomes linear.
struct KernelSpec {
    enum class Kind { Gaussian, Zero };

    Kind kind = Kind::Gaussian;
    double bandwidth = 1.0;
    bool squared = false;

    static KernelSpec gaussian(double sigma) {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("kernel bandwidth must be > 0");
        return KernelSpec{Kind::Gaussian, sigma, false};
    }
    static KernelSpec zero() { return KernelSpec{Kind::Zero, 1.0, false}; }

    KernelSpec as_squared() const {
        KernelSpec k = *this;
        k.squared = true;
        return k;
    }
};

struct KernelBounds {
    double lower = 0.0;
    double upper = 0.0;
    double range() const { return upper - lower; }
};

inline double eval(const KernelSpec& spec, const Sample& x, const Sample& y) {
    if (x.size() != y.size())
        throw ConfigError("kernel: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                          std::to_string(y.size()) + ")");
    if (spec.kind == KernelSpec::Kind::Zero) return 0.0;
    const double dist2 = (x - y).squaredNorm();
    const double value = std::exp(-dist2 / (2.0 * spec.bandwidth * spec.bandwidth));
    return spec.squared ? value * value : value;
}

// kappa0 is declared 0 rather than the data-dependent infimum, so the range is the constant 1.
inline KernelBounds bounds(const KernelSpec& spec) {
    if (spec.kind == KernelSpec::Kind::Zero) return {0.0, 0.0};
    return {0.0, 1.0};
}

}  // namespace mixucb
