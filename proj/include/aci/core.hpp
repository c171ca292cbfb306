#pragma once

// Adaptive conformal inference: the online miscoverage level alpha_t.
//
// At every step the caller asks for `effective_quantile_level(state)`, builds a
// prediction set from the calibration quantile at that level, observes whether
// the label fell outside (the err bit), and feeds it back through `update`.
//
//   simple:    alpha_{t+1} = alpha_t + gamma * (alpha - err_t)
//   weighted:  alpha_{t+1} = alpha_t + gamma * (alpha - W_t),
//              W_t = sum_s decay^{t-s} err_s / sum_s decay^{t-s}
//
// Levels outside [0, 1] follow the quantile conventions Q(x) = -inf for x < 0
// and Q(x) = +inf for x > 1, which force the err bit. `update` applies the
// forced value itself, so alpha_t stays inside [-bound, 1 + bound] with
// bound = level_bound(config) no matter what the caller reports.

#include "aci/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>

namespace aci {

struct SimpleUpdate {
    friend bool operator==(const SimpleUpdate&, const SimpleUpdate&) = default;
};

struct WeightedGeometricUpdate {
    double decay = 0.95;
    friend bool operator==(const WeightedGeometricUpdate&, const WeightedGeometricUpdate&) = default;
};

using UpdateRule = std::variant<SimpleUpdate, WeightedGeometricUpdate>;

inline constexpr double default_step_size = 0.005;
inline constexpr double default_decay = 0.95;

struct AciConfig {
    double target_miscoverage = 0.1;
    double step_size = default_step_size;
    double initial_level = 0.1;
    UpdateRule update_rule = SimpleUpdate{};

    /// The non-adaptive baseline: gamma = 0 pins alpha_t at alpha.
    static AciConfig fixed(double alpha) { return {alpha, 0.0, alpha, SimpleUpdate{}}; }

    static AciConfig adaptive(double alpha, double gamma = default_step_size) {
        return {alpha, gamma, alpha, SimpleUpdate{}};
    }

    bool is_weighted() const noexcept {
        return std::holds_alternative<WeightedGeometricUpdate>(update_rule);
    }

    double decay() const noexcept {
        if (const auto* w = std::get_if<WeightedGeometricUpdate>(&update_rule)) return w->decay;
        return 0.0;
    }

    friend bool operator==(const AciConfig&, const AciConfig&) = default;
};

inline void validate(const AciConfig& c) {
    if (!(c.target_miscoverage > 0.0 && c.target_miscoverage < 1.0))
        throw ConfigError("target miscoverage must lie in (0, 1), got " +
                          std::to_string(c.target_miscoverage));
    if (!(c.step_size >= 0.0) || !std::isfinite(c.step_size))
        throw ConfigError("step size must be a finite nonnegative number, got " +
                          std::to_string(c.step_size));
    if (!(c.initial_level >= 0.0 && c.initial_level <= 1.0))
        throw ConfigError("initial level must lie in [0, 1], got " + std::to_string(c.initial_level));
    if (c.is_weighted()) {
        const double d = c.decay();
        if (!(d > 0.0 && d < 1.0))
            throw ConfigError("weighted update decay must lie in (0, 1), got " + std::to_string(d));
    }
}

/// Half-width of the excursion allowed outside [0, 1].
/// gamma for the simple rule; gamma / (1 - decay) for the weighted rule, whose
/// running average W_t can keep pushing alpha_t outward for a few steps after
/// the err bit has been forced.
inline double level_bound(const AciConfig& c) {
    return c.is_weighted() ? c.step_size / (1.0 - c.decay()) : c.step_size;
}

enum class ErrBit : std::uint8_t { covered = 0, miscovered = 1 };

constexpr int to_int(ErrBit e) noexcept { return static_cast<int>(e); }

constexpr ErrBit err_from(bool miss) noexcept { return miss ? ErrBit::miscovered : ErrBit::covered; }

struct EffectiveLevel {
    enum class Kind : std::uint8_t { cover_everything, cover_nothing, level };

    Kind kind = Kind::level;
    double level = 0.0;  // quantile level 1 - alpha_t, meaningful only for Kind::level

    static constexpr EffectiveLevel everything() { return {Kind::cover_everything, 0.0}; }
    static constexpr EffectiveLevel nothing() { return {Kind::cover_nothing, 0.0}; }
    static constexpr EffectiveLevel at(double p) { return {Kind::level, p}; }

    friend bool operator==(const EffectiveLevel&, const EffectiveLevel&) = default;
};

class AciState {
public:
    const AciConfig& config() const noexcept { return config_; }
    double current_level() const noexcept { return level_; }
    std::size_t step_index() const noexcept { return step_; }
    double weighted_err_numerator() const noexcept { return num_; }
    double weighted_err_denominator() const noexcept { return den_; }
    std::size_t cumulative_err_count() const noexcept { return errs_; }

    friend AciState init(const AciConfig& config);
    friend AciState update(AciState state, ErrBit err);

private:
    AciConfig config_{};
    double level_ = 0.1;
    std::size_t step_ = 1;
    double num_ = 0.0;
    double den_ = 0.0;
    std::size_t errs_ = 0;
};

inline AciState init(const AciConfig& config) {
    validate(config);
    AciState s;
    s.config_ = config;
    s.level_ = config.initial_level;
    return s;
}

inline EffectiveLevel effective_quantile_level(const AciState& s) noexcept {
    const double a = s.current_level();
    if (a < 0.0) return EffectiveLevel::everything();
    if (a > 1.0) return EffectiveLevel::nothing();
    return EffectiveLevel::at(1.0 - a);
}

/// One online step. Out-of-range levels override the supplied err bit.
inline AciState update(AciState s, ErrBit err) {
    switch (effective_quantile_level(s).kind) {
    case EffectiveLevel::Kind::cover_everything: err = ErrBit::covered; break;
    case EffectiveLevel::Kind::cover_nothing: err = ErrBit::miscovered; break;
    case EffectiveLevel::Kind::level: break;
    }
    const double e = to_int(err);
    const auto& c = s.config_;

    double signal = e;
    if (c.is_weighted()) {
        const double d = c.decay();
        s.num_ = d * s.num_ + e;
        s.den_ = d * s.den_ + 1.0;
        signal = s.num_ / s.den_;
    }
    s.level_ += c.step_size * (c.target_miscoverage - signal);
    s.errs_ += static_cast<std::size_t>(e);
    ++s.step_;
    return s;
}

/// Guaranteed bound on |T^-1 sum_t err_t - alpha| after `horizon` steps.
///
/// Simple rule: (max{alpha_1, 1 - alpha_1} + gamma) / (T gamma).
/// Weighted rule: the same argument bounds sum_t W_t instead of sum_t err_t; the
/// two sums differ by at most sum_{s<=T} decay^s / (1 - decay^s), which is added.
inline double prop_bound(const AciConfig& c, std::size_t horizon) {
    validate(c);
    if (horizon < 1) throw DomainError("prop_bound needs a horizon of at least one step");
    if (c.step_size == 0.0) throw DomainError("prop_bound is undefined for a zero step size");
    const double T = static_cast<double>(horizon);
    const double head = std::max(c.initial_level, 1.0 - c.initial_level) + level_bound(c);
    double slack = 0.0;
    if (c.is_weighted()) {
        const double d = c.decay();
        double p = 1.0;
        for (std::size_t s = 1; s <= horizon; ++s) {
            p *= d;
            const double term = p / (1.0 - p);
            slack += term;
            if (term < 1e-18 * slack) break;
        }
    }
    return (head / c.step_size + slack) / T;
}

inline double empirical_miscoverage(const AciState& s) {
    if (s.step_index() < 2) throw NoDataError("no err bits observed yet");
    return static_cast<double>(s.cumulative_err_count()) / static_cast<double>(s.step_index() - 1);
}

}  // namespace aci
