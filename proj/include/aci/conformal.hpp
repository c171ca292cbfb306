#pragma once

// Split-conformal building blocks: conformity scores, the empirical quantile of
// calibration scores, and the explicit prediction interval {y : S(y) <= Q}.

#include "aci/core.hpp"
#include "aci/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <span>
#include <utility>
#include <variant>
#include <vector>

namespace aci {

inline constexpr double inf = std::numeric_limits<double>::infinity();

/// Multiset of calibration scores, kept sorted.
class CalibrationScores {
public:
    CalibrationScores() = default;

    explicit CalibrationScores(std::vector<double> scores) : sorted_(std::move(scores)) {
        for (double s : sorted_)
            if (!std::isfinite(s)) throw DomainError("calibration scores must be finite");
        std::sort(sorted_.begin(), sorted_.end());
    }

    std::size_t size() const noexcept { return sorted_.size(); }
    bool empty() const noexcept { return sorted_.empty(); }
    std::span<const double> sorted() const noexcept { return sorted_; }

private:
    std::vector<double> sorted_;
};

namespace detail {

/// Smallest k in [1, n] with k / n >= p, evaluated exactly as the definition reads.
inline std::size_t quantile_rank(std::size_t n, double p) {
    const double nd = static_cast<double>(n);
    auto k = static_cast<std::size_t>(std::clamp(std::ceil(p * nd), 1.0, nd));
    while (k > 1 && static_cast<double>(k - 1) / nd >= p) --k;
    while (k < n && static_cast<double>(k) / nd < p) ++k;
    return k;
}

inline double quantile_of_sorted(std::span<const double> sorted, double p) {
    if (p <= 0.0) return -inf;
    if (p > 1.0) return inf;
    if (sorted.empty()) throw NoDataError("empirical quantile of an empty calibration set");
    return sorted[quantile_rank(sorted.size(), p) - 1];
}

}  // namespace detail

/// inf{s : (1/n) #{S_r <= s} >= p}; -inf for p <= 0 and +inf for p > 1.
inline double empirical_quantile(const CalibrationScores& cal, double p) {
    return detail::quantile_of_sorted(cal.sorted(), p);
}

/// Calibration quantile at an effective level: +inf covers everything, -inf nothing.
inline double threshold_at(const CalibrationScores& cal, const EffectiveLevel& level) {
    switch (level.kind) {
    case EffectiveLevel::Kind::cover_everything: return inf;
    case EffectiveLevel::Kind::cover_nothing: return -inf;
    case EffectiveLevel::Kind::level: break;
    }
    return empirical_quantile(cal, level.level);
}

/// Trailing window of the most recent `capacity` scores with O(1) quantiles.
class ScoreWindow {
public:
    explicit ScoreWindow(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw DomainError("score window capacity must be positive");
    }

    void push(double score) {
        if (!std::isfinite(score)) throw DomainError("calibration scores must be finite");
        if (order_.size() == capacity_) {
            const double old = order_.front();
            order_.pop_front();
            sorted_.erase(std::lower_bound(sorted_.begin(), sorted_.end(), old));
        }
        order_.push_back(score);
        sorted_.insert(std::upper_bound(sorted_.begin(), sorted_.end(), score), score);
    }

    std::size_t size() const noexcept { return order_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }

    double quantile(double p) const { return detail::quantile_of_sorted(sorted_, p); }

    double threshold(const EffectiveLevel& level) const {
        switch (level.kind) {
        case EffectiveLevel::Kind::cover_everything: return inf;
        case EffectiveLevel::Kind::cover_nothing: return -inf;
        case EffectiveLevel::Kind::level: break;
        }
        return quantile(level.level);
    }

    CalibrationScores snapshot() const { return CalibrationScores(sorted_); }

private:
    std::size_t capacity_;
    std::deque<double> order_;
    std::vector<double> sorted_;
};

// ---------------------------------------------------------------------------
// Score kinds
// ---------------------------------------------------------------------------

/// |prediction - y|
struct AbsoluteScore {
    double prediction = 0.0;
};

/// |y - sigma2| / sigma2, used for realized volatility against a variance forecast.
struct NormalizedScore {
    double sigma2 = 1.0;
};

/// max{lo - y, y - hi}: signed distance outside fitted lower/upper quantiles.
struct CqrScore {
    double lo = 0.0;
    double hi = 0.0;
};

using ScoreContext = std::variant<AbsoluteScore, NormalizedScore, CqrScore>;

/// Builds a CQR context with ordered bounds. Sets `crossed` when the fitted
/// quantiles came in reversed and had to be swapped.
inline CqrScore make_cqr(double q_lo, double q_hi, bool* crossed = nullptr) {
    const bool swap = q_lo > q_hi;
    if (crossed) *crossed = swap;
    return swap ? CqrScore{q_hi, q_lo} : CqrScore{q_lo, q_hi};
}

template <class... Fs>
struct overloaded : Fs... {
    using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

inline double compute_score(const ScoreContext& ctx, double y) {
    return std::visit(
        overloaded{
            [y](const AbsoluteScore& a) { return std::abs(a.prediction - y); },
            [y](const NormalizedScore& n) {
                if (!(n.sigma2 > 0.0)) throw DomainError("normalized score needs a positive variance");
                return std::abs(y - n.sigma2) / n.sigma2;
            },
            [y](const CqrScore& c) { return std::max(c.lo - y, y - c.hi); },
        },
        ctx);
}

/// Closed interval on the extended real line; `empty` marks the empty set.
struct PredictionInterval {
    double lower = -inf;
    double upper = inf;
    bool empty = false;

    static PredictionInterval whole_line() { return {-inf, inf, false}; }
    static PredictionInterval empty_set() { return {inf, -inf, true}; }
    static PredictionInterval closed(double lo, double hi) {
        return lo <= hi ? PredictionInterval{lo, hi, false} : empty_set();
    }

    bool contains(double y) const noexcept { return !empty && lower <= y && y <= upper; }

    friend bool operator==(const PredictionInterval&, const PredictionInterval&) = default;
};

/// {y : S(y) <= threshold} written out per score kind.
inline PredictionInterval invert_to_interval(const ScoreContext& ctx, double threshold) {
    if (threshold == inf) return PredictionInterval::whole_line();
    if (threshold == -inf || std::isnan(threshold)) return PredictionInterval::empty_set();
    return std::visit(
        overloaded{
            [threshold](const AbsoluteScore& a) {
                if (threshold < 0.0) return PredictionInterval::empty_set();
                return PredictionInterval::closed(a.prediction - threshold, a.prediction + threshold);
            },
            [threshold](const NormalizedScore& n) {
                if (!(n.sigma2 > 0.0)) throw DomainError("normalized score needs a positive variance");
                if (threshold < 0.0) return PredictionInterval::empty_set();
                // Realized volatility is nonnegative; the clip drops only points with no preimage.
                return PredictionInterval::closed(std::max(0.0, n.sigma2 * (1.0 - threshold)),
                                                  n.sigma2 * (1.0 + threshold));
            },
            [threshold](const CqrScore& c) {
                return PredictionInterval::closed(c.lo - threshold, c.hi + threshold);
            },
        },
        ctx);
}

/// 1 iff the score strictly exceeds the threshold.
constexpr ErrBit err_indicator(double score, double threshold) noexcept {
    return err_from(score > threshold);
}

}  // namespace aci
