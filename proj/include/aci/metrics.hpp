#pragma once

// Coverage diagnostics over a finished trajectory.

#include "aci/conformal.hpp"
#include "aci/core.hpp"
#include "aci/error.hpp"
#include "aci/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace aci {

/// Per-step record of an online run: the universal experiment output.
struct TrajectoryReport {
    std::vector<ErrBit> errs;
    std::vector<double> alphas;
    std::vector<PredictionInterval> intervals;
    std::vector<std::string> step_labels;
    AciConfig config_echo{};
    /// false when the run aborted part-way; `failure` then says why.
    bool complete = true;
    std::string failure;

    std::size_t size() const noexcept { return errs.size(); }
    bool empty() const noexcept { return errs.empty(); }

    void append(std::string label, double alpha_t, ErrBit err, PredictionInterval interval) {
        step_labels.push_back(std::move(label));
        alphas.push_back(alpha_t);
        errs.push_back(err);
        intervals.push_back(interval);
    }

    void mark_failed(std::string why) {
        complete = false;
        failure = std::move(why);
    }
};

struct CoverageSummary {
    double average_coverage = 0.0;
    double max_local_deviation = 0.0;
    /// +inf when the bound is undefined (gamma = 0); the check then holds vacuously.
    double prop_bound_value = 0.0;
    bool prop_bound_satisfied = false;
    std::size_t steps = 0;
    std::size_t window = 0;
};

/// 1 - (1/w) sum of errs over every complete window of length w.
/// Entry j is centred at step j + w/2 - 1, i.e. it averages steps [j, j + w).
inline std::vector<double> local_coverage(std::span<const ErrBit> errs, std::size_t window) {
    if (window == 0 || window % 2 != 0)
        throw DomainError("local coverage window must be a positive even number");
    if (window > errs.size())
        throw NoDataError("local coverage window (" + std::to_string(window) +
                          ") exceeds trajectory length (" + std::to_string(errs.size()) + ")");
    std::vector<double> out;
    out.reserve(errs.size() - window + 1);
    std::size_t sum = 0;
    for (std::size_t i = 0; i < window; ++i) sum += static_cast<std::size_t>(to_int(errs[i]));
    const double w = static_cast<double>(window);
    out.push_back(1.0 - static_cast<double>(sum) / w);
    for (std::size_t i = window; i < errs.size(); ++i) {
        sum += static_cast<std::size_t>(to_int(errs[i]));
        sum -= static_cast<std::size_t>(to_int(errs[i - window]));
        out.push_back(1.0 - static_cast<double>(sum) / w);
    }
    return out;
}

inline double average_coverage(std::span<const ErrBit> errs) {
    if (errs.empty()) throw NoDataError("average coverage of an empty trajectory");
    std::size_t sum = 0;
    for (ErrBit e : errs) sum += static_cast<std::size_t>(to_int(e));
    return 1.0 - static_cast<double>(sum) / static_cast<double>(errs.size());
}

struct CoverageBand {
    std::vector<double> lower;
    std::vector<double> upper;
};

/// Pointwise central `band_quantile` envelope of local coverage for i.i.d.
/// Bernoulli(alpha) err sequences of length T.
inline CoverageBand bernoulli_band(std::size_t T, double alpha, std::size_t window, std::size_t reps,
                                   double band_quantile, std::uint64_t seed) {
    if (reps < 100) throw DomainError("bernoulli_band needs at least 100 replications");
    if (!(band_quantile > 0.0 && band_quantile < 1.0))
        throw DomainError("band quantile must lie in (0, 1)");
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
    if (window > T) throw NoDataError("band window exceeds horizon");

    const std::size_t points = T - window + 1;
    std::vector<double> samples(points * reps);  // samples[point * reps + rep]
    std::vector<ErrBit> errs(T);
    for (std::size_t r = 0; r < reps; ++r) {
        Rng rng = Rng::stream(seed, r);
        for (auto& e : errs) e = err_from(rng.bernoulli(alpha));
        const auto cov = local_coverage(errs, window);
        for (std::size_t j = 0; j < points; ++j) samples[j * reps + r] = cov[j];
    }

    const double lo_p = (1.0 - band_quantile) / 2.0;
    const double hi_p = (1.0 + band_quantile) / 2.0;
    CoverageBand band;
    band.lower.reserve(points);
    band.upper.reserve(points);
    for (std::size_t j = 0; j < points; ++j) {
        std::span<double> col(samples.data() + j * reps, reps);
        std::sort(col.begin(), col.end());
        band.lower.push_back(detail::quantile_of_sorted(col, lo_p));
        band.upper.push_back(detail::quantile_of_sorted(col, hi_p));
    }
    return band;
}

inline CoverageSummary summarize(const TrajectoryReport& report, std::size_t window) {
    if (report.empty()) throw NoDataError("cannot summarize an empty trajectory");
    const auto& cfg = report.config_echo;
    CoverageSummary s;
    s.steps = report.size();
    s.window = window;
    s.average_coverage = average_coverage(report.errs);

    const double target = 1.0 - cfg.target_miscoverage;
    for (double c : local_coverage(report.errs, window))
        s.max_local_deviation = std::max(s.max_local_deviation, std::abs(c - target));

    std::size_t misses = 0;
    for (ErrBit e : report.errs) misses += static_cast<std::size_t>(to_int(e));
    const double miscoverage = static_cast<double>(misses) / static_cast<double>(report.size());
    if (cfg.step_size == 0.0) {
        s.prop_bound_value = inf;
        s.prop_bound_satisfied = true;
    } else {
        s.prop_bound_value = prop_bound(cfg, report.size());
        s.prop_bound_satisfied = std::abs(miscoverage - cfg.target_miscoverage) <= s.prop_bound_value;
    }
    return s;
}

}  // namespace aci
