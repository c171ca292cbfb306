#pragma once

// Election-night prediction with conformalized quantile regression.
//
// Counties report one at a time. Once `warmup` of them are in, each new county
// gets an interval for its vote count: the relative change
// r = (y - y_prev) / y_prev is modelled by linear quantile regressions at
// alpha/2 and 1 - alpha/2 fitted on a random 75% of the reported counties, and
// the remaining 25% calibrate the CQR score.

#include "aci/conformal.hpp"
#include "aci/core.hpp"
#include "aci/error.hpp"
#include "aci/metrics.hpp"
#include "aci/quantile_regression.hpp"
#include "aci/random.hpp"

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace aci {

struct CountyRecord {
    std::string id;
    double population = 1.0;
    std::vector<double> covariates;
    double y_prev = 1.0;  // votes in the previous election
    double y = 0.0;       // votes now

    double residual() const { return (y - y_prev) / y_prev; }
};

inline void validate(const CountyRecord& c) {
    if (!(c.population > 0.0) || !std::isfinite(c.population))
        throw DomainError("county " + c.id + ": population must be positive");
    if (!(c.y_prev > 0.0) || !std::isfinite(c.y_prev))
        throw DomainError("county " + c.id + ": previous votes must be positive");
    if (!(c.y >= 0.0) || !std::isfinite(c.y)) throw DomainError("county " + c.id + ": votes must be nonnegative");
    for (double x : c.covariates)
        if (!std::isfinite(x)) throw DomainError("county " + c.id + ": covariates must be finite");
}

/// Counties are drawn without replacement with weight exp(sigma * population).
/// sigma = +inf orders by population, largest first.
struct OrderingSpec {
    double sigma = 0.0;
};

inline std::vector<std::size_t> sample_ordering(std::span<const double> populations, const OrderingSpec& spec,
                                                Rng& rng) {
    if (populations.empty()) throw NoDataError("cannot order an empty set of counties");
    if (!(spec.sigma >= 0.0)) throw DomainError("ordering sigma must be nonnegative");
    std::vector<std::size_t> order(populations.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (std::isinf(spec.sigma)) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return populations[a] > populations[b]; });
        return order;
    }
    // Sorting sigma * pop + Gumbel noise in descending order samples sequentially
    // without replacement with weights exp(sigma * pop), with no exp() overflow.
    std::vector<double> keys(populations.size());
    for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = spec.sigma * populations[i] + rng.gumbel();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
    return order;
}

/// Synthetic counties whose relative vote change depends on the covariates, on
/// log-population through a term no linear model in the covariates captures,
/// and on noise that grows with population.
inline std::vector<CountyRecord> generate_synthetic_counties(std::size_t n, std::size_t d, std::uint64_t seed) {
    if (d < 1) throw DomainError("synthetic counties need at least one covariate");
    Rng rng(seed);
    std::vector<double> loading(d), effect(d);
    for (std::size_t j = 0; j < d; ++j) {
        loading[j] = 0.8 * std::cos(1.7 * static_cast<double>(j));
        effect[j] = 0.015 * std::sin(static_cast<double>(j) + 1.0);
    }
    std::vector<CountyRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        CountyRecord c;
        c.id = "c" + std::to_string(i + 1);
        const double u = rng.normal();  // standardised log-population
        c.population = std::max(1.0, std::round(std::exp(10.0 + 1.2 * u)));
        c.covariates.resize(d);
        double mean = 0.02;
        for (std::size_t j = 0; j < d; ++j) {
            const double x = loading[j] * u + std::sqrt(1.0 - loading[j] * loading[j]) * rng.normal();
            c.covariates[j] = x;
            mean += effect[j] * x;
        }
        mean += 0.01 * u * u;
        const double noise = 0.03 * std::exp(0.25 * u);
        const double r = mean + noise * rng.normal();
        c.y_prev = std::max(1.0, std::round(c.population * 0.4 * std::exp(0.1 * rng.normal())));
        c.y = std::max(0.0, c.y_prev * (1.0 + r));
        out.push_back(std::move(c));
    }
    return out;
}

struct ElectionRunConfig {
    std::size_t warmup = 500;
    double cal_frac = 0.25;
    std::size_t refit_every = 1;
};

/// Runs the election pipeline once per ACI configuration on a shared sequence
/// of splits and fits. `ordering[k]` is the index of the k-th county to report.
inline std::vector<TrajectoryReport> run_election_experiments(std::span<const CountyRecord> counties,
                                                              std::span<const std::size_t> ordering,
                                                              std::span<const AciConfig> configs,
                                                              const ElectionRunConfig& run, Rng& rng) {
    if (run.refit_every == 0) throw ConfigError("refit_every must be at least 1");
    if (!(run.cal_frac > 0.0 && run.cal_frac < 1.0)) throw ConfigError("calibration fraction must lie in (0, 1)");
    if (ordering.size() != counties.size()) throw DomainError("ordering must be a permutation of the counties");
    {
        std::vector<bool> seen(counties.size(), false);
        for (std::size_t k : ordering) {
            if (k >= counties.size() || seen[k]) throw DomainError("ordering must be a permutation of the counties");
            seen[k] = true;
        }
    }
    if (counties.size() < run.warmup + 1)
        throw NoDataError("need at least warmup + 1 = " + std::to_string(run.warmup + 1) + " counties");
    const std::size_t d = counties.front().covariates.size();
    for (const auto& c : counties) {
        validate(c);
        if (c.covariates.size() != d) throw DomainError("county " + c.id + ": covariate dimension mismatch");
    }

    std::vector<AciState> states;
    std::vector<TrajectoryReport> reports(configs.size());
    for (std::size_t k = 0; k < configs.size(); ++k) {
        states.push_back(init(configs[k]));
        reports[k].config_echo = configs[k];
    }
    if (configs.empty()) return reports;
    const double alpha = configs.front().target_miscoverage;
    for (const auto& c : configs)
        if (c.target_miscoverage != alpha)
            throw ConfigError("configurations sharing fits must share the target miscoverage");

    QrModel lo_model, hi_model;
    CalibrationScores cal;
    std::size_t crossings = 0, fits = 0;
    std::vector<std::size_t> observed;

    for (std::size_t i = run.warmup; i < ordering.size(); ++i) {
        try {
            if ((i - run.warmup) % run.refit_every == 0) {
                observed.assign(ordering.begin(), ordering.begin() + static_cast<std::ptrdiff_t>(i));
                rng.shuffle(std::span(observed));
                const auto n_train =
                    static_cast<std::size_t>(std::floor(static_cast<double>(i) * (1.0 - run.cal_frac)));
                if (n_train < d + 1 || n_train >= i)
                    throw NoDataError("too few counties for a train/calibration split at step " +
                                      std::to_string(i + 1));
                Eigen::MatrixXd X(static_cast<Eigen::Index>(n_train), static_cast<Eigen::Index>(d));
                std::vector<double> r(n_train);
                for (std::size_t k = 0; k < n_train; ++k) {
                    const auto& c = counties[observed[k]];
                    for (std::size_t j = 0; j < d; ++j)
                        X(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = c.covariates[j];
                    r[k] = c.residual();
                }
                lo_model = fit_quantile_regression(X, r, alpha / 2.0);
                hi_model = fit_quantile_regression(X, r, 1.0 - alpha / 2.0);
                std::vector<double> scores;
                scores.reserve(i - n_train);
                for (std::size_t k = n_train; k < i; ++k) {
                    const auto& c = counties[observed[k]];
                    bool crossed = false;
                    const CqrScore ctx =
                        make_cqr(lo_model.predict(c.covariates), hi_model.predict(c.covariates), &crossed);
                    crossings += crossed;
                    scores.push_back(compute_score(ctx, c.residual()));
                }
                cal = CalibrationScores(std::move(scores));
                ++fits;
            }
        } catch (const Error& e) {
            for (auto& rep : reports) rep.mark_failed(e.what());
            spdlog::error("election run aborted at county {}: {}", i + 1, e.what());
            return reports;
        }

        const auto& c = counties[ordering[i]];
        bool crossed = false;
        const CqrScore ctx = make_cqr(lo_model.predict(c.covariates), hi_model.predict(c.covariates), &crossed);
        crossings += crossed;
        const double score = compute_score(ctx, c.residual());
        for (std::size_t k = 0; k < configs.size(); ++k) {
            const double q = threshold_at(cal, effective_quantile_level(states[k]));
            const ErrBit err = err_indicator(score, q);
            // y = y_prev (1 + r) is increasing in r, so the r-interval maps endpoint-wise.
            PredictionInterval iv = invert_to_interval(ctx, q);
            if (!iv.empty) iv = PredictionInterval::closed(c.y_prev * (1.0 + iv.lower), c.y_prev * (1.0 + iv.upper));
            reports[k].append(c.id, states[k].current_level(), err, iv);
            states[k] = update(states[k], err);
        }
    }
    if (crossings > 0) spdlog::warn("quantile regression bounds crossed {} times and were swapped", crossings);
    spdlog::info("election run: {} predictions, {} refits", ordering.size() - run.warmup, fits);
    return reports;
}

inline TrajectoryReport run_election_experiment(std::span<const CountyRecord> counties,
                                                std::span<const std::size_t> ordering, const AciConfig& config,
                                                const ElectionRunConfig& run, Rng& rng) {
    return std::move(run_election_experiments(counties, ordering, std::span(&config, 1), run, rng).front());
}

}  // namespace aci
