#pragma once

// GARCH(1,1) volatility forecasting and the rolling-window ACI experiment.
//
// Model: R_t = sigma_t * eps_t, eps_t ~ N(0, 1),
//        sigma_t^2 = omega + a * R_{t-1}^2 + b * sigma_{t-1}^2.
// The first conditional variance of a fitting window is the window's sample
// variance. Fitting minimises the Gaussian negative log-likelihood with BFGS
// in an unconstrained parametrisation (log omega, and a softmax map of (a, b)
// onto the open stationarity simplex a, b > 0, a + b < 1).

#include "aci/conformal.hpp"
#include "aci/core.hpp"
#include "aci/error.hpp"
#include "aci/metrics.hpp"
#include "aci/random.hpp"

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace aci {

struct GarchParams {
    double omega = 0.05;
    double arch = 0.10;   // a: weight on the previous squared return
    double garch = 0.85;  // b: weight on the previous conditional variance

    double persistence() const noexcept { return arch + garch; }
    double unconditional_variance() const noexcept { return omega / (1.0 - arch - garch); }
};

inline void validate(const GarchParams& p) {
    if (!(p.omega > 0.0) || !std::isfinite(p.omega)) throw DomainError("GARCH omega must be positive");
    if (!(p.arch >= 0.0) || !(p.garch >= 0.0))
        throw DomainError("GARCH coefficients must be nonnegative");
    if (!(p.arch + p.garch < 1.0)) throw DomainError("GARCH process must be covariance stationary (a + b < 1)");
}

struct ReturnSeries {
    std::vector<double> returns;

    std::size_t size() const noexcept { return returns.size(); }
};

/// R_t = (P_t - P_{t-1}) / P_{t-1}.
inline ReturnSeries returns_from_prices(std::span<const double> prices) {
    if (prices.size() < 2) throw NoDataError("need at least two prices to form a return");
    ReturnSeries out;
    out.returns.reserve(prices.size() - 1);
    for (std::size_t i = 0; i < prices.size(); ++i) {
        if (!(prices[i] > 0.0) || !std::isfinite(prices[i]))
            throw DomainError("prices must be positive and finite (index " + std::to_string(i) + ")");
        if (i > 0) out.returns.push_back((prices[i] - prices[i - 1]) / prices[i - 1]);
    }
    return out;
}

inline constexpr double min_conditional_variance = 1e-12;

inline double sample_variance(std::span<const double> xs) {
    if (xs.empty()) throw NoDataError("variance of an empty series");
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(xs.size());
}

inline double forecast_next_sigma2(const GarchParams& p, double v_prev, double sigma2_prev) {
    return p.omega + p.arch * v_prev + p.garch * sigma2_prev;
}

/// Conditional variances sigma_1^2..sigma_n^2 starting from `sigma2_init`.
inline std::vector<double> garch_variance_path(const GarchParams& p, std::span<const double> returns,
                                               double sigma2_init) {
    std::vector<double> path;
    path.reserve(returns.size());
    double s2 = sigma2_init;
    for (std::size_t t = 0; t < returns.size(); ++t) {
        if (t > 0) s2 = forecast_next_sigma2(p, returns[t - 1] * returns[t - 1], s2);
        if (!(s2 >= min_conditional_variance))
            throw NumericalError("conditional variance underflow at index " + std::to_string(t));
        path.push_back(s2);
    }
    return path;
}

/// 0.5 * sum_t [log(2 pi sigma_t^2) + R_t^2 / sigma_t^2] with an explicit sigma_1^2.
inline double garch_neg_loglik(const GarchParams& p, std::span<const double> returns, double sigma2_init) {
    if (returns.empty()) throw NoDataError("likelihood of an empty return series");
    constexpr double log_2pi = 1.8378770664093454836;
    double nll = 0.0;
    double s2 = sigma2_init;
    for (std::size_t t = 0; t < returns.size(); ++t) {
        if (t > 0) s2 = forecast_next_sigma2(p, returns[t - 1] * returns[t - 1], s2);
        if (!(s2 >= min_conditional_variance))
            throw NumericalError("conditional variance underflow at index " + std::to_string(t));
        nll += 0.5 * (log_2pi + std::log(s2) + returns[t] * returns[t] / s2);
    }
    return nll;
}

/// Likelihood with sigma_1^2 set to the sample variance of the returns.
inline double garch_neg_loglik(const GarchParams& p, const ReturnSeries& r) {
    validate(p);
    return garch_neg_loglik(p, r.returns, sample_variance(r.returns));
}

struct GarchFit {
    GarchParams params;
    std::vector<double> sigma2_path;
    double neg_loglik = 0.0;
    bool converged = false;
    std::size_t iterations = 0;
    /// Infinity norm of the gradient of the per-observation likelihood in the
    /// unconstrained coordinates at the returned point.
    double gradient_norm = 0.0;
};

/// The optimiser hit its iteration cap; `best()` holds the best point found.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, GarchFit best) : Error(what), best_(std::move(best)) {}
    const GarchFit& best() const noexcept { return best_; }

private:
    GarchFit best_;
};

struct GarchFitOptions {
    std::size_t max_iterations = 500;
    double gradient_tolerance = 1e-5;
    std::size_t min_observations = 30;
};

namespace detail {

using Vec3 = Eigen::Vector3d;

inline GarchParams params_from_unconstrained(const Vec3& x) {
    // softmax with a fixed zero logit for the slack 1 - a - b
    const double m = std::max({0.0, x[1], x[2]});
    const double e0 = std::exp(-m), e1 = std::exp(x[1] - m), e2 = std::exp(x[2] - m);
    const double z = e0 + e1 + e2;
    return {std::exp(x[0]), e1 / z, e2 / z};
}

inline Vec3 unconstrained_from_params(const GarchParams& p) {
    const double slack = 1.0 - p.arch - p.garch;
    return {std::log(p.omega), std::log(p.arch / slack), std::log(p.garch / slack)};
}

struct GarchObjective {
    std::span<const double> returns;
    double sigma2_init;

    /// Mean negative log-likelihood and its gradient in unconstrained coordinates.
    /// Returns false when the variance recursion leaves the admissible range.
    bool operator()(const Vec3& x, double& f, Vec3& grad) const {
        const GarchParams p = params_from_unconstrained(x);
        if (!std::isfinite(p.omega) || p.omega <= 0.0) return false;
        constexpr double log_2pi = 1.8378770664093454836;
        double s2 = sigma2_init;
        double d_omega = 0.0, d_a = 0.0, d_b = 0.0;
        double nll = 0.0, g_omega = 0.0, g_a = 0.0, g_b = 0.0;
        for (std::size_t t = 0; t < returns.size(); ++t) {
            if (t > 0) {
                const double v = returns[t - 1] * returns[t - 1];
                d_omega = 1.0 + p.garch * d_omega;
                d_a = v + p.garch * d_a;
                d_b = s2 + p.garch * d_b;
                s2 = p.omega + p.arch * v + p.garch * s2;
            }
            if (!(s2 >= min_conditional_variance) || !std::isfinite(s2)) return false;
            const double r2 = returns[t] * returns[t];
            nll += 0.5 * (log_2pi + std::log(s2) + r2 / s2);
            const double ds2 = 0.5 * (1.0 / s2 - r2 / (s2 * s2));
            g_omega += ds2 * d_omega;
            g_a += ds2 * d_a;
            g_b += ds2 * d_b;
        }
        const double n = static_cast<double>(returns.size());
        f = nll / n;
        g_omega /= n;
        g_a /= n;
        g_b /= n;
        grad[0] = g_omega * p.omega;
        grad[1] = g_a * p.arch * (1.0 - p.arch) - g_b * p.arch * p.garch;
        grad[2] = -g_a * p.arch * p.garch + g_b * p.garch * (1.0 - p.garch);
        return std::isfinite(f) && grad.allFinite();
    }
};

struct BfgsResult {
    Vec3 x;
    double f;
    double grad_norm;
    std::size_t iterations;
    bool converged;
};

inline BfgsResult minimize_bfgs(const GarchObjective& obj, Vec3 x, const GarchFitOptions& opt) {
    double f;
    Vec3 g;
    if (!obj(x, f, g)) throw NumericalError("GARCH likelihood undefined at the starting point");
    Eigen::Matrix3d H = Eigen::Matrix3d::Identity();
    bool fresh = true;
    std::size_t it = 0;
    for (; it < opt.max_iterations; ++it) {
        if (g.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance) break;
        Vec3 d = -H * g;
        if (g.dot(d) >= 0.0) {
            H.setIdentity();
            fresh = true;
            d = -g;
        }
        // Cap the trial step so exp() in the parametrisation cannot overflow.
        double step = std::min(1.0, 4.0 / std::max(d.lpNorm<Eigen::Infinity>(), 1e-300));
        const double slope = g.dot(d);
        bool accepted = false;
        Vec3 x_new, g_new;
        double f_new = 0.0;
        for (int k = 0; k < 60; ++k, step *= 0.5) {
            x_new = x + step * d;
            if (obj(x_new, f_new, g_new) && f_new <= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (fresh) break;
            H.setIdentity();
            fresh = true;
            continue;
        }
        const Vec3 s = x_new - x;
        const Vec3 y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (fresh) H = Eigen::Matrix3d::Identity() * (sy / y.squaredNorm());
            const double rho = 1.0 / sy;
            const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
            H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
            fresh = false;
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    const double gn = g.lpNorm<Eigen::Infinity>();
    return {x, f, gn, it, gn <= opt.gradient_tolerance};
}

}  // namespace detail

/// Maximum-likelihood GARCH(1,1) fit from three fixed starting points.
inline GarchFit fit_garch(const ReturnSeries& r, const GarchFitOptions& opt = {}) {
    if (r.size() < opt.min_observations)
        throw NoDataError("GARCH fit needs at least " + std::to_string(opt.min_observations) + " returns");
    for (double x : r.returns)
        if (!std::isfinite(x)) throw DomainError("returns must be finite");
    const auto [lo, hi] = std::minmax_element(r.returns.begin(), r.returns.end());
    if (*lo == *hi) throw DegenerateDataError("constant return series has no volatility to model");
    const double var = sample_variance(r.returns);
    if (!(var > min_conditional_variance)) throw DegenerateDataError("return variance is numerically zero");

    const detail::GarchObjective obj{r.returns, var};
    constexpr std::array<std::array<double, 2>, 3> starts{{{0.05, 0.90}, {0.10, 0.80}, {0.20, 0.50}}};

    detail::BfgsResult best{};
    bool have = false;
    for (const auto& [a, b] : starts) {
        const GarchParams p0{var * (1.0 - a - b), a, b};
        const auto res = detail::minimize_bfgs(obj, detail::unconstrained_from_params(p0), opt);
        if (!have || res.f < best.f) {
            best = res;
            have = true;
        }
    }

    GarchFit fit;
    fit.params = detail::params_from_unconstrained(best.x);
    fit.sigma2_path = garch_variance_path(fit.params, r.returns, var);
    fit.neg_loglik = garch_neg_loglik(fit.params, r.returns, var);
    fit.converged = best.converged;
    fit.iterations = best.iterations;
    fit.gradient_norm = best.grad_norm;
    if (!fit.converged)
        throw ConvergenceError("GARCH fit did not converge within " + std::to_string(opt.max_iterations) +
                                   " iterations (gradient norm " + std::to_string(best.grad_norm) + ")",
                               std::move(fit));
    return fit;
}

/// Stationary GARCH(1,1) sample of length `n` (after a 500-step burn-in).
inline ReturnSeries simulate_garch(const GarchParams& p, std::size_t n, Rng& rng, double scale = 1.0) {
    validate(p);
    double s2 = p.unconditional_variance();
    ReturnSeries out;
    out.returns.reserve(n);
    constexpr std::size_t burn_in = 500;
    for (std::size_t t = 0; t < n + burn_in; ++t) {
        const double r = std::sqrt(s2) * rng.normal();
        if (t >= burn_in) out.returns.push_back(scale * r);
        s2 = forecast_next_sigma2(p, r * r, s2);
    }
    return out;
}

/// One segment of a regime-switching GARCH path.
struct GarchRegime {
    GarchParams params;
    std::size_t length = 0;
    /// Innovations are N(0, 1) scaled by this factor, unseen by the variance recursion.
    double shock_scale = 1.0;
};

/// Regime-switching GARCH returns with volatility `scale` per unit variance.
/// The conditional variance carries over across regime boundaries.
inline ReturnSeries simulate_regime_garch(std::span<const GarchRegime> regimes, Rng& rng, double scale = 0.01) {
    ReturnSeries out;
    if (regimes.empty()) return out;
    for (const auto& g : regimes) validate(g.params);
    double s2 = regimes.front().params.unconditional_variance();
    for (std::size_t t = 0; t < 500; ++t) {
        const double r = std::sqrt(s2) * rng.normal();
        s2 = forecast_next_sigma2(regimes.front().params, r * r, s2);
    }
    for (const auto& g : regimes) {
        for (std::size_t t = 0; t < g.length; ++t) {
            const double r = g.shock_scale * std::sqrt(s2) * rng.normal();
            out.returns.push_back(scale * r);
            s2 = forecast_next_sigma2(g.params, r * r, s2);
        }
    }
    return out;
}

inline std::vector<double> prices_from_returns(std::span<const double> returns, double start = 100.0) {
    std::vector<double> prices;
    prices.reserve(returns.size() + 1);
    prices.push_back(start);
    for (double r : returns) {
        if (!(r > -1.0)) throw DomainError("return at or below -100% cannot be turned into a price");
        prices.push_back(prices.back() * (1.0 + r));
    }
    return prices;
}

/// Prices (starting at 100) from `n_returns` daily returns that alternate
/// between a calm regime and a turbulent one with a higher variance floor and a
/// stronger reaction to shocks. A GARCH(1,1) fit on a trailing window lags each
/// switch, so the normalised scores drift.
inline std::vector<double> synthetic_regime_prices(std::size_t n_returns, std::uint64_t seed) {
    const GarchParams calm{0.02, 0.04, 0.90};
    const GarchParams turbulent{0.20, 0.15, 0.80};
    constexpr std::array<double, 7> shares{1650, 700, 900, 600, 800, 700, 900};
    const double total = 6250.0;
    std::vector<GarchRegime> regimes;
    std::size_t used = 0;
    for (std::size_t k = 0; k < shares.size(); ++k) {
        std::size_t len = k + 1 == shares.size()
                              ? n_returns - used
                              : static_cast<std::size_t>(std::round(shares[k] / total * static_cast<double>(n_returns)));
        len = std::min(len, n_returns - used);
        regimes.push_back({k % 2 == 0 ? calm : turbulent, len, 1.0});
        used += len;
    }
    Rng rng(seed);
    return prices_from_returns(simulate_regime_garch(regimes, rng, 0.01).returns);
}

struct VolatilityRunConfig {
    std::size_t window = 1250;
    std::size_t refit_every = 1;
    GarchFitOptions fit{};
};

/// Runs the rolling-window experiment once per ACI configuration. All
/// configurations share the same GARCH fits and conformity scores; only the
/// quantile level differs.
///
/// Step i (0-based return index, i >= window) fits on returns [i - window, i),
/// forecasts sigma_i^2, scores V_i = R_i^2 against it and thresholds at the
/// quantile of the trailing `window` scores. The score buffer starts out with the
/// first fit's in-sample scores so the first prediction has a full window.
inline std::vector<TrajectoryReport> run_volatility_experiments(std::span<const double> prices,
                                                                std::span<const AciConfig> configs,
                                                                const VolatilityRunConfig& run,
                                                                std::span<const std::string> labels = {}) {
    if (run.refit_every == 0) throw ConfigError("refit_every must be at least 1");
    if (run.window < run.fit.min_observations)
        throw ConfigError("window must hold at least " + std::to_string(run.fit.min_observations) + " returns");
    if (prices.size() <= run.window + 1)
        throw NoDataError("need more than window + 1 prices (" + std::to_string(run.window + 1) + ")");
    if (!labels.empty() && labels.size() != prices.size())
        throw DomainError("one label per price is required");

    const ReturnSeries r = returns_from_prices(prices);
    const std::size_t n = r.size();

    std::vector<AciState> states;
    std::vector<TrajectoryReport> reports(configs.size());
    for (std::size_t k = 0; k < configs.size(); ++k) {
        states.push_back(init(configs[k]));
        reports[k].config_echo = configs[k];
    }

    ScoreWindow scores(run.window);
    GarchParams params;
    double sigma2_last = 0.0;  // conditional variance of the most recent return
    std::size_t fits = 0;

    for (std::size_t i = run.window; i < n; ++i) {
        try {
            if ((i - run.window) % run.refit_every == 0) {
                const ReturnSeries win{std::vector<double>(r.returns.begin() + static_cast<std::ptrdiff_t>(i - run.window),
                                                           r.returns.begin() + static_cast<std::ptrdiff_t>(i))};
                GarchFit fit = fit_garch(win, run.fit);
                params = fit.params;
                sigma2_last = fit.sigma2_path.back();
                if (fits == 0) {
                    for (std::size_t s = 0; s < win.size(); ++s) {
                        const double v = win.returns[s] * win.returns[s];
                        scores.push(compute_score(NormalizedScore{fit.sigma2_path[s]}, v));
                    }
                }
                ++fits;
            }
        } catch (const Error& e) {
            for (auto& rep : reports) rep.mark_failed(e.what());
            spdlog::error("volatility run aborted at return {}: {}", i, e.what());
            return reports;
        }

        const double v_prev = r.returns[i - 1] * r.returns[i - 1];
        const double sigma2 = forecast_next_sigma2(params, v_prev, sigma2_last);
        const double v = r.returns[i] * r.returns[i];
        const NormalizedScore ctx{sigma2};
        const double score = compute_score(ctx, v);
        std::string label = labels.empty() ? std::to_string(i + 1) : labels[i + 1];

        for (std::size_t k = 0; k < configs.size(); ++k) {
            const double q = scores.threshold(effective_quantile_level(states[k]));
            const ErrBit err = err_indicator(score, q);
            reports[k].append(label, states[k].current_level(), err, invert_to_interval(ctx, q));
            states[k] = update(states[k], err);
        }
        scores.push(score);
        sigma2_last = sigma2;
    }
    spdlog::info("volatility run: {} steps, {} GARCH fits", n - run.window, fits);
    return reports;
}

inline TrajectoryReport run_volatility_experiment(std::span<const double> prices, const AciConfig& config,
                                                  const VolatilityRunConfig& run,
                                                  std::span<const std::string> labels = {}) {
    return std::move(run_volatility_experiments(prices, std::span(&config, 1), run, labels).front());
}

}  // namespace aci
