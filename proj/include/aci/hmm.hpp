#pragma once

// Hidden-Markov-model testbed for ACI with a fixed quantile function, plus
// evaluators for the coverage bounds that hold in that setting.
//
// An environment chain A_t moves by a transition matrix P; given A_t = a the
// score S_t is drawn independently from the state's distribution. With a fixed
// quantile function Q the per-state miscoverage curve is
// M_a(p) = P(S > Q(1 - p) | A = a), and alpha*_a solves M_a(alpha*_a) = alpha.

#include "aci/conformal.hpp"
#include "aci/core.hpp"
#include "aci/error.hpp"
#include "aci/metrics.hpp"
#include "aci/random.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <sstream>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace aci {

/// Normal(location, scale) or Uniform[location, location + scale].
struct ScoreDistribution {
    enum class Family : std::uint8_t { normal, uniform };

    Family family = Family::normal;
    double location = 0.0;
    double scale = 1.0;

    static ScoreDistribution normal(double mean, double sd) { return {Family::normal, mean, sd}; }
    static ScoreDistribution uniform(double lo, double width) { return {Family::uniform, lo, width}; }

    double cdf(double x) const {
        if (x == inf) return 1.0;
        if (x == -inf) return 0.0;
        if (family == Family::normal) return 0.5 * std::erfc(-(x - location) / (scale * std::numbers::sqrt2));
        return std::clamp((x - location) / scale, 0.0, 1.0);
    }

    double sample(Rng& rng) const {
        return family == Family::normal ? rng.normal(location, scale) : location + scale * rng.uniform();
    }
};

struct HmmSpec {
    Eigen::MatrixXd transition;
    std::vector<ScoreDistribution> scores;

    std::size_t n_states() const noexcept { return scores.size(); }
};

inline void validate(const HmmSpec& s) {
    const auto n = static_cast<Eigen::Index>(s.scores.size());
    if (n == 0) throw DomainError("HMM needs at least one state");
    if (s.transition.rows() != n || s.transition.cols() != n)
        throw DomainError("transition matrix must be n_states x n_states");
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j)
            if (!(s.transition(i, j) >= 0.0)) throw DomainError("transition probabilities must be nonnegative");
        if (std::abs(s.transition.row(i).sum() - 1.0) > 1e-12)
            throw DomainError("transition row " + std::to_string(i) + " does not sum to one");
    }
    for (const auto& d : s.scores)
        if (!(d.scale > 0.0) || !std::isfinite(d.scale) || !std::isfinite(d.location))
            throw DomainError("score distribution scale must be positive and finite");
}

/// Q(p) = mean + sd * Phi^{-1}(p).
struct NormalQuantile {
    double mean = 0.0;
    double sd = 1.0;
};

/// Q(p) = lo + width * p.
struct UniformQuantile {
    double lo = 0.0;
    double width = 1.0;
};

using FixedQuantileFn = std::variant<NormalQuantile, UniformQuantile, CalibrationScores>;

/// Q(p) with Q = -inf below 0 and +inf above 1.
inline double quantile_at(const FixedQuantileFn& q, double p) {
    if (p < 0.0) return -inf;
    if (p > 1.0) return inf;
    return std::visit(overloaded{
                          [p](const NormalQuantile& n) {
                              if (p == 0.0) return -inf;
                              if (p == 1.0) return inf;
                              return boost::math::quantile(boost::math::normal(n.mean, n.sd), p);
                          },
                          [p](const UniformQuantile& u) { return u.lo + u.width * p; },
                          [p](const CalibrationScores& c) { return empirical_quantile(c, p); },
                      },
                      q);
}

inline double threshold_at(const FixedQuantileFn& q, const EffectiveLevel& level) {
    switch (level.kind) {
    case EffectiveLevel::Kind::cover_everything: return inf;
    case EffectiveLevel::Kind::cover_nothing: return -inf;
    case EffectiveLevel::Kind::level: break;
    }
    return quantile_at(q, level.level);
}

/// M_a(p) = P(S > Q(1 - p)) for scores from `dist`.
inline double miscoverage_curve(const ScoreDistribution& dist, const FixedQuantileFn& q, double p) {
    if (p < 0.0) return 0.0;
    if (p > 1.0) return 1.0;
    return 1.0 - dist.cdf(quantile_at(q, 1.0 - p));
}

/// Stationary distribution by power iteration of P^k from the identity.
inline std::vector<double> stationary_distribution(const Eigen::MatrixXd& P, std::size_t max_iterations = 100000) {
    const auto n = P.rows();
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
    for (std::size_t it = 0; it < max_iterations; ++it) {
        const double spread = (M.colwise().maxCoeff() - M.colwise().minCoeff()).maxCoeff();
        if (spread < 1e-13) {
            const Eigen::VectorXd pi = M.colwise().mean().transpose();
            return {pi.data(), pi.data() + n};
        }
        Eigen::MatrixXd next = M * P;
        if ((next - M).cwiseAbs().maxCoeff() == 0.0)
            throw ErgodicityError("transition matrix has more than one stationary distribution");
        M = std::move(next);
    }
    throw ErgodicityError("power iteration did not converge; the chain is not ergodic");
}

struct HmmPath {
    std::vector<std::size_t> states;
    std::vector<double> scores;
};

namespace detail {

inline std::size_t sample_categorical(std::span<const double> cumulative, Rng& rng) {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

/// Draws environment states with the chain started from its stationary law.
class ChainSampler {
public:
    explicit ChainSampler(const HmmSpec& spec) : n_(spec.n_states()) {
        validate(spec);
        const auto pi = stationary_distribution(spec.transition);
        initial_ = cumulative(pi);
        rows_.resize(n_);
        for (std::size_t a = 0; a < n_; ++a) {
            std::vector<double> row(n_);
            for (std::size_t b = 0; b < n_; ++b)
                row[b] = spec.transition(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            rows_[a] = cumulative(row);
        }
    }

    std::size_t initial(Rng& rng) const { return sample_categorical(initial_, rng); }
    std::size_t next(std::size_t a, Rng& rng) const { return sample_categorical(rows_[a], rng); }

private:
    static std::vector<double> cumulative(std::span<const double> p) {
        std::vector<double> c(p.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) c[i] = (acc += p[i]);
        return c;
    }

    std::size_t n_;
    std::vector<double> initial_;
    std::vector<std::vector<double>> rows_;
};

}  // namespace detail

inline HmmPath simulate_hmm(const HmmSpec& spec, std::size_t horizon, Rng& rng) {
    const detail::ChainSampler chain(spec);
    HmmPath path;
    path.states.reserve(horizon);
    path.scores.reserve(horizon);
    std::size_t a = 0;
    for (std::size_t t = 0; t < horizon; ++t) {
        a = t == 0 ? chain.initial(rng) : chain.next(a, rng);
        path.states.push_back(a);
        path.scores.push_back(spec.scores[a].sample(rng));
    }
    return path;
}

/// ACI over a score stream with a fixed quantile function. The recorded
/// interval is the score set (-inf, threshold].
inline TrajectoryReport run_fixed_quantile_aci(std::span<const double> scores, const FixedQuantileFn& qhat,
                                               const AciConfig& config) {
    AciState state = init(config);
    TrajectoryReport report;
    report.config_echo = config;
    for (std::size_t t = 0; t < scores.size(); ++t) {
        const double q = threshold_at(qhat, effective_quantile_level(state));
        const ErrBit err = err_indicator(scores[t], q);
        PredictionInterval iv = q == -inf ? PredictionInterval::empty_set() : PredictionInterval{-inf, q, false};
        report.append(std::to_string(t + 1), state.current_level(), err, iv);
        state = update(state, err);
    }
    return report;
}

/// (p - (1-p)/(n-1)) I + ((1-p)/(n-1)) 11'.
inline Eigen::MatrixXd symmetric_chain(std::size_t n, double p) {
    if (n < 2) throw DomainError("symmetric chain needs at least two states");
    const double nd = static_cast<double>(n);
    if (!(p > 1.0 / nd && p < 1.0)) throw DomainError("symmetric chain needs 1/n < p < 1");
    const double off = (1.0 - p) / (nd - 1.0);
    const auto k = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd P = Eigen::MatrixXd::Constant(k, k, off);
    P.diagonal().setConstant(p);
    return P;
}

/// 1 - eta, eta the largest absolute eigenvalue of P on mean-zero functions.
/// Reversible chains only.
inline double spectral_gap(const Eigen::MatrixXd& P) {
    if (P.rows() != P.cols() || P.rows() == 0) throw DomainError("transition matrix must be square");
    const auto pi = stationary_distribution(P);
    const auto n = P.rows();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (std::abs(pi[i] * P(i, j) - pi[j] * P(j, i)) > 1e-9)
                throw UnsupportedChainError("spectral gap is only implemented for reversible chains");
    Eigen::VectorXd root(n);
    for (Eigen::Index i = 0; i < n; ++i) root[i] = std::sqrt(pi[static_cast<std::size_t>(i)]);
    Eigen::MatrixXd S = root.asDiagonal() * P * root.cwiseInverse().asDiagonal();
    S = 0.5 * (S + S.transpose()) - root * root.transpose();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S, Eigen::EigenvaluesOnly);
    return 1.0 - eig.eigenvalues().cwiseAbs().maxCoeff();
}

/// Per-state root of M_a(beta) = alpha by bisection on [0, 1].
inline std::vector<double> per_state_alpha_star(const HmmSpec& spec, const FixedQuantileFn& qhat, double alpha,
                                                double tolerance = 1e-10) {
    validate(spec);
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
    std::vector<double> out;
    for (std::size_t a = 0; a < spec.n_states(); ++a) {
        const auto f = [&](double b) { return miscoverage_curve(spec.scores[a], qhat, b) - alpha; };
        double lo = 0.0, hi = 1.0;
        if (f(lo) > 0.0 || f(hi) < 0.0)
            throw RootFindingError("no level attains miscoverage alpha in state " + std::to_string(a));
        while (hi - lo > tolerance) {
            const double mid = 0.5 * (lo + hi);
            (f(mid) < 0.0 ? lo : hi) = mid;
        }
        out.push_back(0.5 * (lo + hi));
    }
    return out;
}

/// E|alpha*_{A_{t+1}} - alpha*_{A_t}| under the stationary chain.
inline double mean_alpha_star_jump(const HmmSpec& spec, std::span<const double> alpha_star) {
    const auto pi = stationary_distribution(spec.transition);
    double m = 0.0;
    for (std::size_t a = 0; a < pi.size(); ++a)
        for (std::size_t b = 0; b < pi.size(); ++b)
            m += pi[a] * spec.transition(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) *
                 std::abs(alpha_star[b] - alpha_star[a]);
    return m;
}

struct BiasEstimate {
    double B_hat = 0.0;
    double sigmaB2_hat = 0.0;
    double B_se = 0.0;
    double sigmaB2_se = 0.0;
    /// Estimated E[err_t | A_t = a] per state, with standard errors across replications.
    std::vector<double> state_err_mean;
    std::vector<double> state_err_se;
};

/// Runs `fn(rep)` for rep in [0, reps) on up to `threads` threads.
template <class Fn>
void parallel_for_reps(std::size_t reps, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, reps));
    if (threads == 1) {
        for (std::size_t r = 0; r < reps; ++r) fn(r);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k)
        pool.emplace_back([&, k] {
            for (std::size_t r = k; r < reps; r += threads) fn(r);
        });
    for (auto& th : pool) th.join();
}

inline std::size_t burn_in_steps(const AciConfig& config) {
    return config.step_size > 0.0 ? static_cast<std::size_t>(std::ceil(20.0 / config.step_size)) : 0;
}

/// Monte-Carlo estimate of B = max_a |E[err | A = a] - alpha| and
/// sigma_B^2 = E_pi[(E[err | A] - alpha)^2] at stationarity. Each replication
/// discards a burn-in of ceil(20 / gamma) steps and then averages M_a(alpha_t)
/// per visited state over `horizon` steps.
inline BiasEstimate estimate_bias_terms(const HmmSpec& spec, const FixedQuantileFn& qhat, const AciConfig& config,
                                        std::size_t reps, std::size_t horizon, std::uint64_t seed,
                                        std::size_t threads = 1) {
    validate(spec);
    validate(config);
    if (reps < 100) throw DomainError("bias estimation needs at least 100 replications");
    if (horizon < 1) throw DomainError("bias estimation needs a positive horizon");
    const detail::ChainSampler chain(spec);
    const auto pi = stationary_distribution(spec.transition);
    const std::size_t n = spec.n_states();
    const std::size_t burn = burn_in_steps(config);
    const double alpha = config.target_miscoverage;

    std::vector<double> sums(reps * n, 0.0);
    std::vector<double> counts(reps * n, 0.0);
    parallel_for_reps(reps, threads, [&](std::size_t r) {
        Rng rng = Rng::stream(seed, r);
        AciState state = init(config);
        std::size_t a = chain.initial(rng);
        for (std::size_t t = 0; t < burn + horizon; ++t) {
            if (t > 0) a = chain.next(a, rng);
            const double m = miscoverage_curve(spec.scores[a], qhat, state.current_level());
            if (t >= burn) {
                sums[r * n + a] += m;
                counts[r * n + a] += 1.0;
            }
            const double s = spec.scores[a].sample(rng);
            state = update(state, err_indicator(s, threshold_at(qhat, effective_quantile_level(state))));
        }
    });

    BiasEstimate est;
    est.state_err_mean.assign(n, 0.0);
    est.state_err_se.assign(n, 0.0);
    std::vector<double> rep_B(reps, 0.0), rep_S(reps, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
        double total = 0.0, visits = 0.0, sq = 0.0, reps_with = 0.0;
        for (std::size_t r = 0; r < reps; ++r) {
            total += sums[r * n + a];
            visits += counts[r * n + a];
        }
        if (visits == 0.0) throw NoDataError("state " + std::to_string(a) + " was never visited");
        const double mean = total / visits;
        for (std::size_t r = 0; r < reps; ++r) {
            if (counts[r * n + a] == 0.0) continue;
            const double m = sums[r * n + a] / counts[r * n + a];
            sq += (m - mean) * (m - mean);
            reps_with += 1.0;
            rep_B[r] = std::max(rep_B[r], std::abs(m - alpha));
            rep_S[r] += pi[a] * (m - alpha) * (m - alpha);
        }
        est.state_err_mean[a] = mean;
        est.state_err_se[a] = reps_with > 1.0 ? std::sqrt(sq / (reps_with - 1.0) / reps_with) : 0.0;
        est.B_hat = std::max(est.B_hat, std::abs(mean - alpha));
        est.sigmaB2_hat += pi[a] * (mean - alpha) * (mean - alpha);
    }
    const auto se = [&](const std::vector<double>& v) {
        double m = 0.0, s = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    };
    est.B_se = se(rep_B);
    est.sigmaB2_se = se(rep_S);
    return est;
}

/// 2 exp(-T eps^2 / 8) + 2 exp(-T (1 - eta) eps^2 / (8 (1 + eta) sigmaB2 + 40 B eps)).
inline double large_deviation_rhs(double T, double epsilon, double eta, double sigmaB2, double B) {
    if (!(T >= 1.0)) throw DomainError("horizon must be at least one");
    if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");
    if (!(eta >= 0.0 && eta < 1.0)) throw DomainError("eta must lie in [0, 1)");
    if (!(sigmaB2 >= 0.0) || !(B >= 0.0)) throw DomainError("bias terms must be nonnegative");
    const double first = 2.0 * std::exp(-T * epsilon * epsilon / 8.0);
    const double denom = 8.0 * (1.0 + eta) * sigmaB2 + 40.0 * B * epsilon;
    const double second = denom > 0.0 ? 2.0 * std::exp(-T * (1.0 - eta) * epsilon * epsilon / denom) : 0.0;
    return first + second;
}

/// L (1 + gamma) / gamma * E|delta alpha*| + L gamma / 2.
inline double regret_rhs(double L, double gamma, double delta_mean) {
    if (!(L > 0.0)) throw DomainError("L must be positive");
    if (!(gamma > 0.0)) throw DomainError("regret bound needs a positive step size");
    if (!(delta_mean >= 0.0)) throw DomainError("mean shift must be nonnegative");
    return L * (1.0 + gamma) / gamma * delta_mean + L * gamma / 2.0;
}

inline double gamma_star(double delta_mean) {
    if (!(delta_mean >= 0.0)) throw DomainError("mean shift must be nonnegative");
    return std::sqrt(2.0 * delta_mean);
}

/// alpha + (1 - gamma)^(t - 1) (alpha_1 - alpha).
inline double ideal_expectation(std::size_t t, double alpha1, double gamma, double alpha) {
    if (t < 1) throw DomainError("t starts at 1");
    return alpha + std::pow(1.0 - gamma, static_cast<double>(t - 1)) * (alpha1 - alpha);
}

/// C (gamma + (eps1 + eps2) / gamma).
inline double bias_upper_bound(double C, double gamma, double eps1, double eps2) {
    if (!(gamma > 0.0)) throw DomainError("bias bound needs a positive step size");
    if (!(C >= 0.0 && eps1 >= 0.0 && eps2 >= 0.0)) throw DomainError("bias bound inputs must be nonnegative");
    return C * (gamma + (eps1 + eps2) / gamma);
}

/// True iff every level lies within 1e-9 of alpha + k gamma alpha for an integer k.
inline bool lattice_check(std::span<const double> alphas, double alpha, double gamma) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
    if (!(gamma > 0.0)) throw DomainError("lattice spacing needs a positive step size");
    const double spacing = gamma * alpha;
    for (double a : alphas) {
        const double k = std::round((a - alpha) / spacing);
        if (std::abs(a - (alpha + k * spacing)) > 1e-9) return false;
    }
    return true;
}

struct TheoryReport {
    double B_hat = 0.0;
    double sigmaB2_hat = 0.0;
    double B_se = 0.0;
    double sigmaB2_se = 0.0;
    double spectral_gap = 1.0;
    std::vector<double> alpha_star_by_state;
    std::vector<double> stationary;
    std::map<std::string, double> bound_values;
    /// Empirical quantities from the same simulations, keyed like bound_values.
    std::map<std::string, double> empirical_values;
};

struct TheoryRunConfig {
    std::size_t horizon = 5000;
    std::size_t reps = 500;
    std::vector<double> epsilons{0.02, 0.05};
    double bias_constant = 2.0;
    double eps1 = 0.0;
    double eps2 = 0.0;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

/// Simulates `reps` stationary runs and evaluates every bound next to its
/// empirical counterpart.
inline TheoryReport build_theory_report(const HmmSpec& spec, const FixedQuantileFn& qhat, const AciConfig& config,
                                        const TheoryRunConfig& run) {
    validate(spec);
    validate(config);
    TheoryReport rep;
    rep.stationary = stationary_distribution(spec.transition);
    rep.spectral_gap = spec.n_states() == 1 ? 1.0 : spectral_gap(spec.transition);
    rep.alpha_star_by_state = per_state_alpha_star(spec, qhat, config.target_miscoverage);

    const BiasEstimate bias = estimate_bias_terms(spec, qhat, config, run.reps, run.horizon, run.seed, run.threads);
    rep.B_hat = bias.B_hat;
    rep.sigmaB2_hat = bias.sigmaB2_hat;
    rep.B_se = bias.B_se;
    rep.sigmaB2_se = bias.sigmaB2_se;

    // Fresh stationary runs for the coverage deviation and tracking error.
    const detail::ChainSampler chain(spec);
    const std::size_t burn = burn_in_steps(config);
    const double alpha = config.target_miscoverage;
    std::vector<double> deviation(run.reps), regret(run.reps), jumps(run.reps);
    parallel_for_reps(run.reps, run.threads, [&](std::size_t r) {
        Rng rng = Rng::stream(run.seed ^ 0x5DEECE66DULL, r);
        AciState state = init(config);
        std::size_t a = chain.initial(rng);
        std::size_t errs = 0;
        double sq = 0.0, jump = 0.0;
        for (std::size_t t = 0; t < burn + run.horizon; ++t) {
            if (t > 0) {
                const std::size_t b = chain.next(a, rng);
                if (t > burn) jump += std::abs(rep.alpha_star_by_state[b] - rep.alpha_star_by_state[a]);
                a = b;
            }
            if (t >= burn) {
                const double m = miscoverage_curve(spec.scores[a], qhat, state.current_level());
                sq += (m - alpha) * (m - alpha);
            }
            const double s = spec.scores[a].sample(rng);
            const ErrBit e = err_indicator(s, threshold_at(qhat, effective_quantile_level(state)));
            if (t >= burn) errs += static_cast<std::size_t>(to_int(e));
            state = update(state, e);
        }
        const double T = static_cast<double>(run.horizon);
        deviation[r] = std::abs(static_cast<double>(errs) / T - alpha);
        regret[r] = sq / T;
        jumps[r] = run.horizon > 1 ? jump / (T - 1.0) : 0.0;
    });

    const double eta = 1.0 - rep.spectral_gap;
    const double T = static_cast<double>(run.horizon);
    for (double eps : run.epsilons) {
        std::ostringstream key_stream;
        key_stream << "large_deviation_eps_" << eps;
        const std::string key = key_stream.str();
        rep.bound_values[key] = large_deviation_rhs(T, eps, eta, rep.sigmaB2_hat, rep.B_hat);
        double hits = 0.0;
        for (double d : deviation) hits += d >= eps ? 1.0 : 0.0;
        rep.empirical_values[key] = hits / static_cast<double>(run.reps);
    }

    double mean_regret = 0.0, mean_jump = 0.0, mean_dev = 0.0;
    for (std::size_t r = 0; r < run.reps; ++r) {
        mean_regret += regret[r];
        mean_jump += jumps[r];
        mean_dev += deviation[r];
    }
    mean_regret /= static_cast<double>(run.reps);
    mean_jump /= static_cast<double>(run.reps);
    mean_dev /= static_cast<double>(run.reps);
    const double delta = mean_alpha_star_jump(spec, rep.alpha_star_by_state);
    rep.bound_values["gamma_star"] = gamma_star(delta);
    rep.empirical_values["gamma_star"] = gamma_star(mean_jump);
    rep.empirical_values["mean_alpha_star_jump"] = mean_jump;
    rep.bound_values["mean_alpha_star_jump"] = delta;
    if (config.step_size > 0.0) {
        rep.bound_values["regret_L1"] = regret_rhs(1.0, config.step_size, delta);
        rep.empirical_values["regret_L1"] = mean_regret;
        rep.bound_values["bias"] = bias_upper_bound(run.bias_constant, config.step_size, run.eps1, run.eps2);
        rep.empirical_values["bias"] = rep.B_hat;
        rep.bound_values["coverage_deviation"] = prop_bound(config, run.horizon);
        rep.empirical_values["coverage_deviation"] = mean_dev;
    }
    return rep;
}

}  // namespace aci
