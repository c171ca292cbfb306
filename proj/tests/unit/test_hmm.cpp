#include "aci/hmm.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace aci;

namespace {

HmmSpec two_state_normal(double p, double s0, double s1) {
    return {symmetric_chain(2, p), {ScoreDistribution::normal(0.0, s0), ScoreDistribution::normal(0.0, s1)}};
}

HmmSpec single_state(ScoreDistribution d) { return {Eigen::MatrixXd::Ones(1, 1), {d}}; }

}  // namespace

TEST(SymmetricChain, EntriesAndErrors) {
    const auto P = symmetric_chain(3, 0.7);
    EXPECT_NEAR(P(0, 0), 0.7, 1e-15);
    EXPECT_NEAR(P(0, 1), 0.15, 1e-15);
    EXPECT_NEAR(P.row(2).sum(), 1.0, 1e-15);
    EXPECT_THROW(symmetric_chain(1, 0.9), DomainError);
    EXPECT_THROW(symmetric_chain(2, 0.5), DomainError);
    EXPECT_THROW(symmetric_chain(2, 1.0), DomainError);
}

TEST(SpectralGap, KnownChains) {
    EXPECT_NEAR(spectral_gap(symmetric_chain(2, 0.9)), 0.2, 1e-9);
    EXPECT_NEAR(spectral_gap(symmetric_chain(3, 0.7)), 0.45, 1e-9);
    EXPECT_NEAR(spectral_gap(Eigen::MatrixXd::Constant(2, 2, 0.5)), 1.0, 1e-9);
    Eigen::MatrixXd birth_death(3, 3);
    birth_death << 0.5, 0.5, 0.0, 0.25, 0.5, 0.25, 0.0, 0.5, 0.5;
    EXPECT_NEAR(spectral_gap(birth_death), 0.5, 1e-9);
}

TEST(SpectralGap, RejectsNonErgodicAndIrreversible) {
    EXPECT_THROW(spectral_gap(Eigen::MatrixXd::Identity(2, 2)), ErgodicityError);
    Eigen::MatrixXd cyclic(3, 3);
    cyclic << 0.1, 0.8, 0.1, 0.1, 0.1, 0.8, 0.8, 0.1, 0.1;
    EXPECT_THROW(spectral_gap(cyclic), UnsupportedChainError);
}

TEST(Stationary, MatchesLeftEigenvector) {
    Eigen::MatrixXd P(3, 3);
    P << 0.9, 0.1, 0.0, 0.2, 0.7, 0.1, 0.1, 0.1, 0.8;
    const auto pi = stationary_distribution(P);
    Eigen::RowVectorXd v(3);
    v << pi[0], pi[1], pi[2];
    EXPECT_NEAR((v * P - v).cwiseAbs().maxCoeff(), 0.0, 1e-10);
    EXPECT_NEAR(v.sum(), 1.0, 1e-12);
}

TEST(Simulate, SingleStateScoresFollowTheirLaw) {
    Rng rng(12);
    const auto spec = single_state(ScoreDistribution::normal(1.0, 2.0));
    auto path = simulate_hmm(spec, 5000, rng);
    ASSERT_EQ(path.scores.size(), 5000u);
    std::sort(path.scores.begin(), path.scores.end());
    double d = 0.0;
    const double n = static_cast<double>(path.scores.size());
    for (std::size_t i = 0; i < path.scores.size(); ++i) {
        const double f = spec.scores[0].cdf(path.scores[i]);
        d = std::max({d, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
    }
    // 1% critical value of the one-sample KS statistic
    EXPECT_LT(d, 1.63 / std::sqrt(n));
}

TEST(Simulate, StateFrequenciesApproachStationary) {
    Eigen::MatrixXd P(3, 3);
    P << 0.8, 0.15, 0.05, 0.1, 0.8, 0.1, 0.3, 0.2, 0.5;
    const HmmSpec spec{P, {ScoreDistribution::normal(0, 1), ScoreDistribution::normal(0, 1),
                           ScoreDistribution::normal(0, 1)}};
    const auto pi = stationary_distribution(P);
    Rng rng(4);
    const auto path = simulate_hmm(spec, 200000, rng);
    std::vector<double> freq(3, 0.0);
    for (auto a : path.states) freq[a] += 1.0 / path.states.size();
    double tv = 0.0;
    for (int a = 0; a < 3; ++a) tv += 0.5 * std::abs(freq[a] - pi[a]);
    EXPECT_LE(tv, 0.02);
}

TEST(Simulate, Deterministic) {
    const auto spec = two_state_normal(0.95, 1.0, 2.0);
    Rng a(9), b(9);
    const auto x = simulate_hmm(spec, 1000, a), y = simulate_hmm(spec, 1000, b);
    EXPECT_EQ(x.states, y.states);
    EXPECT_EQ(x.scores, y.scores);
}

TEST(AlphaStar, MatchedAndWiderStates) {
    const auto spec = two_state_normal(0.95, 1.0, 2.0);
    const auto a = per_state_alpha_star(spec, NormalQuantile{}, 0.1);
    ASSERT_EQ(a.size(), 2u);
    EXPECT_NEAR(a[0], 0.1, 1e-8);
    // beta with 1 - Phi(z_{1-beta} / 2) = 0.1, i.e. z_{1-beta} = 2 z_0.9.
    EXPECT_NEAR(a[1], 0.005187061403669973, 1e-8);
    EXPECT_NEAR(quantile_at(NormalQuantile{}, 0.9), 1.2815515655446004, 1e-12);
}

TEST(AlphaStar, DecreasesWithScoreScale) {
    std::vector<ScoreDistribution> scores;
    for (double s : {0.5, 0.8, 1.0, 1.5, 3.0}) scores.push_back(ScoreDistribution::normal(0.0, s));
    const HmmSpec spec{symmetric_chain(5, 0.9), scores};
    const auto a = per_state_alpha_star(spec, NormalQuantile{}, 0.1);
    for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LT(a[i], a[i - 1]);
}

TEST(AlphaStar, UniformShift) {
    const HmmSpec spec{symmetric_chain(2, 0.9),
                       {ScoreDistribution::uniform(0.18, 1.0), ScoreDistribution::uniform(-0.18, 1.0)}};
    const auto a = per_state_alpha_star(spec, UniformQuantile{}, 0.5);
    EXPECT_NEAR(a[0], 0.32, 1e-8);
    EXPECT_NEAR(a[1], 0.68, 1e-8);
    EXPECT_NEAR(mean_alpha_star_jump(spec, a), 0.1 * 0.36, 1e-8);
}

TEST(Bounds, LargeDeviation) {
    EXPECT_NEAR(large_deviation_rhs(1000, 0.05, 0.8, 0.01, 0.1), 1.9307381482958097, 1e-12);
    EXPECT_NEAR(large_deviation_rhs(1000, 1e-9, 0.8, 0.01, 0.1), 4.0, 1e-9);
    const double tiny = large_deviation_rhs(1e6, 0.05, 0.8, 0.01, 0.1);
    EXPECT_LT(tiny, 1e-100);
    EXPECT_NEAR(tiny / 3.837e-136, 1.0, 1e-3);
    EXPECT_THROW(large_deviation_rhs(10, 0.0, 0.5, 0.1, 0.1), DomainError);
    EXPECT_THROW(large_deviation_rhs(10, 0.1, 1.0, 0.1, 0.1), DomainError);
}

TEST(Bounds, RegretAndGammaStar) {
    EXPECT_NEAR(regret_rhs(1.0, 0.1, 0.01), 0.16, 1e-15);
    EXPECT_NEAR(regret_rhs(2.0, 0.05, 0.0), 0.05, 1e-15);
    EXPECT_NEAR(gamma_star(0.00125), 0.05, 1e-15);
    EXPECT_EQ(gamma_star(0.0), 0.0);
    // gamma_star minimises the small-gamma form of the bound
    const double d = 0.003, g = gamma_star(d);
    for (double h : {0.5 * g, 0.9 * g, 1.1 * g, 2.0 * g})
        EXPECT_GT(d / h + h / 2.0, d / g + g / 2.0);
    EXPECT_THROW(regret_rhs(1.0, 0.0, 0.1), DomainError);
}

TEST(Bounds, IdealExpectationAndBias) {
    EXPECT_NEAR(ideal_expectation(1, 0.5, 0.1, 0.1), 0.5, 1e-15);
    EXPECT_NEAR(ideal_expectation(2, 0.5, 0.1, 0.1), 0.46, 1e-15);
    EXPECT_NEAR(ideal_expectation(1000, 0.5, 0.1, 0.1), 0.1, 1e-12);
    EXPECT_NEAR(bias_upper_bound(2.0, 0.1, 0.0, 0.0), 0.2, 1e-15);
    EXPECT_NEAR(bias_upper_bound(2.0, 0.1, 0.001, 0.002), 0.26, 1e-15);
    EXPECT_THROW(bias_upper_bound(2.0, 0.0, 0.0, 0.0), DomainError);
}

TEST(Lattice, Check) {
    const std::vector<double> on{0.1, 0.1 + 0.001, 0.1 - 0.003, 0.1 + 0.017};
    EXPECT_TRUE(lattice_check(on, 0.1, 0.01));
    const std::vector<double> off{0.1, 0.1005};
    EXPECT_FALSE(lattice_check(off, 0.1, 0.01));
}

TEST(Lattice, SimpleRuleStaysOnLatticeAfterCovers) {
    // alpha_{t+1} - alpha_t is gamma alpha or gamma (alpha - 1); with alpha = 1/4 both are multiples of gamma alpha.
    const double alpha = 0.25, gamma = 0.02;
    Rng rng(1);
    std::vector<double> scores(3000);
    for (auto& s : scores) s = rng.uniform();
    const auto rep = run_fixed_quantile_aci(scores, UniformQuantile{}, AciConfig::adaptive(alpha, gamma));
    EXPECT_TRUE(lattice_check(rep.alphas, alpha, gamma));
}

TEST(FixedQuantileAci, ThresholdMatchesQuantile) {
    const std::vector<double> scores{0.2, 1.5, -0.3, 2.0};
    const auto rep = run_fixed_quantile_aci(scores, NormalQuantile{}, AciConfig::fixed(0.1));
    ASSERT_EQ(rep.size(), 4u);
    for (std::size_t t = 0; t < 4; ++t) {
        EXPECT_NEAR(rep.intervals[t].upper, 1.2815515655446004, 1e-12);
        EXPECT_EQ(rep.errs[t] == ErrBit::miscovered, scores[t] > 1.2815515655446004);
    }
}

TEST(Bias, IdealSingleStateIsUnbiased) {
    const auto spec = single_state(ScoreDistribution::normal(0.0, 1.0));
    const auto est = estimate_bias_terms(spec, NormalQuantile{}, AciConfig::adaptive(0.1, 0.05), 200, 2000, 3);
    EXPECT_LE(est.B_hat, 0.01);
    EXPECT_LE(est.sigmaB2_hat, est.B_hat * est.B_hat + 1e-15);
}

TEST(Bias, VarianceTermBelowSquaredMax) {
    const auto spec = two_state_normal(0.95, 1.0, 2.0);
    const auto est = estimate_bias_terms(spec, NormalQuantile{}, AciConfig::adaptive(0.1, 0.05), 100, 2000, 5, 2);
    EXPECT_GT(est.B_hat, 0.0);
    EXPECT_LE(est.sigmaB2_hat, est.B_hat * est.B_hat + 1e-15);
    EXPECT_THROW(estimate_bias_terms(spec, NormalQuantile{}, AciConfig::adaptive(0.1), 10, 100, 1), DomainError);
}

TEST(Bias, ThreadCountDoesNotChangeResult) {
    const auto spec = two_state_normal(0.9, 1.0, 1.5);
    const auto cfg = AciConfig::adaptive(0.1, 0.05);
    const auto a = estimate_bias_terms(spec, NormalQuantile{}, cfg, 100, 500, 7, 1);
    const auto b = estimate_bias_terms(spec, NormalQuantile{}, cfg, 100, 500, 7, 3);
    EXPECT_EQ(a.B_hat, b.B_hat);
    EXPECT_EQ(a.sigmaB2_hat, b.sigmaB2_hat);
}

TEST(TheoryReport, KeysAndConsistency) {
    const auto spec = two_state_normal(0.95, 1.0, 2.0);
    TheoryRunConfig run;
    run.horizon = 1000;
    run.reps = 100;
    run.epsilons = {0.05};
    const auto rep = build_theory_report(spec, NormalQuantile{}, AciConfig::adaptive(0.1, 0.05), run);
    EXPECT_NEAR(rep.spectral_gap, 0.1, 1e-9);
    EXPECT_NEAR(rep.stationary[0], 0.5, 1e-9);
    for (const char* key : {"large_deviation_eps_0.05", "gamma_star", "regret_L1", "bias", "coverage_deviation"}) {
        EXPECT_TRUE(rep.bound_values.count(key)) << key;
        EXPECT_TRUE(rep.empirical_values.count(key)) << key;
    }
    EXPECT_LE(rep.empirical_values.at("regret_L1"), rep.bound_values.at("regret_L1"));
    EXPECT_LE(rep.empirical_values.at("coverage_deviation"), rep.bound_values.at("coverage_deviation"));
    EXPECT_NEAR(rep.empirical_values.at("mean_alpha_star_jump"), rep.bound_values.at("mean_alpha_star_jump"), 0.003);
}
