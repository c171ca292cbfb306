#include "aci/metrics.hpp"
#include "aci/random.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace aci;

namespace {

std::vector<ErrBit> bits(std::initializer_list<int> v) {
    std::vector<ErrBit> out;
    for (int e : v) out.push_back(err_from(e == 1));
    return out;
}

TrajectoryReport report_from(const std::vector<ErrBit>& errs, const AciConfig& c) {
    TrajectoryReport r;
    r.config_echo = c;
    for (std::size_t i = 0; i < errs.size(); ++i)
        r.append(std::to_string(i + 1), c.initial_level, errs[i], PredictionInterval::whole_line());
    return r;
}

}  // namespace

TEST(LocalCoverage, ConstantSequences) {
    const std::vector<ErrBit> zeros(1000, ErrBit::covered), ones(1000, ErrBit::miscovered);
    for (double v : local_coverage(zeros, 10)) EXPECT_EQ(v, 1.0);
    for (double v : local_coverage(ones, 10)) EXPECT_EQ(v, 0.0);
    std::vector<ErrBit> alt;
    for (int i = 0; i < 1200; ++i) alt.push_back(err_from(i % 2 == 1));
    const auto cov = local_coverage(alt, 500);
    EXPECT_EQ(cov.size(), 1200u - 500u + 1u);
    for (double v : cov) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(LocalCoverage, MatchesDirectWindowMeans) {
    Rng rng(1);
    std::vector<ErrBit> e(300);
    for (auto& b : e) b = err_from(rng.bernoulli(0.2));
    const auto cov = local_coverage(e, 40);
    ASSERT_EQ(cov.size(), 261u);
    for (std::size_t j = 0; j < cov.size(); ++j) {
        int s = 0;
        for (std::size_t i = j; i < j + 40; ++i) s += to_int(e[i]);
        EXPECT_NEAR(cov[j], 1.0 - s / 40.0, 1e-15);
    }
}

TEST(LocalCoverage, RejectsBadWindows) {
    const std::vector<ErrBit> e(10, ErrBit::covered);
    EXPECT_THROW(local_coverage(e, 12), NoDataError);
    EXPECT_THROW(local_coverage(e, 3), DomainError);
    EXPECT_THROW(local_coverage(e, 0), DomainError);
}

TEST(AverageCoverage, Examples) {
    EXPECT_DOUBLE_EQ(average_coverage(bits({0, 0, 1, 0})), 0.75);
    EXPECT_DOUBLE_EQ(average_coverage(bits({0, 0, 0})), 1.0);
    EXPECT_DOUBLE_EQ(average_coverage(bits({1, 1})), 0.0);
    EXPECT_THROW(average_coverage(std::vector<ErrBit>{}), NoDataError);
}

TEST(BernoulliBand, MatchesNormalApproximation) {
    const auto band = bernoulli_band(600, 0.1, 500, 2000, 0.99, 42);
    ASSERT_EQ(band.lower.size(), 101u);
    const double half = 2.5758293035489 * std::sqrt(0.09 / 500.0);
    for (std::size_t j = 0; j < band.lower.size(); ++j) {
        EXPECT_NEAR(band.lower[j], 0.9 - half, 0.005);
        EXPECT_NEAR(band.upper[j], 0.9 + half, 0.005);
    }
}

TEST(BernoulliBand, DeterministicAndNarrowsWithWindow) {
    const auto a = bernoulli_band(400, 0.1, 100, 200, 0.9, 7);
    const auto b = bernoulli_band(400, 0.1, 100, 200, 0.9, 7);
    EXPECT_EQ(a.lower, b.lower);
    EXPECT_EQ(a.upper, b.upper);
    const auto wide = bernoulli_band(400, 0.1, 400, 200, 0.9, 7);
    EXPECT_LT(wide.upper[0] - wide.lower[0], a.upper[0] - a.lower[0]);
    EXPECT_THROW(bernoulli_band(400, 0.1, 100, 99, 0.9, 7), DomainError);
}

TEST(Summarize, PerfectCoverage) {
    const AciConfig c = AciConfig::adaptive(0.1, 0.005);
    // |0 - 0.1| <= (0.9 + 0.005) / (0.005 T) holds exactly while T <= 1810.
    const auto short_run = summarize(report_from(std::vector<ErrBit>(1800, ErrBit::covered), c), 100);
    EXPECT_DOUBLE_EQ(short_run.average_coverage, 1.0);
    EXPECT_TRUE(short_run.prop_bound_satisfied);
    EXPECT_NEAR(short_run.max_local_deviation, 0.1, 1e-12);
    const auto long_run = summarize(report_from(std::vector<ErrBit>(1900, ErrBit::covered), c), 100);
    EXPECT_FALSE(long_run.prop_bound_satisfied);
}

TEST(Summarize, ViolationIsFlagged) {
    const AciConfig c = AciConfig::adaptive(0.1, 0.005);
    const auto s = summarize(report_from(std::vector<ErrBit>(50000, ErrBit::miscovered), c), 500);
    EXPECT_FALSE(s.prop_bound_satisfied);
    EXPECT_DOUBLE_EQ(s.average_coverage, 0.0);
}

TEST(Summarize, FixedMethodHasNoBound) {
    const auto s = summarize(report_from(bits({0, 1, 0, 0}), AciConfig::fixed(0.1)), 2);
    EXPECT_TRUE(std::isinf(s.prop_bound_value));
    EXPECT_TRUE(s.prop_bound_satisfied);
    EXPECT_THROW(summarize(TrajectoryReport{}, 2), NoDataError);
}
