#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "neuralbeta/baselines.hpp"
#include "neuralbeta/evaluation.hpp"
#include "neuralbeta/synthetic.hpp"

using namespace neuralbeta;

namespace {

WindowBatch small_batch(ScenarioKind kind, std::size_t n, std::uint64_t seed, std::size_t lookback = 16) {
    ScenarioConfig sc;
    sc.kind = kind;
    sc.n_samples = n;
    sc.series_length = lookback + 4;
    sc.seed = seed;
    return make_windows(generate(sc), lookback);
}

ModelConfig tiny_model(HeadKind head = HeadKind::nbi) {
    ModelConfig mc;
    mc.head_kind = head;
    mc.lookback = 16;
    mc.seed = 5;
    return mc;
}

}  // namespace

TEST(Report, OlsImprovementIsExactlyZero) {
    const WindowBatch test = small_batch(ScenarioKind::stepwise, 40, 1);
    const Eigen::MatrixXd ols = estimate_ols(test);
    const EvaluationReport rep =
        make_report("s", test, 40, {{"ols", ols}, {"wls", estimate_wls(test, WeightScheme::exponential(4))}, {"copy", ols}});
    EXPECT_EQ(rep.row("ols").improvement, 0.0);
    EXPECT_EQ(rep.row("copy").improvement, 0.0);
    EXPECT_EQ(rep.n_windows, test.size());
    ASSERT_TRUE(rep.row("wls").rmse_beta);
    EXPECT_GT(*rep.row("wls").rmse_beta, 0.0);
}

TEST(Report, BetaRmseOnlyWithTruth) {
    WindowBatch test = small_batch(ScenarioKind::constant, 10, 2);
    test.beta_next_true.clear();
    const EvaluationReport rep = make_report("c", test, 10, {{"ols", estimate_ols(test)}});
    EXPECT_FALSE(rep.row("ols").rmse_beta);
    const std::string csv = format_report_csv({rep});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kReportHeader);
    EXPECT_NE(csv.find(",,0\n"), std::string::npos);
}

TEST(Report, Contracts) {
    const WindowBatch test = small_batch(ScenarioKind::constant, 5, 3);
    const Eigen::MatrixXd ols = estimate_ols(test);
    EXPECT_THROW(make_report("c", test, 5, {{"wls", ols}}), ContractError);
    EXPECT_THROW(make_report("c", test, 5, {{"ols", ols}, {"ols", ols}}), ContractError);
    EXPECT_THROW(make_report("c", test, 5, {{"ols", ols}, {"bad", Eigen::MatrixXd::Zero(2, 1)}}), ShapeError);
    EXPECT_THROW(make_report("c", test, 5, {{"ols", ols}}).row("missing"), ContractError);
}

TEST(Report, RowOrderIsStable) {
    const WindowBatch test = small_batch(ScenarioKind::cyclical, 12, 4);
    const Eigen::MatrixXd ols = estimate_ols(test);
    const auto a = format_report_csv({make_report("x", test, 12, {{"ols", ols}, {"z", ols * 0.9}, {"a", ols * 1.1}})});
    const auto b = format_report_csv({make_report("x", test, 12, {{"ols", ols}, {"z", ols * 0.9}, {"a", ols * 1.1}})});
    EXPECT_EQ(a, b);
    EXPECT_LT(a.find(",z,"), a.find(",a,"));
}

TEST(Correlation, DegenerateWhenConstant) {
    const CorrelationStudy s = correlation_study({{1, 1.0, 0.5}, {2, 1.0, 0.5}, {3, 1.0, 0.5}});
    EXPECT_TRUE(s.degenerate);
    EXPECT_TRUE(std::isnan(s.pearson_r));
}

TEST(Correlation, PermutationInvariant) {
    std::vector<CorrelationPoint> pts;
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    for (std::size_t i = 0; i < 25; ++i) {
        const double b = 0.3 + 0.01 * static_cast<double>(i);
        pts.push_back({i, 1.0 + 2.0 * b + 0.01 * n(rng), b});
    }
    const double r = correlation_study(pts).pearson_r;
    EXPECT_GT(r, 0.9);
    std::shuffle(pts.begin(), pts.end(), rng);
    EXPECT_NEAR(correlation_study(pts).pearson_r, r, 1e-12);
}

TEST(Correlation, NeedsThreePoints) {
    EXPECT_THROW(correlation_study(std::vector<CorrelationPoint>{{1, 1, 1}, {2, 2, 2}}), ContractError);
}

TEST(Correlation, SnapshotsLeaveModelUnchanged) {
    Model model(tiny_model());
    const auto original = model.parameters().snapshot();
    auto shifted = original;
    for (auto& v : shifted)
        for (auto& x : v) x *= 1.1;
    auto more = original;
    for (auto& v : more)
        for (auto& x : v) x *= 0.8;
    const WindowBatch test = small_batch(ScenarioKind::cyclical, 6, 9);
    const CorrelationStudy s = correlation_study(model, {{1, original}, {2, shifted}, {3, more}}, test);
    EXPECT_EQ(s.points.size(), 3u);
    EXPECT_EQ(model.parameters().snapshot(), original);
}

TEST(PeriodSweep, BucketsCoverRateRange) {
    const WindowBatch test = small_batch(ScenarioKind::cyclical, 400, 10);
    ScenarioConfig sc;
    sc.kind = ScenarioKind::cyclical;
    sc.n_samples = 400;
    sc.series_length = 20;
    sc.seed = 10;
    const auto samples = generate(sc);
    const std::vector<double> rates = window_tags(test, samples, "cycle_rate");
    const Eigen::MatrixXd ols = estimate_ols(test);
    const PeriodSweep sw = period_sweep(test, rates, estimate_wls(test, WeightScheme::exponential(4)), ols);
    ASSERT_EQ(sw.buckets.size(), 8u);
    EXPECT_DOUBLE_EQ(sw.buckets.front().rate_lo, 4.0);
    EXPECT_DOUBLE_EQ(sw.buckets.back().rate_hi, 32.0);
    for (std::size_t b = 1; b < sw.buckets.size(); ++b) EXPECT_DOUBLE_EQ(sw.buckets[b].rate_lo, sw.buckets[b - 1].rate_hi);
    std::size_t total = 0;
    for (const auto& b : sw.buckets) total += b.count;
    EXPECT_EQ(total, test.size());
}

TEST(PeriodSweep, EmptyBucketsDroppedWithWarning) {
    const WindowBatch test = small_batch(ScenarioKind::cyclical, 20, 11);
    const std::vector<double> rates(test.size(), 5.0);
    const Eigen::MatrixXd ols = estimate_ols(test);
    const PeriodSweep sw = period_sweep(test, rates, ols, ols);
    EXPECT_EQ(sw.buckets.size(), 1u);
    EXPECT_GE(sw.warnings.size(), 7u);
}

TEST(PeriodSweep, MissingTagIsDataError) {
    const WindowBatch test = small_batch(ScenarioKind::constant, 3, 12);
    ScenarioConfig sc;
    sc.n_samples = 3;
    sc.series_length = 20;
    sc.seed = 12;
    EXPECT_THROW(window_tags(test, generate(sc), "cycle_rate"), DataError);
}

TEST(WeightProfile, LengthAndPositivity) {
    Model model(tiny_model());
    const WindowBatch cohort = small_batch(ScenarioKind::stepwise, 30, 13);
    const WeightProfile p = weight_profile(model, cohort, "all");
    ASSERT_EQ(p.mean_weight.size(), 16u);
    EXPECT_EQ(p.count, cohort.size());
    for (std::size_t j = 0; j < 16; ++j) {
        EXPECT_GT(p.mean_weight[j], 0.0);
        EXPECT_TRUE(std::isfinite(p.mean_log_weight[j]));
        EXPECT_LE(p.mean_log_weight[j], std::log(p.mean_weight[j]) + 1e-12);
    }
}

TEST(WeightProfile, NbHeadUnsupported) {
    Model model(tiny_model(HeadKind::nb));
    EXPECT_THROW(weight_profile(model, small_batch(ScenarioKind::stepwise, 3, 14), "x"), UnsupportedError);
}

TEST(WeightProfile, JumpRatio) {
    WeightProfile p;
    p.mean_weight = {1, 1, 1, 6, 6, 6, 6, 6};
    EXPECT_DOUBLE_EQ(jump_weight_ratio(p, 3), 6.0);
    EXPECT_THROW(jump_weight_ratio(p, 0), ContractError);
    EXPECT_THROW(jump_weight_ratio(p, 8), ContractError);
    Model model(tiny_model());
    const WeightProfile jp = jump_profile(model, 8, 50, 3);
    EXPECT_EQ(jp.count, 50u);
    EXPECT_EQ(jp.mean_weight.size(), 16u);
}

TEST(Volatility, ConstantSeriesIsZero) {
    const Eigen::VectorXd r = Eigen::VectorXd::Constant(12, 0.01);
    for (double v : trailing_std(r, 5)) EXPECT_EQ(v, 0.0);
}

TEST(Volatility, TrailingWindow) {
    Eigen::VectorXd r(6);
    r << 1, 2, 3, 4, 5, 100;
    const auto s = trailing_std(r, 5);
    EXPECT_EQ(s[0], 0.0);
    EXPECT_NEAR(s[1], std::sqrt(0.5), 1e-15);
    EXPECT_NEAR(s[4], std::sqrt(2.5), 1e-15);
    Eigen::VectorXd last(5);
    last << 2, 3, 4, 5, 100;
    const double m = last.mean();
    EXPECT_NEAR(s[5], std::sqrt((last.array() - m).square().sum() / 4.0), 1e-12);
}

TEST(Volatility, OverlayAlignsByDate) {
    const std::vector<std::string> dates = {"2021-01-04", "2021-01-05", "2021-01-06", "2021-01-07"};
    Eigen::VectorXd r(4);
    r << 0.01, -0.02, 0.03, 0.0;
    const std::vector<DatedWeight> w = {{"2021-01-05", 0.2, 3}, {"2021-01-07", 0.4, 3}};
    const auto o = volatility_overlay(w, dates, r, 5);
    const auto vol = trailing_std(r, 5);
    ASSERT_EQ(o.size(), 2u);
    EXPECT_EQ(o[0].date, "2021-01-05");
    EXPECT_EQ(o[0].volatility, vol[1]);
    EXPECT_EQ(o[1].volatility, vol[3]);
    EXPECT_EQ(o[1].mean_weight, 0.4);
    EXPECT_THROW(volatility_overlay({{"2022-01-01", 0.1, 1}}, dates, r, 5), DataError);
}
