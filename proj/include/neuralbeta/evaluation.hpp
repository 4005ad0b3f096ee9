#pragma once

// Test-set reports, checkpoint correlation study, period sweep and weight
// analyses for trained models.

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "neuralbeta/model.hpp"
#include "neuralbeta/series.hpp"

namespace neuralbeta {

struct EstimatorScore {
    std::string estimator;
    double rmse_y = 0.0;
    std::optional<double> rmse_beta;
    double improvement = 0.0;  // % vs the OLS row
};

struct EvaluationReport {
    std::string scenario;
    std::size_t n_samples = 0;
    std::size_t n_windows = 0;
    std::vector<EstimatorScore> rows;  // OLS first

    const EstimatorScore& row(const std::string& estimator) const;
};

// Scores each named beta matrix (N x d) on `test`. The first entry must be
// named "ols" and is the improvement reference. RMSE(beta) is filled in iff
// the batch carries ground truth.
EvaluationReport make_report(const std::string& scenario, const WindowBatch& test, std::size_t n_samples,
                             const std::vector<std::pair<std::string, Eigen::MatrixXd>>& betas);

inline const char* kReportHeader = "scenario,estimator,n_samples,n_windows,rmse_y,rmse_beta,improvement_pct";
std::string format_report_csv(const std::vector<EvaluationReport>& reports);
void write_report_csv(const std::filesystem::path& path, const std::vector<EvaluationReport>& reports);

struct CorrelationPoint {
    std::size_t update = 0;
    double rmse_y = 0.0;
    double rmse_beta = 0.0;
};

struct CorrelationStudy {
    std::vector<CorrelationPoint> points;
    double pearson_r = 0.0;  // NaN when degenerate
    bool degenerate = false;
};

// Needs at least 3 points; zero variance on either axis marks the study
// degenerate instead of throwing.
CorrelationStudy correlation_study(std::vector<CorrelationPoint> points);

// Evaluates every parameter snapshot on `test` (ground truth required). The
// model is left holding its original parameters.
CorrelationStudy correlation_study(Model& model, const std::vector<std::pair<std::size_t, std::vector<std::vector<double>>>>& snapshots,
                                   const WindowBatch& test);

struct PeriodBucket {
    double rate_lo = 0.0;
    double rate_hi = 0.0;
    std::size_t count = 0;
    double rmse_ols = 0.0;
    double rmse_model = 0.0;
    double improvement = 0.0;
};

struct PeriodSweep {
    std::vector<PeriodBucket> buckets;  // non-empty buckets, ascending rate
    std::vector<std::string> warnings;
    bool all_non_negative = false;
    bool interior_max = false;
};

// Buckets windows by the cycle rate c of their sample (equal-width over
// [rate_lo, rate_hi]) and scores model against OLS inside each bucket.
PeriodSweep period_sweep(const WindowBatch& test, const std::vector<double>& rate_per_window,
                         const Eigen::MatrixXd& model_beta, const Eigen::MatrixXd& ols_beta, std::size_t n_buckets = 8,
                         double rate_lo = 4.0, double rate_hi = 32.0);

// Looks up tag `name` of each window's sample; throws DataError when missing.
std::vector<double> window_tags(const WindowBatch& batch, const std::vector<SeriesSample>& samples,
                                const std::string& name);

struct WeightProfile {
    std::string cohort;
    std::size_t count = 0;
    std::vector<double> mean_weight;      // length h, oldest lag first
    std::vector<double> mean_log_weight;  // length h
};

WeightProfile weight_profile(const Model& model, const WindowBatch& cohort, const std::string& label);

// Profile over `count` generated windows whose beta jumps from 2 to 0 at
// lag position `jump_position`.
WeightProfile jump_profile(const Model& model, std::size_t jump_position, std::size_t count, std::uint64_t seed);

// Mean post-jump weight over mean pre-jump weight.
double jump_weight_ratio(const WeightProfile& profile, std::size_t jump_position);

inline const char* kProfileHeader = "lag,position,mean_weight,mean_log_weight";
void write_profile_csv(const std::filesystem::path& path, const WeightProfile& profile);

struct DatedWeight {
    std::string date;
    double mean_weight = 0.0;
    std::size_t count = 0;
};

// Average sum-normalised weight that windows assign to the row observed on
// each date, pooled over all windows and assets. Row dates come from the
// sample each window was cut from.
std::vector<DatedWeight> weights_by_date(const Model& model, const WindowBatch& batch,
                                         const std::vector<SeriesSample>& samples);

struct OverlayPoint {
    std::string date;
    double mean_weight = 0.0;
    double volatility = 0.0;
};

// Trailing sample standard deviation of `window` returns ending at each
// date (shorter at the start of the series),
// aligned with `weights` by date. Dates of `returns` must cover the weights.
std::vector<OverlayPoint> volatility_overlay(const std::vector<DatedWeight>& weights,
                                             const std::vector<std::string>& return_dates,
                                             const Eigen::VectorXd& returns, std::size_t window = 5);

std::vector<double> trailing_std(const Eigen::VectorXd& returns, std::size_t window);

}  // namespace neuralbeta
