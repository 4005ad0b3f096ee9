#pragma once

// Closed-form beta estimators over a lookback window: rolling OLS, rolling
// WLS with exponential (half-life) weights, and regularised WLS with a
// Gaussian prior. None of them fit an intercept.

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "neuralbeta/series.hpp"
#include "neuralbeta/tensor.hpp"

namespace neuralbeta {

// Systems whose reciprocal condition number drops below this are rejected.
inline constexpr double kSingularRcond = 1e-12;

struct WeightScheme {
    enum class Kind { uniform, exponential };
    Kind kind = Kind::uniform;
    double half_life = 0.0;  // lags after which the weight halves; exponential only

    static WeightScheme uniform() { return {}; }
    static WeightScheme exponential(double half_life);

    // Unnormalised per-row weights for a window of length h, oldest row
    // first: w = 2^{-lag / half_life} with lag 0 on the newest row.
    Eigen::VectorXd weights(std::size_t lookback) const;
};

struct BetaEstimate {
    Eigen::VectorXd beta;
    std::optional<Eigen::VectorXd> weights_used;  // normalised to sum 1 when reported
    double rcond = 0.0;
};

BetaEstimate rolling_ols(const Eigen::MatrixXd& window_x, const Eigen::VectorXd& window_y,
                         const std::string& origin = {});

BetaEstimate rolling_wls(const Eigen::MatrixXd& window_x, const Eigen::VectorXd& window_y, const WeightScheme& scheme,
                         const std::string& origin = {});

// beta = (X'WX)^{-1} X'Wy for arbitrary positive weights.
BetaEstimate weighted_least_squares(const Eigen::MatrixXd& window_x, const Eigen::VectorXd& window_y,
                                    const Eigen::VectorXd& weights, const std::string& origin = {});

// beta = (P + X'WX)^{-1} (P mu + X'Wy) with P = diag(prior_precision).
// Weights may be zero; the prior keeps the system well-posed.
BetaEstimate regularized_wls(const Eigen::MatrixXd& window_x, const Eigen::VectorXd& window_y,
                             const Eigen::VectorXd& weights, const Eigen::VectorXd& prior_mean,
                             const Eigen::VectorXd& prior_precision);

// Differentiable batched form of regularized_wls used by the interpretable
// head. windows_x [B,h,d], windows_y [B,h], weights [B,h], prior_mean [d],
// prior_precision [d] -> beta [B,d].
ad::Tensor regularized_wls(const ad::Tensor& windows_x, const ad::Tensor& windows_y, const ad::Tensor& weights,
                           const ad::Tensor& prior_mean, const ad::Tensor& prior_precision);

// Per-window estimates over a whole batch (N x d).
Eigen::MatrixXd estimate_ols(const WindowBatch& batch);
Eigen::MatrixXd estimate_wls(const WindowBatch& batch, const WeightScheme& scheme);

inline const std::vector<double> kDefaultHalfLifeGrid = {1, 2, 4, 8, 16, 32, 64, 128};

struct HalfLifeScore {
    double half_life = 0.0;
    double rmse = 0.0;
};

struct HalfLifeTuning {
    WeightScheme best;
    std::vector<HalfLifeScore> scores;  // in grid order
};

// Picks the grid member with the lowest validation RMSE of the predicted
// response; ties go to the larger half-life.
HalfLifeTuning tune_half_life(const WindowBatch& validation, const std::vector<double>& grid = kDefaultHalfLifeGrid);

}  // namespace neuralbeta
