#pragma once

#include <Eigen/Dense>

#include <span>

namespace neuralbeta {

// sqrt(mean((pred - truth)^2)); lengths must match and be non-zero.
double rmse_y(std::span<const double> pred_y, std::span<const double> true_y);

// Pools all N*d coefficient entries.
double rmse_beta(const Eigen::MatrixXd& pred_beta, const Eigen::MatrixXd& true_beta);

// 100 * (rmse_ols - rmse_model) / rmse_ols
double improvement_vs_ols(double rmse_ols, double rmse_model);

// Row-wise <beta_i, x_i>; both N x d.
Eigen::VectorXd predict_y(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& next_x);

// Pearson correlation; NaN when either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace neuralbeta
