#include "neuralbeta/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "neuralbeta/errors.hpp"

namespace neuralbeta {

double rmse_y(std::span<const double> pred_y, std::span<const double> true_y) {
    if (pred_y.size() != true_y.size()) {
        throw ContractError("rmse_y: " + std::to_string(pred_y.size()) + " predictions vs " +
                            std::to_string(true_y.size()) + " targets");
    }
    if (pred_y.empty()) throw ContractError("rmse_y: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred_y.size(); ++i) {
        const double e = true_y[i] - pred_y[i];
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(pred_y.size()));
}

double rmse_beta(const Eigen::MatrixXd& pred_beta, const Eigen::MatrixXd& true_beta) {
    if (pred_beta.rows() != true_beta.rows() || pred_beta.cols() != true_beta.cols()) {
        throw ContractError("rmse_beta: shape mismatch");
    }
    if (pred_beta.size() == 0) throw ContractError("rmse_beta: empty input");
    return std::sqrt((pred_beta - true_beta).squaredNorm() / static_cast<double>(pred_beta.size()));
}

double improvement_vs_ols(double rmse_ols, double rmse_model) {
    if (!(rmse_ols > 0.0)) throw ContractError("improvement_vs_ols: OLS RMSE must be positive");
    return 100.0 * (rmse_ols - rmse_model) / rmse_ols;
}

Eigen::VectorXd predict_y(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& next_x) {
    if (beta.rows() != next_x.rows() || beta.cols() != next_x.cols()) throw ContractError("predict_y: shape mismatch");
    return beta.cwiseProduct(next_x).rowwise().sum();
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw ContractError("pearson needs two equal-length series of size >= 2");
    const auto n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sab / std::sqrt(saa * sbb);
}

}  // namespace neuralbeta
