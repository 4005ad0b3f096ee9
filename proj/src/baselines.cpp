#include "neuralbeta/baselines.hpp"

#include <cmath>

#include "neuralbeta/metrics.hpp"

namespace neuralbeta {

namespace {

BetaEstimate solve_normal_equations(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs, const std::string& origin) {
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    const double rc = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
    if (!(rc >= kSingularRcond)) {
        throw SingularSystemError("rank-deficient window" + (origin.empty() ? std::string{} : " at " + origin) +
                                  " (rcond " + std::to_string(rc) + ")");
    }
    BetaEstimate est;
    est.beta = llt.solve(rhs);
    est.rcond = rc;
    return est;
}

void check_window(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() != y.size()) throw ShapeError("window x and y lengths differ");
    if (x.cols() < 1) throw ShapeError("window has no factors");
}

}  // namespace

WeightScheme WeightScheme::exponential(double half_life) {
    if (!(half_life > 0.0)) throw ConfigError("half_life must be positive");
    WeightScheme s;
    s.kind = Kind::exponential;
    s.half_life = half_life;
    return s;
}

Eigen::VectorXd WeightScheme::weights(std::size_t lookback) const {
    const auto h = static_cast<Eigen::Index>(lookback);
    if (kind == Kind::uniform) return Eigen::VectorXd::Ones(h);
    if (!(half_life > 0.0)) throw ConfigError("half_life must be positive");
    Eigen::VectorXd w(h);
    for (Eigen::Index i = 0; i < h; ++i) {
        const double lag = static_cast<double>(h - 1 - i);
        w(i) = std::exp2(-lag / half_life);
    }
    return w;
}

BetaEstimate rolling_ols(const Eigen::MatrixXd& window_x, const Eigen::VectorXd& window_y, const std::string& origin) {
    check_window(window_x, window_y);
    if (window_x.rows() < window_x.cols()) throw SingularSystemError("window shorter than factor count" + origin);
    return solve_normal_equations(window_x.transpose() * window_x, window_x.transpose() * window_y, origin);
}

BetaEstimate weighted_least_squares(const Eigen::MatrixXd& window_x, const Eigen::VectorXd& window_y,
                                    const Eigen::VectorXd& weights, const std::string& origin) {
    check_window(window_x, window_y);
    if (weights.size() != window_y.size()) throw ShapeError("weights length differs from window length");
    if ((weights.array() <= 0.0).any()) throw ContractError("WLS weights must be positive");
    const Eigen::MatrixXd xw = window_x.array().colwise() * weights.array();
    BetaEstimate est = solve_normal_equations(xw.transpose() * window_x, xw.transpose() * window_y, origin);
    est.weights_used = weights / weights.sum();
    return est;
}

BetaEstimate rolling_wls(const Eigen::MatrixXd& window_x, const Eigen::VectorXd& window_y, const WeightScheme& scheme,
                         const std::string& origin) {
    return weighted_least_squares(window_x, window_y, scheme.weights(static_cast<std::size_t>(window_y.size())), origin);
}

BetaEstimate regularized_wls(const Eigen::MatrixXd& window_x, const Eigen::VectorXd& window_y,
                             const Eigen::VectorXd& weights, const Eigen::VectorXd& prior_mean,
                             const Eigen::VectorXd& prior_precision) {
    check_window(window_x, window_y);
    const Eigen::Index d = window_x.cols();
    if (weights.size() != window_y.size()) throw ShapeError("weights length differs from window length");
    if (prior_mean.size() != d || prior_precision.size() != d) throw ShapeError("prior dimension mismatch");
    if ((weights.array() < 0.0).any()) throw ContractError("regularized_wls: negative weight");
    if (!(prior_precision.array() > 0.0).all()) throw ContractError("regularized_wls: prior precision must be positive");
    const Eigen::MatrixXd xw = window_x.array().colwise() * weights.array();
    Eigen::MatrixXd gram = xw.transpose() * window_x;
    gram.diagonal() += prior_precision;
    const Eigen::VectorXd rhs = prior_precision.cwiseProduct(prior_mean) + xw.transpose() * window_y;
    BetaEstimate est = solve_normal_equations(gram, rhs, {});
    est.weights_used = weights;
    return est;
}

ad::Tensor regularized_wls(const ad::Tensor& windows_x, const ad::Tensor& windows_y, const ad::Tensor& weights,
                           const ad::Tensor& prior_mean, const ad::Tensor& prior_precision) {
    if (windows_x.rank() != 3 || windows_y.rank() != 2 || weights.rank() != 2) {
        throw ShapeError("regularized_wls expects x[B,h,d], y[B,h], w[B,h]");
    }
    const std::size_t b = windows_x.dim(0), h = windows_x.dim(1), d = windows_x.dim(2);
    if (windows_y.shape() != ad::Shape{b, h} || weights.shape() != ad::Shape{b, h}) {
        throw ShapeError("regularized_wls: y/weights shape mismatch");
    }
    const ad::Tensor xw = ad::mul(windows_x, ad::reshape(weights, {b, h, 1}));
    const ad::Tensor gram = ad::add(ad::matmul(windows_x, xw, true, false), ad::diag(prior_precision));
    const ad::Tensor xwy = ad::reshape(ad::matmul(xw, ad::reshape(windows_y, {b, h, 1}), true, false), {b, d});
    const ad::Tensor rhs = ad::add(xwy, ad::mul(prior_precision, prior_mean));
    return ad::linear_solve(gram, rhs);
}

Eigen::MatrixXd estimate_ols(const WindowBatch& batch) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(batch.dim));
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& o = batch.origin[i];
        out.row(static_cast<Eigen::Index>(i)) =
            rolling_ols(batch.window_x(i), batch.window_y(i), o.sample_id + "@" + std::to_string(o.target)).beta.transpose();
    }
    return out;
}

Eigen::MatrixXd estimate_wls(const WindowBatch& batch, const WeightScheme& scheme) {
    const Eigen::VectorXd w = scheme.weights(batch.lookback);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(batch.dim));
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& o = batch.origin[i];
        out.row(static_cast<Eigen::Index>(i)) =
            weighted_least_squares(batch.window_x(i), batch.window_y(i), w, o.sample_id + "@" + std::to_string(o.target))
                .beta.transpose();
    }
    return out;
}

HalfLifeTuning tune_half_life(const WindowBatch& validation, const std::vector<double>& grid) {
    if (grid.empty()) throw ConfigError("half-life grid is empty");
    if (validation.empty()) throw ConfigError("validation set is empty");
    Eigen::MatrixXd next_x(static_cast<Eigen::Index>(validation.size()), static_cast<Eigen::Index>(validation.dim));
    for (std::size_t i = 0; i < validation.size(); ++i) next_x.row(static_cast<Eigen::Index>(i)) = validation.target_x(i).transpose();
    HalfLifeTuning out;
    double best_rmse = 0.0;
    bool have_best = false;
    for (double hl : grid) {
        const WeightScheme scheme = WeightScheme::exponential(hl);
        const Eigen::VectorXd pred = predict_y(estimate_wls(validation, scheme), next_x);
        const double r = rmse_y({pred.data(), static_cast<std::size_t>(pred.size())}, validation.next_y);
        out.scores.push_back({hl, r});
        if (!have_best || r < best_rmse || (r == best_rmse && hl > out.best.half_life)) {
            best_rmse = r;
            out.best = scheme;
            have_best = true;
        }
    }
    return out;
}

}  // namespace neuralbeta
