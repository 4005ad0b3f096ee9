#include "neuralbeta/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_map>

#include "neuralbeta/metrics.hpp"
#include "neuralbeta/synthetic.hpp"

namespace neuralbeta {

namespace {

Eigen::MatrixXd target_matrix(const std::vector<double>& flat, std::size_t n, std::size_t d) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = flat[i * d + k];
    return m;
}

double rmse_y_of(const Eigen::MatrixXd& beta, const WindowBatch& batch, const std::vector<std::size_t>& rows) {
    double s = 0.0;
    for (std::size_t i : rows) {
        double yhat = 0.0;
        for (std::size_t k = 0; k < batch.dim; ++k) {
            yhat += beta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) * batch.next_x[i * batch.dim + k];
        }
        const double e = batch.next_y[i] - yhat;
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(rows.size()));
}

std::string fmt(double v) {
    std::ostringstream o;
    o << std::setprecision(10) << v;
    return o.str();
}

}  // namespace

const EstimatorScore& EvaluationReport::row(const std::string& estimator) const {
    for (const auto& r : rows)
        if (r.estimator == estimator) return r;
    throw ContractError("report for " + scenario + " has no estimator " + estimator);
}

EvaluationReport make_report(const std::string& scenario, const WindowBatch& test, std::size_t n_samples,
                             const std::vector<std::pair<std::string, Eigen::MatrixXd>>& betas) {
    if (test.empty()) throw ContractError("cannot report on an empty test set");
    if (betas.empty() || betas.front().first != "ols") throw ContractError("the first estimator must be ols");
    const Eigen::MatrixXd next_x = target_matrix(test.next_x, test.size(), test.dim);
    std::optional<Eigen::MatrixXd> truth;
    if (test.has_truth()) truth = target_matrix(test.beta_next_true, test.size(), test.dim);

    EvaluationReport rep;
    rep.scenario = scenario;
    rep.n_samples = n_samples;
    rep.n_windows = test.size();
    for (const auto& [name, beta] : betas) {
        for (const auto& r : rep.rows)
            if (r.estimator == name) throw ContractError("estimator " + name + " listed twice");
        if (beta.rows() != next_x.rows() || beta.cols() != next_x.cols()) {
            throw ShapeError("estimator " + name + ": beta matrix does not match the test set");
        }
        EstimatorScore sc;
        sc.estimator = name;
        const Eigen::VectorXd yhat = predict_y(beta, next_x);
        sc.rmse_y = rmse_y({yhat.data(), static_cast<std::size_t>(yhat.size())}, test.next_y);
        if (truth) sc.rmse_beta = rmse_beta(beta, *truth);
        if (!std::isfinite(sc.rmse_y) || (sc.rmse_beta && !std::isfinite(*sc.rmse_beta))) {
            throw NonFiniteError("estimator " + name + " produced a non-finite metric");
        }
        rep.rows.push_back(sc);
    }
    const double ref = rep.rows.front().rmse_y;
    for (auto& r : rep.rows) r.improvement = improvement_vs_ols(ref, r.rmse_y);
    rep.rows.front().improvement = 0.0;
    return rep;
}

std::string format_report_csv(const std::vector<EvaluationReport>& reports) {
    std::string out = std::string(kReportHeader) + "\n";
    for (const auto& rep : reports) {
        for (const auto& r : rep.rows) {
            out += rep.scenario + "," + r.estimator + "," + std::to_string(rep.n_samples) + "," +
                   std::to_string(rep.n_windows) + "," + fmt(r.rmse_y) + "," + (r.rmse_beta ? fmt(*r.rmse_beta) : "") +
                   "," + fmt(r.improvement) + "\n";
        }
    }
    return out;
}

void write_report_csv(const std::filesystem::path& path, const std::vector<EvaluationReport>& reports) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report " + path.string());
    out << format_report_csv(reports);
    if (!out) throw IoError("failed writing report " + path.string());
}

CorrelationStudy correlation_study(std::vector<CorrelationPoint> points) {
    if (points.size() < 3) throw ContractError("correlation study needs at least 3 checkpoints");
    CorrelationStudy st;
    std::vector<double> a, b;
    for (const auto& p : points) {
        a.push_back(p.rmse_y);
        b.push_back(p.rmse_beta);
    }
    st.points = std::move(points);
    st.pearson_r = pearson(a, b);
    st.degenerate = std::isnan(st.pearson_r);
    return st;
}

CorrelationStudy correlation_study(Model& model,
                                   const std::vector<std::pair<std::size_t, std::vector<std::vector<double>>>>& snapshots,
                                   const WindowBatch& test) {
    if (!test.has_truth()) throw UnsupportedError("correlation study needs ground-truth beta");
    const auto original = model.parameters().snapshot();
    const Eigen::MatrixXd truth = target_matrix(test.beta_next_true, test.size(), test.dim);
    std::vector<std::size_t> all(test.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<CorrelationPoint> pts;
    for (const auto& [update, values] : snapshots) {
        model.parameters().restore(values);
        const Prediction pred = model.predict(test);
        pts.push_back({update, rmse_y_of(pred.beta, test, all), rmse_beta(pred.beta, truth)});
    }
    model.parameters().restore(original);
    return correlation_study(std::move(pts));
}

std::vector<double> window_tags(const WindowBatch& batch, const std::vector<SeriesSample>& samples,
                                const std::string& name) {
    std::unordered_map<std::string, double> by_id;
    for (const auto& s : samples) {
        const auto it = s.tags.find(name);
        if (it != s.tags.end()) by_id[s.id] = it->second;
    }
    std::vector<double> out;
    out.reserve(batch.size());
    for (const auto& o : batch.origin) {
        const auto it = by_id.find(o.sample_id);
        if (it == by_id.end()) throw DataError("sample " + o.sample_id + " has no tag " + name);
        out.push_back(it->second);
    }
    return out;
}

PeriodSweep period_sweep(const WindowBatch& test, const std::vector<double>& rate_per_window,
                         const Eigen::MatrixXd& model_beta, const Eigen::MatrixXd& ols_beta, std::size_t n_buckets,
                         double rate_lo, double rate_hi) {
    if (rate_per_window.size() != test.size()) throw ContractError("period_sweep: one rate per window is required");
    if (n_buckets < 1 || !(rate_hi > rate_lo)) throw ContractError("period_sweep: invalid bucket grid");
    const double width = (rate_hi - rate_lo) / static_cast<double>(n_buckets);
    std::vector<std::vector<std::size_t>> members(n_buckets);
    for (std::size_t i = 0; i < test.size(); ++i) {
        const double c = rate_per_window[i];
        if (c < rate_lo || c > rate_hi) continue;
        const auto b = std::min(n_buckets - 1, static_cast<std::size_t>((c - rate_lo) / width));
        members[b].push_back(i);
    }
    PeriodSweep sw;
    for (std::size_t b = 0; b < n_buckets; ++b) {
        PeriodBucket pb;
        pb.rate_lo = rate_lo + width * static_cast<double>(b);
        pb.rate_hi = b + 1 == n_buckets ? rate_hi : rate_lo + width * static_cast<double>(b + 1);
        pb.count = members[b].size();
        if (pb.count == 0) {
            sw.warnings.push_back("bucket [" + fmt(pb.rate_lo) + ", " + fmt(pb.rate_hi) + ") is empty and was dropped");
            continue;
        }
        pb.rmse_ols = rmse_y_of(ols_beta, test, members[b]);
        pb.rmse_model = rmse_y_of(model_beta, test, members[b]);
        pb.improvement = improvement_vs_ols(pb.rmse_ols, pb.rmse_model);
        sw.buckets.push_back(pb);
    }
    if (sw.buckets.empty()) throw DataError("period_sweep: no window falls inside the rate range");
    sw.all_non_negative = std::all_of(sw.buckets.begin(), sw.buckets.end(), [](const auto& b) { return b.improvement >= 0.0; });
    const auto best = std::max_element(sw.buckets.begin(), sw.buckets.end(),
                                       [](const auto& x, const auto& y) { return x.improvement < y.improvement; });
    sw.interior_max = best != sw.buckets.begin() && best + 1 != sw.buckets.end();
    if (!sw.all_non_negative) sw.warnings.push_back("improvement over OLS is negative in at least one bucket");
    if (!sw.interior_max) sw.warnings.push_back("largest improvement sits in an extreme bucket");
    return sw;
}

WeightProfile weight_profile(const Model& model, const WindowBatch& cohort, const std::string& label) {
    if (model.config().head_kind != HeadKind::nbi) throw UnsupportedError("weight profiles need an NBI head");
    if (cohort.empty()) throw ContractError("weight profile over an empty cohort");
    const Prediction pred = model.predict(cohort);
    const Eigen::MatrixXd& w = *pred.weights;
    WeightProfile p;
    p.cohort = label;
    p.count = cohort.size();
    p.mean_weight.resize(static_cast<std::size_t>(w.cols()));
    p.mean_log_weight.resize(static_cast<std::size_t>(w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        p.mean_weight[static_cast<std::size_t>(j)] = w.col(j).mean();
        p.mean_log_weight[static_cast<std::size_t>(j)] = w.col(j).array().log().mean();
    }
    return p;
}

WeightProfile jump_profile(const Model& model, std::size_t jump_position, std::size_t count, std::uint64_t seed) {
    const WindowBatch cohort = jump_cohort(model.config().lookback, jump_position, count, 2.0, 0.0, seed);
    return weight_profile(model, cohort, "jump@" + std::to_string(jump_position));
}

double jump_weight_ratio(const WeightProfile& profile, std::size_t jump_position) {
    const std::size_t h = profile.mean_weight.size();
    if (jump_position == 0 || jump_position >= h) throw ContractError("jump position must split the window");
    double pre = 0.0, post = 0.0;
    for (std::size_t j = 0; j < jump_position; ++j) pre += profile.mean_weight[j];
    for (std::size_t j = jump_position; j < h; ++j) post += profile.mean_weight[j];
    pre /= static_cast<double>(jump_position);
    post /= static_cast<double>(h - jump_position);
    return post / pre;
}

void write_profile_csv(const std::filesystem::path& path, const WeightProfile& profile) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write profile " + path.string());
    out << kProfileHeader << '\n' << std::setprecision(17);
    const std::size_t h = profile.mean_weight.size();
    for (std::size_t j = 0; j < h; ++j) {
        out << (h - 1 - j) << ',' << j << ',' << profile.mean_weight[j] << ',' << profile.mean_log_weight[j] << '\n';
    }
    if (!out) throw IoError("failed writing profile " + path.string());
}

std::vector<DatedWeight> weights_by_date(const Model& model, const WindowBatch& batch,
                                         const std::vector<SeriesSample>& samples) {
    if (model.config().head_kind != HeadKind::nbi) throw UnsupportedError("weights by date need an NBI head");
    std::unordered_map<std::string, const SeriesSample*> by_id;
    for (const auto& s : samples) by_id[s.id] = &s;
    const Prediction pred = model.predict(batch);
    const Eigen::MatrixXd& w = *pred.weights;
    const std::size_t h = batch.lookback;
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& o = batch.origin[i];
        const auto it = by_id.find(o.sample_id);
        if (it == by_id.end() || it->second->dates.empty()) throw DataError("window " + o.sample_id + " has no dated sample");
        const auto& dates = it->second->dates;
        if (o.target < h || o.target >= dates.size()) throw DataError("window origin outside sample " + o.sample_id);
        const double total = w.row(static_cast<Eigen::Index>(i)).sum();
        for (std::size_t j = 0; j < h; ++j) {
            auto& a = acc[dates[o.target - h + j]];
            a.first += w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) / total;
            ++a.second;
        }
    }
    std::vector<DatedWeight> out;
    for (const auto& [date, a] : acc) out.push_back({date, a.first / static_cast<double>(a.second), a.second});
    return out;
}

std::vector<double> trailing_std(const Eigen::VectorXd& returns, std::size_t window) {
    if (window < 2) throw ContractError("volatility window must be at least 2");
    std::vector<double> out(static_cast<std::size_t>(returns.size()), 0.0);
    // the first dates use the shorter history available
    for (Eigen::Index t = 1; t < returns.size(); ++t) {
        const Eigen::Index n = std::min<Eigen::Index>(static_cast<Eigen::Index>(window), t + 1);
        const auto seg = returns.segment(t + 1 - n, n);
        const double m = seg.mean();
        out[static_cast<std::size_t>(t)] = std::sqrt((seg.array() - m).square().sum() / static_cast<double>(n - 1));
    }
    return out;
}

std::vector<OverlayPoint> volatility_overlay(const std::vector<DatedWeight>& weights,
                                             const std::vector<std::string>& return_dates,
                                             const Eigen::VectorXd& returns, std::size_t window) {
    if (return_dates.size() != static_cast<std::size_t>(returns.size())) {
        throw ContractError("volatility_overlay: one date per return is required");
    }
    const std::vector<double> vol = trailing_std(returns, window);
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t t = 0; t < return_dates.size(); ++t) index[return_dates[t]] = t;
    std::vector<OverlayPoint> out;
    for (const auto& w : weights) {
        const auto it = index.find(w.date);
        if (it == index.end()) throw DataError("volatility_overlay: no return on " + w.date);
        out.push_back({w.date, w.mean_weight, vol[it->second]});
    }
    return out;
}

}  // namespace neuralbeta
