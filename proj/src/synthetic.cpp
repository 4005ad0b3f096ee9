#include "neuralbeta/synthetic.hpp"

#include <cmath>

namespace neuralbeta {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::string sample_id(ScenarioKind kind, std::size_t i) { return to_string(kind) + "_" + std::to_string(i); }

template <typename MakePath>
std::vector<SeriesSample> generate_with(const ScenarioConfig& cfg, MakePath make_path) {
    cfg.validate();
    std::vector<SeriesSample> out;
    out.reserve(cfg.n_samples);
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        Rng rng = sample_stream(cfg.seed, i);
        std::map<std::string, double> tags;
        Eigen::MatrixXd path = make_path(rng, tags);
        SeriesSample s = gen_xy(path, rng);
        s.id = sample_id(cfg.kind, i);
        s.tags = std::move(tags);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

std::string to_string(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::constant: return "constant";
        case ScenarioKind::stepwise: return "stepwise";
        case ScenarioKind::cyclical: return "cyclical";
    }
    return "unknown";
}

ScenarioKind parse_scenario_kind(const std::string& name) {
    if (name == "constant") return ScenarioKind::constant;
    if (name == "stepwise") return ScenarioKind::stepwise;
    if (name == "cyclical") return ScenarioKind::cyclical;
    throw ConfigError("unknown scenario kind '" + name + "' (expected constant, stepwise or cyclical)");
}

void ScenarioConfig::validate() const {
    if (series_length < 2) throw ConfigError("series_length must be at least 2");
    if (n_samples < 1) throw ConfigError("n_samples must be at least 1");
    if (d < 1) throw ConfigError("d must be at least 1");
    if (kind == ScenarioKind::stepwise && series_length < 3) {
        throw ConfigError("stepwise scenario needs series_length >= 3");
    }
}

Rng sample_stream(std::uint64_t seed, std::uint64_t index) {
    return Rng(splitmix64(splitmix64(seed) ^ (index * 0xD1B54A32D192ED03ULL + 1)));
}

SeriesSample gen_xy(const Eigen::MatrixXd& beta_path, Rng& rng, bool with_noise) {
    if (!beta_path.allFinite()) throw ContractError("beta path must be finite");
    const Eigen::Index T = beta_path.rows();
    const Eigen::Index d = beta_path.cols();
    std::student_t_distribution<double> student(10.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    SeriesSample s;
    s.x.resize(T, d);
    s.y.resize(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index k = 0; k < d; ++k) s.x(t, k) = student(rng);
        const double eps = with_noise ? normal(rng) : 0.0;
        s.y(t) = beta_path.row(t).dot(s.x.row(t)) + eps;
    }
    s.beta_true = beta_path;
    return s;
}

std::vector<SeriesSample> gen_constant(const ScenarioConfig& cfg) {
    if (cfg.kind != ScenarioKind::constant) throw ConfigError("gen_constant requires kind == constant");
    const auto T = static_cast<Eigen::Index>(cfg.series_length);
    const auto d = static_cast<Eigen::Index>(cfg.d);
    return generate_with(cfg, [&](Rng& rng, std::map<std::string, double>& tags) {
        std::normal_distribution<double> prior(1.0, 1.0);
        Eigen::RowVectorXd c(d);
        for (Eigen::Index k = 0; k < d; ++k) c(k) = prior(rng);
        tags["beta"] = c(0);
        return Eigen::MatrixXd(c.replicate(T, 1));
    });
}

std::vector<SeriesSample> gen_stepwise(const ScenarioConfig& cfg) {
    if (cfg.kind != ScenarioKind::stepwise) throw ConfigError("gen_stepwise requires kind == stepwise");
    const std::size_t T = cfg.series_length;
    const auto d = static_cast<Eigen::Index>(cfg.d);
    return generate_with(cfg, [&](Rng& rng, std::map<std::string, double>& tags) {
        // The lookback window is rows [0, T-1); the jump sits strictly inside
        // it so both regimes are observed before the target row.
        std::uniform_int_distribution<std::size_t> position(1, T - 2);
        std::normal_distribution<double> prior(1.0, 1.0);
        const std::size_t jump = position(rng);
        Eigen::RowVectorXd before(d), after(d);
        for (Eigen::Index k = 0; k < d; ++k) before(k) = prior(rng);
        for (Eigen::Index k = 0; k < d; ++k) after(k) = prior(rng);
        Eigen::MatrixXd path(static_cast<Eigen::Index>(T), d);
        for (std::size_t t = 0; t < T; ++t) path.row(static_cast<Eigen::Index>(t)) = t < jump ? before : after;
        tags["jump_index"] = static_cast<double>(jump);
        tags["beta_before"] = before(0);
        tags["beta_after"] = after(0);
        return path;
    });
}

double cyclical_time(std::size_t t, std::size_t series_length) {
    return static_cast<double>(t) / static_cast<double>(series_length - 1);
}

std::vector<SeriesSample> gen_cyclical(const ScenarioConfig& cfg) {
    if (cfg.kind != ScenarioKind::cyclical) throw ConfigError("gen_cyclical requires kind == cyclical");
    const std::size_t T = cfg.series_length;
    const auto d = static_cast<Eigen::Index>(cfg.d);
    return generate_with(cfg, [&](Rng& rng, std::map<std::string, double>& tags) {
        std::normal_distribution<double> phase(0.0, 1.0);
        std::uniform_real_distribution<double> rate(kCycleRateMin, kCycleRateMax);
        Eigen::MatrixXd path(static_cast<Eigen::Index>(T), d);
        for (Eigen::Index k = 0; k < d; ++k) {
            const double b0 = phase(rng);
            const double c = rate(rng);
            for (std::size_t t = 0; t < T; ++t) {
                path(static_cast<Eigen::Index>(t), k) = std::sin(b0 + c * cyclical_time(t, T));
            }
            if (k == 0) {
                tags["phase"] = b0;
                tags["cycle_rate"] = c;
            }
        }
        return path;
    });
}

std::vector<SeriesSample> generate(const ScenarioConfig& cfg) {
    switch (cfg.kind) {
        case ScenarioKind::constant: return gen_constant(cfg);
        case ScenarioKind::stepwise: return gen_stepwise(cfg);
        case ScenarioKind::cyclical: return gen_cyclical(cfg);
    }
    throw ConfigError("unknown scenario kind");
}

Eigen::VectorXd bayes_posterior_mean(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& prior_mean, const Eigen::MatrixXd& prior_precision) {
    const Eigen::Index d = prior_mean.size();
    if (prior_precision.rows() != d || prior_precision.cols() != d) throw ShapeError("prior precision must be d x d");
    if (x.rows() != y.size()) throw ShapeError("x and y row counts differ");
    if (x.rows() > 0 && x.cols() != d) throw ShapeError("x columns do not match prior dimension");
    Eigen::MatrixXd a = prior_precision;
    Eigen::VectorXd rhs = prior_precision * prior_mean;
    if (x.rows() > 0) {
        a.noalias() += x.transpose() * x;
        rhs.noalias() += x.transpose() * y;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success || !(llt.rcond() >= 1e-12)) {
        throw SingularSystemError("posterior precision is not positive definite");
    }
    return llt.solve(rhs);
}

WindowBatch jump_cohort(std::size_t lookback, std::size_t jump_position, std::size_t count, double beta_before,
                        double beta_after, std::uint64_t seed) {
    if (jump_position >= lookback) throw ConfigError("jump position must lie inside the lookback window");
    std::vector<SeriesSample> samples;
    samples.reserve(count);
    const std::size_t T = lookback + 1;
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng = sample_stream(seed ^ (0x51ED270B27ULL * (jump_position + 1)), i);
        Eigen::MatrixXd path(static_cast<Eigen::Index>(T), 1);
        for (std::size_t t = 0; t < T; ++t) path(static_cast<Eigen::Index>(t), 0) = t < jump_position ? beta_before : beta_after;
        SeriesSample s = gen_xy(path, rng);
        s.id = "jump" + std::to_string(jump_position) + "_" + std::to_string(i);
        s.tags["jump_index"] = static_cast<double>(jump_position);
        samples.push_back(std::move(s));
    }
    return make_windows(samples, lookback);
}

}  // namespace neuralbeta
