#pragma once

// Synthetic return series with known time-varying beta: constant, stepwise
// (one regime shift) and cyclical (sinusoidal) scenarios.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "neuralbeta/series.hpp"

namespace neuralbeta {

enum class ScenarioKind { constant, stepwise, cyclical };

std::string to_string(ScenarioKind kind);
ScenarioKind parse_scenario_kind(const std::string& name);

struct ScenarioConfig {
    ScenarioKind kind = ScenarioKind::constant;
    std::size_t series_length = 65;
    std::size_t n_samples = 100'000;
    std::size_t d = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

using Rng = std::mt19937_64;

// Independent stream for sample `index` of a dataset drawn with `seed`.
Rng sample_stream(std::uint64_t seed, std::uint64_t index);

// x ~ t(10) (location 0, scale 1) i.i.d., eps ~ N(0,1), y = <beta_t, x_t> + eps.
// `with_noise = false` drops eps (test hook).
SeriesSample gen_xy(const Eigen::MatrixXd& beta_path, Rng& rng, bool with_noise = true);

std::vector<SeriesSample> gen_constant(const ScenarioConfig& cfg);
std::vector<SeriesSample> gen_stepwise(const ScenarioConfig& cfg);
std::vector<SeriesSample> gen_cyclical(const ScenarioConfig& cfg);
std::vector<SeriesSample> generate(const ScenarioConfig& cfg);

// Time argument of the cyclical scenario for row t of a length-T series.
double cyclical_time(std::size_t t, std::size_t series_length);

inline constexpr double kCycleRateMin = 4.0;
inline constexpr double kCycleRateMax = 32.0;

// Closed-form posterior mean of Bayesian linear regression with prior
// N(prior_mean, prior_precision^{-1}):
//   (L0 + X'X)^{-1} (L0 mu0 + X'y).
// X may have zero rows, in which case the prior mean is returned.
Eigen::VectorXd bayes_posterior_mean(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& prior_mean, const Eigen::MatrixXd& prior_precision);

// Windows whose beta jumps from `beta_before` to `beta_after` at lag
// position `jump_position` (rows [jump_position, h) and the target use
// `beta_after`). Used for the weight analysis of interpretable models.
WindowBatch jump_cohort(std::size_t lookback, std::size_t jump_position, std::size_t count, double beta_before,
                        double beta_after, std::uint64_t seed);

}  // namespace neuralbeta
