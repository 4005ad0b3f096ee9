#pragma once

// Experiment configuration, dataset preparation and training runs shared by
// the command-line tool and the acceptance harness.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "neuralbeta/baselines.hpp"
#include "neuralbeta/evaluation.hpp"
#include "neuralbeta/model.hpp"
#include "neuralbeta/series.hpp"
#include "neuralbeta/synthetic.hpp"
#include "neuralbeta/training.hpp"

namespace neuralbeta {

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

// Splitmix64 stream `stream` of a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

struct ExperimentConfig {
    std::string name = "experiment";
    // Exactly one data source: a synthetic scenario or a panel CSV.
    std::optional<ScenarioConfig> scenario = ScenarioConfig{};
    std::optional<std::filesystem::path> data_path;
    SplitSpec split = SplitSpec::fractions(0.7, 0.2, 0.1);
    std::uint64_t split_seed = 0;
    ModelConfig model;
    TrainConfig train;
    std::vector<double> half_life_grid = kDefaultHalfLifeGrid;
    std::filesystem::path output_dir = "runs";
    std::uint64_t seed = 0;

    void validate() const;
    // Sets `seed` and derives the scenario, split, model and training seeds.
    void apply_seed(std::uint64_t master);
};

inline constexpr std::size_t kFullScaleUpdates = 100'000;

// 100,000-update budget.
void apply_full_scale(ExperimentConfig& config);

std::string experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const std::string& json);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct PreparedData {
    std::vector<SeriesSample> samples;
    DatasetSplit split;
    WindowBatch train, validation, test;
    std::string fingerprint;  // content hash of the data source and split
};

std::vector<SeriesSample> load_samples(const ExperimentConfig& config);
PreparedData prepare_data(const ExperimentConfig& config);

struct BaselineResult {
    Eigen::MatrixXd ols_beta;  // test set
    Eigen::MatrixXd wls_beta;
    HalfLifeTuning tuning;     // on the validation split
};

BaselineResult run_baselines(const PreparedData& data, const std::vector<double>& half_life_grid);

struct TrainingArtifacts {
    TrainResult result;
    std::vector<CorrelationPoint> checkpoint_metrics;  // test-set metrics at every validation, when truth exists
    double seconds = 0.0;
    bool from_cache = false;
    std::filesystem::path directory;
};

// Trains `model` (left holding the best parameters). When `cache_root` is
// non-empty, a finished run with the same model, training and data
// configuration and the same `salt` is reloaded instead of retrained.
TrainingArtifacts train_experiment(Model& model, const PreparedData& data, const ExperimentConfig& config,
                                   const std::filesystem::path& cache_root = {}, const std::string& salt = {});

std::string training_cache_key(const ExperimentConfig& config, const PreparedData& data, const std::string& salt);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace neuralbeta
