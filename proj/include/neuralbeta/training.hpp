#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "neuralbeta/model.hpp"

namespace neuralbeta {

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t max_updates = 20000;
    std::size_t validate_every = 1000;
    std::size_t batch_size = 256;
    std::uint64_t seed = 0;
    std::optional<std::size_t> early_stop_patience;  // validation rounds without improvement
    double grad_clip_norm = 10.0;                    // <= 0 disables clipping
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& json);

// Mean of squared errors; pred and truth are rank-1 of equal length.
ad::Tensor mse_loss(const ad::Tensor& pred_y, const ad::Tensor& true_y);

struct AdamState {
    std::size_t step = 0;
    std::vector<std::vector<double>> m, v;
};

// One bias-corrected Adam update using the gradients currently held by
// `params`. Parameters without a gradient are treated as having zero grad.
// Throws NonFiniteError naming the first parameter with a non-finite grad.
void adam_step(ParameterSet& params, AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm);

struct ValidationRecord {
    std::size_t update = 0;
    double train_loss = 0.0;  // mean batch loss since the previous record
    double validation_rmse = 0.0;
};

struct Checkpoint {
    std::vector<std::vector<double>> parameters;
    std::size_t update = 0;
    double validation_rmse = 0.0;
};

struct TrainResult {
    Checkpoint best;
    std::vector<ValidationRecord> log;
    bool diverged = false;
    std::string diagnostic;  // set when diverged
    std::size_t updates_run = 0;
};

// Root mean squared error of y_hat over the whole validation batch, dropout off.
double validation_rmse(const Model& model, const WindowBatch& validation);

// Called after every validation event with the model in its current state.
using ValidationHook = std::function<void(const Model&, const ValidationRecord&)>;

// Trains `model` in place and restores the best checkpoint into it before
// returning. Divergence stops the run early with diverged = true.
TrainResult train(Model& model, const WindowBatch& train_set, const WindowBatch& validation,
                  const TrainConfig& config, const ValidationHook& hook = {});

void write_run_log(const std::filesystem::path& path, const std::vector<ValidationRecord>& log);

}  // namespace neuralbeta
