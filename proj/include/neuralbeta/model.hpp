#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "neuralbeta/parameters.hpp"
#include "neuralbeta/series.hpp"
#include "neuralbeta/tensor.hpp"

namespace neuralbeta {

enum class SequenceKind { gru, attention };
enum class HeadKind { nb, nbi };

std::string to_string(SequenceKind kind);
std::string to_string(HeadKind kind);
SequenceKind parse_sequence_kind(const std::string& name);
HeadKind parse_head_kind(const std::string& name);

inline const std::vector<std::size_t> kHiddenSizeGrid = {32, 64, 128, 256};
inline const std::vector<double> kDropoutGrid = {0.0, 0.25, 0.5};

struct ModelConfig {
    SequenceKind sequence_kind = SequenceKind::attention;
    HeadKind head_kind = HeadKind::nbi;
    std::size_t hidden_size = 32;
    double dropout = 0.0;
    std::size_t lookback = 64;
    std::size_t d = 1;
    std::size_t n_layers = 0;  // GRU layers or attention blocks; 0 picks 1 and 2 respectively
    std::size_t n_heads = 4;   // attention only
    std::uint64_t seed = 0;
    bool allow_off_grid = false;

    void validate() const;
    // Copy with n_layers == 0 replaced by the default for the sequence kind.
    ModelConfig resolved() const;
};

struct ModelOutput {
    ad::Tensor beta;     // [B, d]
    ad::Tensor weights;  // [B, h]; undefined for the NB head
};

struct Prediction {
    Eigen::MatrixXd beta;                    // N x d
    std::optional<Eigen::MatrixXd> weights;  // N x h, NBI only
};

class Model {
public:
    explicit Model(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

    // input [B, h, d+1] with y in channel 0 -> hidden [B, h, H]
    ad::Tensor encode(const ad::Tensor& input, bool training, std::mt19937_64* rng) const;

    ModelOutput head_nb(const ad::Tensor& hidden) const;
    ModelOutput head_nbi(const ad::Tensor& hidden, const ad::Tensor& window_x, const ad::Tensor& window_y) const;

    // window_x [B, h, d], window_y [B, h]
    ModelOutput forward(const ad::Tensor& window_x, const ad::Tensor& window_y, bool training,
                        std::mt19937_64* rng) const;

    // Inference over batch rows (all rows when `rows` is empty), in chunks.
    Prediction predict(const WindowBatch& batch, const std::vector<std::size_t>& rows = {},
                       std::size_t chunk = 1024) const;

    // Precision implied by the log-precision parameter (NBI only).
    Eigen::VectorXd prior_precision() const;
    Eigen::VectorXd prior_mean() const;

    void save(const std::filesystem::path& path, const std::string& extra_metadata_json = "{}") const;
    static Model load(const std::filesystem::path& path);

private:
    ad::Tensor gru_layer(const ad::Tensor& input, std::size_t layer) const;
    ad::Tensor attention_block(const ad::Tensor& x, std::size_t block, bool training, std::mt19937_64* rng) const;
    const ad::Tensor& p(const std::string& name) const { return params_.get(name); }

    ModelConfig config_;
    ParameterSet params_;
};

// Batch tensors for the given rows: x [B,h,d], y [B,h], next_x [B,d], next_y [B].
struct BatchTensors {
    ad::Tensor window_x, window_y, next_x, next_y;
};
BatchTensors gather(const WindowBatch& batch, const std::vector<std::size_t>& rows);

// y_hat = <beta, next_x> per row: [B,d] x [B,d] -> [B]
ad::Tensor predict_y(const ad::Tensor& beta, const ad::Tensor& next_x);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json);

}  // namespace neuralbeta
