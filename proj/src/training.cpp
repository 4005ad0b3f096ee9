#include "neuralbeta/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include <json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace neuralbeta {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (max_updates < 1) throw ConfigError("max_updates must be positive");
    if (validate_every < 1) throw ConfigError("validate_every must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (early_stop_patience && *early_stop_patience < 1) throw ConfigError("early_stop_patience must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

std::string train_config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["learning_rate"] = c.learning_rate;
    j["max_updates"] = c.max_updates;
    j["validate_every"] = c.validate_every;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["early_stop_patience"] = c.early_stop_patience ? nlohmann::json(*c.early_stop_patience) : nlohmann::json();
    j["grad_clip_norm"] = c.grad_clip_norm;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_eps"] = c.adam_eps;
    return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        TrainConfig c;
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.max_updates = j.value("max_updates", c.max_updates);
        c.validate_every = j.value("validate_every", c.validate_every);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.seed = j.value("seed", c.seed);
        if (j.contains("early_stop_patience") && !j["early_stop_patience"].is_null()) {
            c.early_stop_patience = j["early_stop_patience"].get<std::size_t>();
        }
        c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
        c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
        c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
}

ad::Tensor mse_loss(const ad::Tensor& pred_y, const ad::Tensor& true_y) {
    if (pred_y.rank() != 1 || pred_y.shape() != true_y.shape()) {
        throw ContractError("mse_loss: shapes " + ad::shape_str(pred_y.shape()) + " and " +
                            ad::shape_str(true_y.shape()) + " must be equal rank-1");
    }
    if (pred_y.numel() == 0) throw ContractError("mse_loss: empty batch");
    return ad::mean(ad::square(pred_y - true_y));
}

void adam_step(ParameterSet& params, AdamState& state, double lr, double beta1, double beta2, double eps) {
    auto& items = params.items();
    if (state.m.empty()) {
        state.m.resize(items.size());
        state.v.resize(items.size());
        for (std::size_t i = 0; i < items.size(); ++i) {
            state.m[i].assign(items[i].tensor.numel(), 0.0);
            state.v[i].assign(items[i].tensor.numel(), 0.0);
        }
    }
    if (state.m.size() != items.size()) throw ContractError("adam_step: optimiser state does not match parameters");
    for (auto& item : items) {
        if (!item.tensor.has_grad()) continue;
        for (double g : item.tensor.grad()) {
            if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in parameter '" + item.name + "'");
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto& t = items[i].tensor;
        auto value = t.mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != value.size()) throw ContractError("adam_step: state shape mismatch for '" + items[i].name + "'");
        const auto grad = t.grad();
        const bool has = t.has_grad();
        for (std::size_t k = 0; k < value.size(); ++k) {
            const double g = has ? grad[k] : 0.0;
            m[k] = beta1 * m[k] + (1.0 - beta1) * g;
            v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            value[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
    double sq = 0.0;
    for (const auto& item : params.items()) {
        if (!item.tensor.has_grad()) continue;
        for (double g : item.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& item : params.items()) {
            if (!item.tensor.has_grad()) continue;
            for (double& g : item.tensor.node()->grad) g *= s;
        }
    }
    return norm;
}

double validation_rmse(const Model& model, const WindowBatch& validation) {
    if (validation.empty()) throw ContractError("validation set is empty");
    const Prediction pred = model.predict(validation);
    double s = 0.0;
    for (std::size_t i = 0; i < validation.size(); ++i) {
        double yhat = 0.0;
        for (std::size_t k = 0; k < validation.dim; ++k) {
            yhat += pred.beta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) *
                    validation.next_x[i * validation.dim + k];
        }
        const double e = validation.next_y[i] - yhat;
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(validation.size()));
}

TrainResult train(Model& model, const WindowBatch& train_set, const WindowBatch& validation, const TrainConfig& config,
                  const ValidationHook& hook) {
    config.validate();
#if defined(__GLIBC__)
    // keep large activation buffers on the heap instead of fresh mmaps per op
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    if (train_set.empty()) throw ContractError("training set is empty");
    if (validation.empty()) throw ContractError("validation set is empty");
    const auto& mc = model.config();
    for (const WindowBatch* b : {&train_set, &validation}) {
        if (b->lookback != mc.lookback || b->dim != mc.d) {
            throw DataError("windows (h=" + std::to_string(b->lookback) + ", d=" + std::to_string(b->dim) +
                            ") do not match model (h=" + std::to_string(mc.lookback) + ", d=" + std::to_string(mc.d) + ")");
        }
    }

    std::mt19937_64 data_rng(config.seed ^ 0x243F6A8885A308D3ULL);
    std::mt19937_64 dropout_rng(config.seed ^ 0x13198A2E03707344ULL);
    std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);

    ParameterSet& params = model.parameters();
    AdamState adam;
    TrainResult result;
    result.best.parameters = params.snapshot();
    result.best.validation_rmse = std::numeric_limits<double>::infinity();

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    std::size_t rounds_without_improvement = 0;
    std::vector<std::size_t> rows(config.batch_size);

    for (std::size_t update = 1; update <= config.max_updates; ++update) {
        for (auto& r : rows) r = pick(data_rng);
        const BatchTensors bt = gather(train_set, rows);
        double loss_value = 0.0;
        try {
            ad::Tape tape;
            ad::TapeScope scope(tape);
            params.zero_grad();
            const ModelOutput out = model.forward(bt.window_x, bt.window_y, true, &dropout_rng);
            const ad::Tensor loss = mse_loss(predict_y(out.beta, bt.next_x), bt.next_y);
            loss_value = loss.item();
            if (!std::isfinite(loss_value)) throw NonFiniteError("training loss is non-finite");
            tape.backward(loss);
            clip_grad_norm(params, config.grad_clip_norm);
            adam_step(params, adam, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);
        } catch (const NonFiniteError& e) {
            result.diverged = true;
            result.diagnostic = "update " + std::to_string(update) + ": " + e.what();
        } catch (const SingularSystemError& e) {
            result.diverged = true;
            result.diagnostic = "update " + std::to_string(update) + ": " + e.what();
        }
        if (result.diverged) break;
        result.updates_run = update;
        loss_sum += loss_value;
        ++loss_count;

        if (update % config.validate_every == 0) {
            ValidationRecord rec;
            rec.update = update;
            rec.train_loss = loss_sum / static_cast<double>(loss_count);
            try {
                rec.validation_rmse = validation_rmse(model, validation);
            } catch (const Error& e) {
                result.diverged = true;
                result.diagnostic = "validation at update " + std::to_string(update) + ": " + e.what();
                break;
            }
            if (!std::isfinite(rec.validation_rmse)) {
                result.diverged = true;
                result.diagnostic = "validation RMSE non-finite at update " + std::to_string(update);
                break;
            }
            loss_sum = 0.0;
            loss_count = 0;
            result.log.push_back(rec);
            if (rec.validation_rmse < result.best.validation_rmse) {
                result.best.parameters = params.snapshot();
                result.best.update = update;
                result.best.validation_rmse = rec.validation_rmse;
                rounds_without_improvement = 0;
            } else {
                ++rounds_without_improvement;
            }
            if (hook) hook(model, rec);
            if (config.early_stop_patience && rounds_without_improvement >= *config.early_stop_patience) break;
        }
    }
    params.restore(result.best.parameters);
    params.zero_grad();
    // a run that never validated keeps its initial parameters
    if (!std::isfinite(result.best.validation_rmse)) result.best.validation_rmse = validation_rmse(model, validation);
    return result;
}

void write_run_log(const std::filesystem::path& path, const std::vector<ValidationRecord>& log) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write run log " + path.string());
    out << "update,train_loss,validation_rmse\n" << std::setprecision(17);
    for (const auto& r : log) out << r.update << ',' << r.train_loss << ',' << r.validation_rmse << '\n';
    if (!out) throw IoError("failed writing run log " + path.string());
}

}  // namespace neuralbeta
