#include "neuralbeta/experiments.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "neuralbeta/metrics.hpp"
#include "neuralbeta/panel_csv.hpp"

namespace neuralbeta {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace {

json split_to_json(const SplitSpec& s) {
    if (s.mode == SplitSpec::Mode::by_sample_fraction) {
        return {{"mode", "fractions"}, {"train", s.train_fraction}, {"validation", s.validation_fraction},
                {"test", s.test_fraction}};
    }
    auto range = [](const DateRange& r) { return json::array({r.first, r.last}); };
    return {{"mode", "dates"},
            {"train", range(s.train_dates)},
            {"validation", range(s.validation_dates)},
            {"test", range(s.test_dates)},
            {"lookback", s.lookback}};
}

SplitSpec split_from_json(const json& j) {
    const std::string mode = j.value("mode", "fractions");
    if (mode == "fractions") {
        return SplitSpec::fractions(j.value("train", 0.7), j.value("validation", 0.2), j.value("test", 0.1));
    }
    if (mode == "dates") {
        auto range = [&](const char* key) {
            const auto& a = j.at(key);
            if (!a.is_array() || a.size() != 2) throw ConfigError(std::string("split.") + key + " must be [first, last]");
            return DateRange{a[0].get<std::string>(), a[1].get<std::string>()};
        };
        return SplitSpec::dates(range("train"), range("validation"), range("test"), j.value("lookback", std::size_t{0}));
    }
    throw ConfigError("split.mode must be 'fractions' or 'dates', got '" + mode + "'");
}

json scenario_to_json(const ScenarioConfig& s) {
    return {{"kind", to_string(s.kind)}, {"series_length", s.series_length}, {"n_samples", s.n_samples}, {"d", s.d},
            {"seed", s.seed}};
}

ScenarioConfig scenario_from_json(const json& j) {
    ScenarioConfig s;
    s.kind = parse_scenario_kind(j.value("kind", std::string("constant")));
    s.series_length = j.value("series_length", s.series_length);
    s.n_samples = j.value("n_samples", s.n_samples);
    s.d = j.value("d", s.d);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
}

json to_json_log(const std::vector<ValidationRecord>& log) {
    json a = json::array();
    for (const auto& r : log) a.push_back({r.update, r.train_loss, r.validation_rmse});
    return a;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

void ExperimentConfig::validate() const {
    if (scenario.has_value() == data_path.has_value()) {
        throw ConfigError("exactly one of 'scenario' and 'data' must be given");
    }
    if (scenario) scenario->validate();
    if (data_path && !std::filesystem::exists(*data_path)) throw IoError("data file " + data_path->string() + " does not exist");
    split.validate();
    model.validate();
    train.validate();
    if (half_life_grid.empty()) throw ConfigError("half_life_grid must not be empty");
    for (double hl : half_life_grid)
        if (!(hl > 0.0)) throw ConfigError("half-lives must be positive");
    if (scenario && scenario->d != model.d) throw ConfigError("scenario d and model d differ");
    if (scenario && scenario->series_length <= model.lookback) {
        throw ConfigError("series_length must exceed the lookback");
    }
}

void ExperimentConfig::apply_seed(std::uint64_t master) {
    seed = master;
    if (scenario) scenario->seed = derive_seed(master, 0);
    split_seed = derive_seed(master, 1);
    model.seed = derive_seed(master, 2);
    train.seed = derive_seed(master, 3);
}

void apply_full_scale(ExperimentConfig& config) { config.train.max_updates = kFullScaleUpdates; }

std::string experiment_config_to_json(const ExperimentConfig& c) {
    json j;
    j["name"] = c.name;
    j["seed"] = c.seed;
    if (c.scenario) j["scenario"] = scenario_to_json(*c.scenario);
    if (c.data_path) j["data"] = c.data_path->string();
    j["split"] = split_to_json(c.split);
    j["split_seed"] = c.split_seed;
    j["model"] = json::parse(model_config_to_json(c.model));
    j["train"] = json::parse(train_config_to_json(c.train));
    j["half_life_grid"] = c.half_life_grid;
    j["output_dir"] = c.output_dir.string();
    return j.dump(2) + "\n";
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
        static const std::vector<std::string> known = {"name",  "seed",  "scenario",       "data",      "split",
                                                       "split_seed", "model", "train", "half_life_grid", "output_dir"};
        for (const auto& [key, value] : j.items()) {
            if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key '" + key + "'");
        }
        ExperimentConfig c;
        c.name = j.value("name", c.name);
        c.seed = j.value("seed", c.seed);
        if (j.contains("data")) {
            c.data_path = j["data"].get<std::string>();
            c.scenario.reset();
        }
        if (j.contains("scenario")) c.scenario = scenario_from_json(j["scenario"]);
        if (j.contains("split")) c.split = split_from_json(j["split"]);
        c.split_seed = j.value("split_seed", c.split_seed);
        if (j.contains("model")) c.model = model_config_from_json(j["model"].dump());
        if (j.contains("train")) c.train = train_config_from_json(j["train"].dump());
        if (j.contains("half_life_grid")) c.half_life_grid = j["half_life_grid"].get<std::vector<double>>();
        c.output_dir = j.value("output_dir", c.output_dir.string());
        // a hand-written config may give only the master seed
        const bool derived = j.contains("split_seed") || (j.contains("model") && j["model"].contains("seed")) ||
                             (j.contains("train") && j["train"].contains("seed")) ||
                             (j.contains("scenario") && j["scenario"].contains("seed"));
        if (!derived) c.apply_seed(c.seed);
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    ExperimentConfig c = experiment_config_from_json(read_text(path));
    // relative data paths are taken relative to the config file
    if (c.data_path && c.data_path->is_relative()) c.data_path = path.parent_path() / *c.data_path;
    return c;
}

std::vector<SeriesSample> load_samples(const ExperimentConfig& config) {
    if (config.scenario) return generate(*config.scenario);
    if (config.data_path) return ingest_csv(*config.data_path);
    throw ConfigError("no data source configured");
}

PreparedData prepare_data(const ExperimentConfig& config) {
    config.validate();
    PreparedData out;
    out.samples = load_samples(config);
    for (const auto& s : out.samples) {
        if (s.dim() != config.model.d) {
            throw DataError("sample " + s.id + " has d=" + std::to_string(s.dim()) + " but the model expects d=" +
                            std::to_string(config.model.d));
        }
    }
    out.split = split(out.samples, config.split, config.split_seed);
    const std::size_t h = config.model.lookback;
    out.train = make_windows(out.split.train, h);
    out.validation = make_windows(out.split.validation, h);
    out.test = make_windows(out.split.test, h);
    if (out.train.empty() || out.validation.empty() || out.test.empty()) {
        throw DataError("a split partition has no windows of lookback " + std::to_string(h));
    }
    json fp;
    if (config.scenario) fp["scenario"] = scenario_to_json(*config.scenario);
    if (config.data_path) fp["data_sha256"] = file_sha256(*config.data_path);
    fp["split"] = split_to_json(config.split);
    fp["split_seed"] = config.split_seed;
    fp["lookback"] = h;
    out.fingerprint = sha256_hex(fp.dump());
    return out;
}

BaselineResult run_baselines(const PreparedData& data, const std::vector<double>& half_life_grid) {
    BaselineResult r;
    r.tuning = tune_half_life(data.validation, half_life_grid);
    r.ols_beta = estimate_ols(data.test);
    r.wls_beta = estimate_wls(data.test, r.tuning.best);
    return r;
}

std::string training_cache_key(const ExperimentConfig& config, const PreparedData& data, const std::string& salt) {
    json j;
    j["model"] = json::parse(model_config_to_json(config.model));
    j["train"] = json::parse(train_config_to_json(config.train));
    j["data"] = data.fingerprint;
    j["salt"] = salt;
    return sha256_hex(j.dump()).substr(0, 24);
}

TrainingArtifacts train_experiment(Model& model, const PreparedData& data, const ExperimentConfig& config,
                                   const std::filesystem::path& cache_root, const std::string& salt) {
    TrainingArtifacts art;
    std::filesystem::path dir;
    if (!cache_root.empty()) {
        dir = cache_root / training_cache_key(config, data, salt);
        art.directory = dir;
        if (std::filesystem::exists(dir / "result.json") && std::filesystem::exists(dir / "model.nbck")) {
            const json j = json::parse(read_text(dir / "result.json"));
            model = Model::load(dir / "model.nbck");
            art.from_cache = true;
            art.seconds = j.at("seconds").get<double>();
            auto& r = art.result;
            r.diverged = j.at("diverged").get<bool>();
            r.diagnostic = j.at("diagnostic").get<std::string>();
            r.updates_run = j.at("updates_run").get<std::size_t>();
            r.best.update = j.at("best_update").get<std::size_t>();
            r.best.validation_rmse = j.at("best_validation_rmse").get<double>();
            r.best.parameters = model.parameters().snapshot();
            for (const auto& e : j.at("log")) r.log.push_back({e[0].get<std::size_t>(), e[1].get<double>(), e[2].get<double>()});
            for (const auto& e : j.at("checkpoint_metrics")) {
                art.checkpoint_metrics.push_back({e[0].get<std::size_t>(), e[1].get<double>(), e[2].get<double>()});
            }
            return art;
        }
    }

    ValidationHook hook;
    if (data.test.has_truth()) {
        Eigen::MatrixXd truth(static_cast<Eigen::Index>(data.test.size()), static_cast<Eigen::Index>(data.test.dim));
        for (std::size_t i = 0; i < data.test.size(); ++i) truth.row(static_cast<Eigen::Index>(i)) = data.test.target_beta(i);
        Eigen::MatrixXd next_x(truth.rows(), truth.cols());
        for (std::size_t i = 0; i < data.test.size(); ++i) next_x.row(static_cast<Eigen::Index>(i)) = data.test.target_x(i);
        hook = [&art, &data, truth, next_x](const Model& m, const ValidationRecord& rec) {
            const Prediction pred = m.predict(data.test);
            const Eigen::VectorXd yhat = predict_y(pred.beta, next_x);
            art.checkpoint_metrics.push_back({rec.update, rmse_y({yhat.data(), static_cast<std::size_t>(yhat.size())}, data.test.next_y),
                                              rmse_beta(pred.beta, truth)});
        };
    }
    const auto t0 = std::chrono::steady_clock::now();
    art.result = train(model, data.train, data.validation, config.train, hook);
    art.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!dir.empty() && !art.result.diverged) {
        std::filesystem::create_directories(dir);
        json j;
        j["seconds"] = art.seconds;
        j["diverged"] = art.result.diverged;
        j["diagnostic"] = art.result.diagnostic;
        j["updates_run"] = art.result.updates_run;
        j["best_update"] = art.result.best.update;
        j["best_validation_rmse"] = art.result.best.validation_rmse;
        j["log"] = to_json_log(art.result.log);
        json cm = json::array();
        for (const auto& p : art.checkpoint_metrics) cm.push_back({p.update, p.rmse_y, p.rmse_beta});
        j["checkpoint_metrics"] = cm;
        j["config"] = json::parse(experiment_config_to_json(config));
        model.save(dir / "model.nbck", json{{"best_update", art.result.best.update}}.dump());
        write_text(dir / "result.json.tmp", j.dump(1));
        std::filesystem::rename(dir / "result.json.tmp", dir / "result.json");
    }
    return art;
}

}  // namespace neuralbeta
