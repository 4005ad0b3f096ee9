#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "neuralbeta/evaluation.hpp"
#include "neuralbeta/experiments.hpp"
#include "neuralbeta/metrics.hpp"
#include "neuralbeta/panel_csv.hpp"

namespace fs = std::filesystem;
namespace nb = neuralbeta;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 2;
constexpr int kExitUsage = 64;
constexpr int kExitData = 65;
constexpr int kExitNumeric = 70;

// Flag overrides layered on top of the config file.
struct Overrides {
    std::string config;
    std::string data;
    std::string out;
    std::uint64_t seed = 0;
    bool full_scale = false;

    std::string kind;
    std::size_t n_samples = 0, length = 0, d = 0;

    std::string sequence, head;
    std::size_t hidden = 0, lookback = 0;
    double dropout = 0.0;

    std::size_t updates = 0, batch = 0, validate_every = 0;
    double lr = 0.0;

    std::map<std::string, CLI::Option*> given;
    bool has(const std::string& name) const {
        auto it = given.find(name);
        return it != given.end() && it->second->count() > 0;
    }
};

void add_common(CLI::App* app, Overrides& o) {
    o.given["config"] = app->add_option("-c,--config", o.config, "JSON experiment config");
    o.given["out"] = app->add_option("-o,--out", o.out, "output directory (relative to $NEURALBETA_OUTPUT_ROOT when set)");
    o.given["seed"] = app->add_option("--seed", o.seed, "master seed; derives data, split, model and training seeds");
}

void add_data(CLI::App* app, Overrides& o) {
    o.given["data"] = app->add_option("--data", o.data, "return panel CSV instead of a synthetic scenario");
    o.given["kind"] = app->add_option("--kind", o.kind, "synthetic scenario: constant, stepwise or cyclical");
    o.given["n_samples"] = app->add_option("--n-samples", o.n_samples, "number of synthetic series");
    o.given["length"] = app->add_option("--length", o.length, "length of each synthetic series");
    o.given["d"] = app->add_option("--d", o.d, "number of factors");
}

void add_model(CLI::App* app, Overrides& o) {
    o.given["sequence"] = app->add_option("--sequence", o.sequence, "gru or attention");
    o.given["head"] = app->add_option("--head", o.head, "nb or nbi");
    o.given["hidden"] = app->add_option("--hidden", o.hidden, "hidden size");
    o.given["lookback"] = app->add_option("--lookback", o.lookback, "lookback window h");
    o.given["dropout"] = app->add_option("--dropout", o.dropout, "dropout rate");
}

void add_train(CLI::App* app, Overrides& o) {
    o.given["updates"] = app->add_option("--updates", o.updates, "number of optimiser updates");
    o.given["batch"] = app->add_option("--batch-size", o.batch, "minibatch size");
    o.given["validate_every"] = app->add_option("--validate-every", o.validate_every, "updates between validations");
    o.given["lr"] = app->add_option("--lr", o.lr, "Adam learning rate");
    o.given["full_scale"] = app->add_flag("--full-scale", o.full_scale, "use the 100,000-update budget");
}

fs::path output_root(const fs::path& dir) {
    if (dir.is_absolute()) return dir;
    if (const char* root = std::getenv("NEURALBETA_OUTPUT_ROOT"); root && *root) return fs::path(root) / dir;
    return dir;
}

nb::ExperimentConfig resolve(const Overrides& o, nb::ExperimentConfig c, bool from_file) {
    if (o.has("data")) {
        c.data_path = o.data;
        c.scenario.reset();
    }
    const bool scenario_flags = o.has("kind") || o.has("n_samples") || o.has("length");
    if (scenario_flags && c.data_path) throw nb::ConfigError("scenario flags cannot be combined with a data file");
    if (c.scenario) {
        if (o.has("kind")) c.scenario->kind = nb::parse_scenario_kind(o.kind);
        if (o.has("n_samples")) c.scenario->n_samples = o.n_samples;
        if (o.has("length")) c.scenario->series_length = o.length;
        if (o.has("d")) c.scenario->d = o.d;
    }
    if (o.has("d")) c.model.d = o.d;
    if (o.has("sequence")) c.model.sequence_kind = nb::parse_sequence_kind(o.sequence);
    if (o.has("head")) c.model.head_kind = nb::parse_head_kind(o.head);
    if (o.has("hidden")) c.model.hidden_size = o.hidden;
    if (o.has("lookback")) c.model.lookback = o.lookback;
    if (o.has("dropout")) c.model.dropout = o.dropout;
    if (o.has("updates")) c.train.max_updates = o.updates;
    if (o.has("batch")) c.train.batch_size = o.batch;
    if (o.has("validate_every")) c.train.validate_every = o.validate_every;
    if (o.has("lr")) c.train.learning_rate = o.lr;
    if (o.full_scale) nb::apply_full_scale(c);
    if (o.has("seed")) {
        c.apply_seed(o.seed);
    } else if (!from_file) {
        c.apply_seed(c.seed);
    }
    if (o.has("out")) c.output_dir = o.out;
    if (c.data_path) c.data_path = fs::absolute(*c.data_path).lexically_normal();
    return c;
}

nb::ExperimentConfig resolve(const Overrides& o) {
    if (o.has("config")) return resolve(o, nb::load_experiment_config(o.config), true);
    return resolve(o, nb::ExperimentConfig{}, false);
}

fs::path prepare_output(const nb::ExperimentConfig& c) {
    const fs::path dir = output_root(c.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw nb::IoError("cannot create output directory " + dir.string());
    const fs::path probe = dir / ".write-probe";
    {
        std::ofstream test(probe);
        if (!test) throw nb::IoError("output directory " + dir.string() + " is not writable");
    }
    fs::remove(probe, ec);
    return dir;
}

void write_manifest(const fs::path& dir, const std::string& command, const nb::ExperimentConfig& c,
                    const std::vector<std::string>& files, const json& extra = json::object()) {
    const std::string resolved = nb::experiment_config_to_json(c);
    json m;
    m["command"] = command;
    m["seed"] = c.seed;
    m["config"] = json::parse(resolved);
    m["config_sha256"] = nb::sha256_hex(resolved);
    json outputs = json::object();
    for (const auto& f : files) outputs[f] = nb::file_sha256(dir / f);
    m["outputs"] = outputs;
    if (!extra.empty()) m["extra"] = extra;
    nb::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

std::string estimator_name(const nb::ModelConfig& m) { return nb::to_string(m.head_kind) + "_" + nb::to_string(m.sequence_kind); }

template <class Row>
void write_csv(const fs::path& path, const std::string& header, const std::vector<Row>& rows,
               void (*emit)(std::ostream&, const Row&)) {
    std::ofstream out(path);
    if (!out) throw nb::IoError("cannot write " + path.string());
    out << header << '\n' << std::setprecision(17);
    for (const auto& r : rows) {
        emit(out, r);
        out << '\n';
    }
    if (!out) throw nb::IoError("failed writing " + path.string());
}

// ---- generate ---------------------------------------------------------------

int cmd_generate(const Overrides& o) {
    const nb::ExperimentConfig c = resolve(o);
    if (!c.scenario) throw nb::ConfigError("generate needs a synthetic scenario, not a data file");
    c.scenario->validate();
    const auto samples = nb::generate(*c.scenario);
    const fs::path dir = prepare_output(c);
    nb::write_panel_csv(dir / "dataset.csv", samples);
    write_manifest(dir, "generate", c, {"dataset.csv"});
    std::cout << "wrote " << samples.size() << " series of length " << c.scenario->series_length << " to "
              << (dir / "dataset.csv").string() << "\nsha256 " << nb::file_sha256(dir / "dataset.csv") << '\n';
    return kExitOk;
}

// ---- baseline ---------------------------------------------------------------

int cmd_baseline(const Overrides& o) {
    const nb::ExperimentConfig c = resolve(o);
    const nb::PreparedData data = nb::prepare_data(c);
    const nb::BaselineResult b = nb::run_baselines(data, c.half_life_grid);
    const nb::EvaluationReport rep =
        nb::make_report(c.name, data.test, data.split.test.size(), {{"ols", b.ols_beta}, {"wls", b.wls_beta}});
    const fs::path dir = prepare_output(c);
    nb::write_report_csv(dir / "report.csv", {rep});
    write_csv<nb::HalfLifeScore>(dir / "tuning.csv", "half_life,validation_rmse_y", b.tuning.scores,
                                 [](std::ostream& s, const nb::HalfLifeScore& r) { s << r.half_life << ',' << r.rmse; });
    write_manifest(dir, "baseline", c, {"report.csv", "tuning.csv"}, {{"half_life", b.tuning.best.half_life}});
    std::cout << nb::format_report_csv({rep}) << "half-life " << b.tuning.best.half_life << " (validation split)\n";
    return kExitOk;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const Overrides& o) {
    const nb::ExperimentConfig c = resolve(o);
    const nb::PreparedData data = nb::prepare_data(c);
    const fs::path dir = prepare_output(c);
    nb::Model model(c.model);
    std::cout << "training " << estimator_name(c.model) << " on " << data.train.size() << " windows for "
              << c.train.max_updates << " updates" << std::endl;
    const nb::TrainingArtifacts art = nb::train_experiment(model, data, c);
    const auto& r = art.result;

    json meta = {{"best_update", r.best.update}, {"best_validation_rmse", r.best.validation_rmse},
                 {"config_sha256", nb::sha256_hex(nb::experiment_config_to_json(c))}};
    model.save(dir / "model.nbck", meta.dump());
    nb::write_run_log(dir / "run_log.csv", r.log);
    nb::write_text(dir / "config.json", nb::experiment_config_to_json(c));
    std::vector<std::string> files = {"model.nbck", "run_log.csv", "config.json"};
    if (!art.checkpoint_metrics.empty()) {
        write_csv<nb::CorrelationPoint>(dir / "checkpoint_metrics.csv", "update,test_rmse_y,test_rmse_beta", art.checkpoint_metrics,
                                        [](std::ostream& s, const nb::CorrelationPoint& p) {
                                            s << p.update << ',' << p.rmse_y << ',' << p.rmse_beta;
                                        });
        files.push_back("checkpoint_metrics.csv");
    }
    json extra = {{"best_update", r.best.update},
                  {"best_validation_rmse", r.best.validation_rmse},
                  {"updates_run", r.updates_run},
                  {"diverged", r.diverged},
                  {"seconds", art.seconds}};
    if (r.diverged) extra["diagnostic"] = r.diagnostic;
    write_manifest(dir, "train", c, files, extra);

    std::cout << "best validation RMSE " << std::setprecision(17) << r.best.validation_rmse << " at update " << r.best.update
              << '\n';
    if (r.diverged) {
        std::cerr << "error: training diverged (" << r.diagnostic << "); kept the last good checkpoint\n";
        return kExitNumeric;
    }
    return kExitOk;
}

// ---- evaluate ---------------------------------------------------------------

int cmd_evaluate(const Overrides& o, const std::string& checkpoint, const std::string& which, bool force) {
    nb::Model model = nb::Model::load(checkpoint);
    nb::ExperimentConfig c = resolve(o);
    if (c.scenario && c.scenario->d != model.config().d) {
        throw nb::DataError("checkpoint expects d=" + std::to_string(model.config().d) + " but the dataset has d=" +
                            std::to_string(c.scenario->d));
    }
    c.model = model.config();
    if (which == "train" && !force) throw nb::ConfigError("refusing to evaluate on the training split without --force");
    const nb::PreparedData data = nb::prepare_data(c);
    const nb::WindowBatch& batch = which == "test" ? data.test : which == "validation" ? data.validation : data.train;
    const std::size_t n_samples = which == "test" ? data.split.test.size()
                                  : which == "validation" ? data.split.validation.size()
                                                          : data.split.train.size();

    const nb::HalfLifeTuning tuning = nb::tune_half_life(data.validation, c.half_life_grid);
    const nb::Prediction pred = model.predict(batch);
    const nb::EvaluationReport rep =
        nb::make_report(c.name, batch, n_samples,
                        {{"ols", nb::estimate_ols(batch)},
                         {"wls", nb::estimate_wls(batch, tuning.best)},
                         {estimator_name(model.config()), pred.beta}});
    const fs::path dir = prepare_output(c);
    nb::write_report_csv(dir / "report.csv", {rep});
    write_manifest(dir, "evaluate", c, {"report.csv"},
                   {{"checkpoint", fs::absolute(checkpoint).string()},
                    {"checkpoint_sha256", nb::file_sha256(checkpoint)},
                    {"split", which},
                    {"half_life", tuning.best.half_life}});
    std::cout << nb::format_report_csv({rep});
    return kExitOk;
}

// ---- weights ----------------------------------------------------------------

std::string svg_profile(const nb::WeightProfile& p, bool log_scale) {
    const std::vector<double>& v = log_scale ? p.mean_log_weight : p.mean_weight;
    const double lo = *std::min_element(v.begin(), v.end());
    const double hi = *std::max_element(v.begin(), v.end());
    const double span = hi > lo ? hi - lo : 1.0;
    const double w = 640, h = 320, m = 40;
    std::ostringstream s;
    s << std::setprecision(6);
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << m << "\" y=\"20\" font-size=\"14\">" << p.cohort << " (" << p.count << " windows)"
      << (log_scale ? ", mean log weight" : ", mean weight") << "</text>\n";
    s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t j = 0; j < v.size(); ++j) {
        const double x = m + (w - 2 * m) * (v.size() > 1 ? static_cast<double>(j) / static_cast<double>(v.size() - 1) : 0.0);
        const double y = h - m - (h - 2 * m) * (v[j] - lo) / span;
        s << x << ',' << y << ' ';
    }
    s << "\"/>\n";
    s << "<text x=\"" << m << "\" y=\"" << h - 10 << "\" font-size=\"12\">oldest lag</text>\n";
    s << "<text x=\"" << w - m - 60 << "\" y=\"" << h - 10 << "\" font-size=\"12\">newest lag</text>\n";
    s << "</svg>\n";
    return s.str();
}

int cmd_weights(const Overrides& o, const std::string& checkpoint, const std::string& cohort, std::size_t jump_position,
                std::size_t count, bool svg, bool log_scale) {
    const nb::Model model = nb::Model::load(checkpoint);
    if (model.config().head_kind != nb::HeadKind::nbi) {
        throw nb::UnsupportedError("checkpoint has an NB head, which emits no weights; weight profiles need an NBI model");
    }
    nb::ExperimentConfig c = resolve(o);
    const fs::path dir = prepare_output(c);
    std::vector<std::string> files;
    nb::WeightProfile profile;
    json extra = {{"checkpoint", fs::absolute(checkpoint).string()}, {"checkpoint_sha256", nb::file_sha256(checkpoint)},
                  {"cohort", cohort}};

    if (cohort == "jump") {
        profile = nb::jump_profile(model, jump_position, count, c.seed);
        const double ratio = nb::jump_weight_ratio(profile, jump_position);
        extra["jump_position"] = jump_position;
        extra["post_pre_ratio"] = ratio;
        std::cout << "jump at position " << jump_position << ": post/pre mean weight ratio " << ratio << '\n';
    } else {
        c.model = model.config();
        const nb::PreparedData data = nb::prepare_data(c);
        const bool test = cohort == "test";
        const nb::WindowBatch& batch = test ? data.test : data.validation;
        const auto& samples = test ? data.split.test : data.split.validation;
        profile = nb::weight_profile(model, batch, cohort);
        if (!samples.empty() && !samples.front().dates.empty()) {
            const auto by_date = nb::weights_by_date(model, batch, samples);
            write_csv<nb::DatedWeight>(dir / "weights_by_date.csv", "date,mean_weight,count", by_date,
                                       [](std::ostream& s, const nb::DatedWeight& r) {
                                           s << r.date << ',' << r.mean_weight << ',' << r.count;
                                       });
            files.push_back("weights_by_date.csv");
            // volatility from the full history
            const auto longest = std::max_element(data.samples.begin(), data.samples.end(),
                                                  [](const auto& a, const auto& b) { return a.length() < b.length(); });
            const auto overlay = nb::volatility_overlay(by_date, longest->dates, longest->x.col(0));
            write_csv<nb::OverlayPoint>(dir / "volatility_overlay.csv", "date,mean_weight,volatility_x1", overlay,
                                        [](std::ostream& s, const nb::OverlayPoint& r) {
                                            s << r.date << ',' << r.mean_weight << ',' << r.volatility;
                                        });
            files.push_back("volatility_overlay.csv");
        }
    }
    nb::write_profile_csv(dir / "profile.csv", profile);
    files.insert(files.begin(), "profile.csv");
    if (svg) {
        for (double wgt : profile.mean_weight)
            if (!(wgt > 0.0)) throw nb::NonFiniteError("non-positive mean weight cannot be drawn");
        nb::write_text(dir / "profile.svg", svg_profile(profile, log_scale));
        files.push_back("profile.svg");
    }
    write_manifest(dir, "weights", c, files, extra);
    std::cout << "wrote " << profile.mean_weight.size() << "-lag profile over " << profile.count << " windows to "
              << (dir / "profile.csv").string() << '\n';
    return kExitOk;
}

// ---- sweep ------------------------------------------------------------------

struct SweepPoint {
    std::size_t index = 0;
    nb::ModelConfig model;
    std::string status = "pending";
    std::size_t best_update = 0;
    double best_rmse = NAN;
    double seconds = 0.0;
};

template <class T>
std::vector<T> grid_values(const json& grid, const char* key, T fallback) {
    if (!grid.contains(key)) return {fallback};
    auto v = grid.at(key).get<std::vector<T>>();
    if (v.empty()) throw nb::ConfigError(std::string("grid.") + key + " is empty");
    return v;
}

int cmd_sweep(const Overrides& o, const std::string& grid_path, std::size_t jobs) {
    json spec;
    try {
        spec = json::parse(nb::read_text(grid_path));
    } catch (const json::exception& e) {
        throw nb::ConfigError("grid file: " + std::string(e.what()));
    }
    for (const auto& [key, value] : spec.items()) {
        if (key != "base" && key != "grid") throw nb::ConfigError("unknown grid file key '" + key + "'");
    }
    // the base config may be inline or a path relative to the grid file
    const fs::path grid_dir = fs::path(grid_path).parent_path();
    nb::ExperimentConfig loaded;
    if (spec.contains("base") && spec["base"].is_string()) {
        loaded = nb::load_experiment_config(grid_dir / spec["base"].get<std::string>());
    } else if (spec.contains("base")) {
        loaded = nb::experiment_config_from_json(spec["base"].dump());
        if (loaded.data_path && loaded.data_path->is_relative()) loaded.data_path = grid_dir / *loaded.data_path;
    }
    const nb::ExperimentConfig base = resolve(o, loaded, spec.contains("base"));
    const json grid = spec.value("grid", json::object());
    for (const auto& [key, value] : grid.items()) {
        static const std::vector<std::string> known = {"lookback", "hidden_size", "dropout", "head", "sequence"};
        if (std::find(known.begin(), known.end(), key) == known.end()) throw nb::ConfigError("unknown grid key '" + key + "'");
    }
    const auto lookbacks = grid_values<std::size_t>(grid, "lookback", base.model.lookback);
    const auto hiddens = grid_values<std::size_t>(grid, "hidden_size", base.model.hidden_size);
    const auto dropouts = grid_values<double>(grid, "dropout", base.model.dropout);
    const auto heads = grid_values<std::string>(grid, "head", nb::to_string(base.model.head_kind));
    const auto sequences = grid_values<std::string>(grid, "sequence", nb::to_string(base.model.sequence_kind));

    std::vector<SweepPoint> points;
    for (const auto& seq : sequences)
        for (const auto& head : heads)
            for (std::size_t lb : lookbacks)
                for (std::size_t hs : hiddens)
                    for (double dr : dropouts) {
                        SweepPoint p;
                        p.index = points.size();
                        p.model = base.model;
                        p.model.sequence_kind = nb::parse_sequence_kind(seq);
                        p.model.head_kind = nb::parse_head_kind(head);
                        p.model.lookback = lb;
                        p.model.hidden_size = hs;
                        p.model.dropout = dr;
                        p.model.seed = nb::derive_seed(base.seed, 100 + p.index);
                        p.model.validate();
                        points.push_back(p);
                    }
    const fs::path dir = prepare_output(base);
    std::cout << "sweep of " << points.size() << " configurations, " << jobs << " job(s)" << std::endl;

    std::map<std::size_t, nb::PreparedData> data_by_lookback;
    for (std::size_t lb : lookbacks) {
        nb::ExperimentConfig c = base;
        c.model.lookback = lb;
        data_by_lookback.emplace(lb, nb::prepare_data(c));
    }

    std::atomic<std::size_t> next{0};
    std::mutex io;
    auto worker = [&] {
        for (std::size_t i = next++; i < points.size(); i = next++) {
            SweepPoint& p = points[i];
            nb::ExperimentConfig c = base;
            c.model = p.model;
            c.train.seed = nb::derive_seed(base.seed, 10'000 + p.index);
            try {
                nb::Model model(c.model);
                const auto art = nb::train_experiment(model, data_by_lookback.at(p.model.lookback), c);
                p.seconds = art.seconds;
                p.best_update = art.result.best.update;
                p.best_rmse = art.result.best.validation_rmse;
                p.status = art.result.diverged ? "diverged" : "ok";
            } catch (const std::exception& e) {
                p.status = std::string("error: ") + e.what();
                std::replace(p.status.begin(), p.status.end(), ',', ';');
            }
            std::lock_guard lock(io);
            std::cout << "  [" << p.index + 1 << "/" << points.size() << "] " << estimator_name(p.model) << " h="
                      << p.model.lookback << " H=" << p.model.hidden_size << " dropout=" << p.model.dropout << ": "
                      << p.status << ", best validation RMSE " << p.best_rmse << std::endl;
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < std::max<std::size_t>(1, jobs); ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    write_csv<SweepPoint>(dir / "runs.csv", "index,model,lookback,hidden_size,dropout,status,best_update,best_validation_rmse,seconds",
                          points, [](std::ostream& s, const SweepPoint& p) {
                              s << p.index << ',' << estimator_name(p.model) << ',' << p.model.lookback << ','
                                << p.model.hidden_size << ',' << p.model.dropout << ',' << p.status << ',' << p.best_update
                                << ',' << p.best_rmse << ',' << std::setprecision(6) << p.seconds << std::setprecision(17);
                          });
    std::vector<std::string> files = {"runs.csv"};

    // best validation RMSE per (model, value), minimised over the other axes
    struct Marginal {
        std::string model;
        double value;
        double best;
        std::size_t ok;
    };
    auto marginal = [&](const char* name, auto value_of) {
        std::map<std::pair<std::string, double>, Marginal> m;
        for (const auto& p : points) {
            const std::pair<std::string, double> key{estimator_name(p.model), value_of(p.model)};
            auto [it, inserted] = m.try_emplace(key, Marginal{key.first, key.second, NAN, 0});
            if (p.status != "ok") continue;
            if (it->second.ok == 0 || p.best_rmse < it->second.best) it->second.best = p.best_rmse;
            ++it->second.ok;
        }
        std::vector<Marginal> rows;
        for (auto& [k, v] : m) rows.push_back(v);
        const std::string file = std::string("marginal_") + name + ".csv";
        write_csv<Marginal>(dir / file, std::string("model,") + name + ",best_validation_rmse,runs_ok", rows,
                            [](std::ostream& s, const Marginal& r) { s << r.model << ',' << r.value << ',' << r.best << ',' << r.ok; });
        files.push_back(file);
    };
    marginal("lookback", [](const nb::ModelConfig& m) { return static_cast<double>(m.lookback); });
    marginal("hidden_size", [](const nb::ModelConfig& m) { return static_cast<double>(m.hidden_size); });
    marginal("dropout", [](const nb::ModelConfig& m) { return m.dropout; });

    // spread of best validation RMSE across configurations, per model
    json spreads = json::object();
    std::map<std::string, std::pair<double, double>> range;
    for (const auto& p : points) {
        if (p.status != "ok") continue;
        auto [it, inserted] = range.try_emplace(estimator_name(p.model), p.best_rmse, p.best_rmse);
        it->second.first = std::min(it->second.first, p.best_rmse);
        it->second.second = std::max(it->second.second, p.best_rmse);
    }
    for (const auto& [model, r] : range) spreads[model] = r.second - r.first;
    json extra = {{"runs", points.size()},
                  {"failed", std::count_if(points.begin(), points.end(), [](const auto& p) { return p.status != "ok"; })},
                  {"spread", spreads}};
    for (const auto& seq : sequences) {
        const std::string a = "nbi_" + seq, b = "nb_" + seq;
        if (spreads.contains(a) && spreads.contains(b) && spreads[a].get<double>() > spreads[b].get<double>()) {
            const std::string w = "warning: " + a + " spread " + std::to_string(spreads[a].get<double>()) + " exceeds " + b +
                                  " spread " + std::to_string(spreads[b].get<double>());
            std::cout << w << '\n';
            extra["warnings"].push_back(w);
        }
    }
    write_manifest(dir, "sweep", base, files, extra);
    std::cout << "wrote " << points.size() << " runs and 3 marginal tables to " << dir.string() << '\n';
    return kExitOk;
}

// ---- ingest-check -----------------------------------------------------------

int cmd_ingest_check(const std::string& path) {
    const auto samples = nb::ingest_csv(path);
    std::size_t rows = 0, tmin = SIZE_MAX, tmax = 0;
    std::string first, last;
    for (const auto& s : samples) {
        rows += s.length();
        tmin = std::min(tmin, s.length());
        tmax = std::max(tmax, s.length());
        if (!s.dates.empty()) {
            if (first.empty() || s.dates.front() < first) first = s.dates.front();
            if (last.empty() || s.dates.back() > last) last = s.dates.back();
        }
    }
    std::cout << "ok: " << samples.size() << " assets, " << rows << " rows, d=" << (samples.empty() ? 0 : samples[0].dim())
              << ", T per asset " << tmin << ".." << tmax << ", dates " << first << " .. " << last
              << ", beta_true " << (!samples.empty() && samples[0].beta_true ? "yes" : "no") << '\n';
    return kExitOk;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const nb::IoError*>(&e)) return kExitIo;
    if (dynamic_cast<const nb::ConfigError*>(&e)) return kExitUsage;
    if (dynamic_cast<const nb::DataError*>(&e) || dynamic_cast<const nb::UnsupportedError*>(&e) ||
        dynamic_cast<const nb::ShapeError*>(&e) || dynamic_cast<const nb::InsufficientHistoryError*>(&e) ||
        dynamic_cast<const nb::BoundsError*>(&e)) {
        return kExitData;
    }
    if (dynamic_cast<const nb::NonFiniteError*>(&e) || dynamic_cast<const nb::SingularSystemError*>(&e)) return kExitNumeric;
    if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kExitIo;
    return kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Time-varying beta estimation: synthetic data, baselines, neural estimators and reports"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "neuralbeta 0.1.0");

    Overrides og, ob, ot, oe, ow, os;
    auto* gen = app.add_subcommand("generate", "write a synthetic dataset and its manifest");
    add_common(gen, og);
    add_data(gen, og);

    auto* base = app.add_subcommand("baseline", "score rolling OLS and half-life-tuned WLS on the test split");
    add_common(base, ob);
    add_data(base, ob);
    add_model(base, ob);

    auto* train = app.add_subcommand("train", "train a neural estimator, keeping the best validation checkpoint");
    add_common(train, ot);
    add_data(train, ot);
    add_model(train, ot);
    add_train(train, ot);

    std::string checkpoint, split = "test";
    bool force = false;
    auto* eval = app.add_subcommand("evaluate", "score a checkpoint against the baselines");
    add_common(eval, oe);
    add_data(eval, oe);
    eval->add_option("--checkpoint", checkpoint, "model checkpoint (.nbck)")->required();
    eval->add_option("--split", split, "split to score")->check(CLI::IsMember({"test", "validation", "train"}));
    eval->add_flag("--force", force, "allow scoring the training split");

    std::string w_checkpoint, cohort = "test";
    std::size_t jump_position = 48, count = 1000;
    bool svg = false, log_scale = false;
    auto* weights = app.add_subcommand("weights", "lag and date weight profiles of an NBI checkpoint");
    add_common(weights, ow);
    add_data(weights, ow);
    weights->add_option("--checkpoint", w_checkpoint, "model checkpoint (.nbck)")->required();
    weights->add_option("--cohort", cohort, "test, validation or jump")->check(CLI::IsMember({"test", "validation", "jump"}));
    weights->add_option("--jump-position", jump_position, "lag position of the 2 -> 0 beta jump (jump cohort)");
    weights->add_option("--count", count, "windows in the jump cohort");
    weights->add_flag("--svg", svg, "also draw profile.svg");
    weights->add_flag("--log-scale", log_scale, "draw mean log weights");

    std::string grid_path;
    std::size_t jobs = 1;
    auto* sweep = app.add_subcommand("sweep", "train every grid combination and tabulate marginal best RMSE");
    sweep->add_option("grid", grid_path, "grid JSON: {\"base\": config, \"grid\": {...}}")->required();
    sweep->add_option("-o,--out", os.out, "output directory");
    os.given["out"] = sweep->get_option("--out");
    os.given["seed"] = sweep->add_option("--seed", os.seed, "master seed");
    add_train(sweep, os);
    sweep->add_option("-j,--jobs", jobs, "parallel training jobs");

    std::string ingest_path;
    auto* ingest = app.add_subcommand("ingest-check", "validate a return panel CSV");
    ingest->add_option("csv", ingest_path, "panel CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen) return cmd_generate(og);
        if (*base) return cmd_baseline(ob);
        if (*train) return cmd_train(ot);
        if (*eval) return cmd_evaluate(oe, checkpoint, split, force);
        if (*weights) return cmd_weights(ow, w_checkpoint, cohort, jump_position, count, svg, log_scale);
        if (*sweep) return cmd_sweep(os, grid_path, jobs);
        if (*ingest) {
            if (!fs::exists(ingest_path)) throw nb::IoError("cannot open " + ingest_path);
            return cmd_ingest_check(ingest_path);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return kExitUsage;
}
