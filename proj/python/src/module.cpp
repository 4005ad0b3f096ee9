#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "neuralbeta/baselines.hpp"
#include "neuralbeta/evaluation.hpp"
#include "neuralbeta/experiments.hpp"
#include "neuralbeta/metrics.hpp"
#include "neuralbeta/panel_csv.hpp"

namespace py = pybind11;
namespace nb = neuralbeta;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

py::array_t<double> as_array(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
    py::array_t<double> a(shape);
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

nb::WindowBatch batch_from_arrays(const py::array_t<double, py::array::c_style | py::array::forcecast>& windows_x,
                                  const py::array_t<double, py::array::c_style | py::array::forcecast>& windows_y,
                                  const py::array_t<double, py::array::c_style | py::array::forcecast>& next_x,
                                  const py::array_t<double, py::array::c_style | py::array::forcecast>& next_y) {
    if (windows_x.ndim() != 3 || windows_y.ndim() != 2 || next_x.ndim() != 2 || next_y.ndim() != 1) {
        throw nb::ShapeError("expected windows_x [N,h,d], windows_y [N,h], next_x [N,d], next_y [N]");
    }
    const auto n = windows_x.shape(0), h = windows_x.shape(1), d = windows_x.shape(2);
    if (windows_y.shape(0) != n || windows_y.shape(1) != h || next_x.shape(0) != n || next_x.shape(1) != d ||
        next_y.shape(0) != n) {
        throw nb::ShapeError("window arrays disagree on N, h or d");
    }
    nb::WindowBatch b;
    b.lookback = static_cast<std::size_t>(h);
    b.dim = static_cast<std::size_t>(d);
    b.windows_x.assign(windows_x.data(), windows_x.data() + windows_x.size());
    b.windows_y.assign(windows_y.data(), windows_y.data() + windows_y.size());
    b.next_x.assign(next_x.data(), next_x.data() + next_x.size());
    b.next_y.assign(next_y.data(), next_y.data() + next_y.size());
    b.origin.resize(static_cast<std::size_t>(n));
    return b;
}

py::dict report_dict(const nb::EvaluationReport& rep) {
    py::dict out;
    out["scenario"] = rep.scenario;
    out["n_samples"] = rep.n_samples;
    out["n_windows"] = rep.n_windows;
    py::list rows;
    for (const auto& r : rep.rows) {
        py::dict row;
        row["estimator"] = r.estimator;
        row["rmse_y"] = r.rmse_y;
        row["rmse_beta"] = r.rmse_beta ? py::cast(*r.rmse_beta) : py::none();
        row["improvement"] = r.improvement;
        rows.append(row);
    }
    out["rows"] = rows;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Time-varying beta estimation: closed-form baselines and interpretable neural estimators";

    auto base = py::register_exception<nb::Error>(m, "NeuralBetaError", PyExc_RuntimeError);
    py::register_exception<nb::ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<nb::DataError>(m, "DataError", base.ptr());
    py::register_exception<nb::IoError>(m, "IoError", base.ptr());
    py::register_exception<nb::ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<nb::SingularSystemError>(m, "SingularSystemError", base.ptr());
    py::register_exception<nb::NonFiniteError>(m, "NonFiniteError", base.ptr());
    py::register_exception<nb::UnsupportedError>(m, "UnsupportedError", base.ptr());
    py::register_exception<nb::ContractError>(m, "ContractError", base.ptr());

    py::class_<nb::SeriesSample>(m, "SeriesSample")
        .def_readonly("id", &nb::SeriesSample::id)
        .def_readonly("x", &nb::SeriesSample::x)
        .def_readonly("y", &nb::SeriesSample::y)
        .def_readonly("beta_true", &nb::SeriesSample::beta_true)
        .def_readonly("dates", &nb::SeriesSample::dates)
        .def_readonly("tags", &nb::SeriesSample::tags)
        .def("__len__", &nb::SeriesSample::length)
        .def("__repr__", [](const nb::SeriesSample& s) {
            return "<SeriesSample " + s.id + " T=" + std::to_string(s.length()) + " d=" + std::to_string(s.dim()) + ">";
        });

    py::class_<nb::WindowBatch>(m, "WindowBatch")
        .def(py::init(&batch_from_arrays), py::arg("windows_x"), py::arg("windows_y"), py::arg("next_x"), py::arg("next_y"))
        .def_readonly("lookback", &nb::WindowBatch::lookback)
        .def_readonly("dim", &nb::WindowBatch::dim)
        .def("__len__", &nb::WindowBatch::size)
        .def_property_readonly("windows_x", [](const nb::WindowBatch& b) {
            return as_array(b.windows_x, {static_cast<py::ssize_t>(b.size()), static_cast<py::ssize_t>(b.lookback),
                                          static_cast<py::ssize_t>(b.dim)});
        })
        .def_property_readonly("windows_y", [](const nb::WindowBatch& b) {
            return as_array(b.windows_y, {static_cast<py::ssize_t>(b.size()), static_cast<py::ssize_t>(b.lookback)});
        })
        .def_property_readonly("next_x", [](const nb::WindowBatch& b) {
            return as_array(b.next_x, {static_cast<py::ssize_t>(b.size()), static_cast<py::ssize_t>(b.dim)});
        })
        .def_property_readonly("next_y", [](const nb::WindowBatch& b) {
            return as_array(b.next_y, {static_cast<py::ssize_t>(b.size())});
        })
        .def_property_readonly("beta_next_true", [](const nb::WindowBatch& b) -> py::object {
            if (!b.has_truth()) return py::none();
            return as_array(b.beta_next_true, {static_cast<py::ssize_t>(b.size()), static_cast<py::ssize_t>(b.dim)});
        });

    m.def(
        "generate",
        [](const std::string& kind, std::size_t n_samples, std::size_t series_length, std::size_t d, std::uint64_t seed) {
            nb::ScenarioConfig c;
            c.kind = nb::parse_scenario_kind(kind);
            c.n_samples = n_samples;
            c.series_length = series_length;
            c.d = d;
            c.seed = seed;
            return nb::generate(c);
        },
        py::arg("kind"), py::arg("n_samples"), py::arg("series_length") = 65, py::arg("d") = 1, py::arg("seed") = 0,
        "Synthetic series with known beta: 'constant', 'stepwise' or 'cyclical'.");

    m.def("make_windows", py::overload_cast<const std::vector<nb::SeriesSample>&, std::size_t>(&nb::make_windows),
          py::arg("samples"), py::arg("lookback"));
    m.def("ingest_csv", &nb::ingest_csv, py::arg("path"));
    m.def("write_panel_csv", &nb::write_panel_csv, py::arg("path"), py::arg("samples"));

    m.def(
        "rolling_ols", [](const Eigen::MatrixXd& x, const Eigen::VectorXd& y) { return nb::rolling_ols(x, y).beta; },
        py::arg("x"), py::arg("y"));
    m.def(
        "rolling_wls",
        [](const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double half_life) {
            return nb::rolling_wls(x, y, nb::WeightScheme::exponential(half_life)).beta;
        },
        py::arg("x"), py::arg("y"), py::arg("half_life"));
    m.def(
        "exponential_weights",
        [](double half_life, std::size_t lookback) { return nb::WeightScheme::exponential(half_life).weights(lookback); },
        py::arg("half_life"), py::arg("lookback"));
    m.def(
        "regularized_wls",
        [](const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, const Eigen::VectorXd& mu,
           const Eigen::VectorXd& prec) { return nb::regularized_wls(x, y, w, mu, prec).beta; },
        py::arg("x"), py::arg("y"), py::arg("weights"), py::arg("prior_mean"), py::arg("prior_precision"));
    m.def("bayes_posterior_mean", &nb::bayes_posterior_mean, py::arg("x"), py::arg("y"), py::arg("prior_mean"),
          py::arg("prior_precision"));
    m.def("estimate_ols", &nb::estimate_ols, py::arg("batch"));
    m.def(
        "estimate_wls",
        [](const nb::WindowBatch& b, double half_life) { return nb::estimate_wls(b, nb::WeightScheme::exponential(half_life)); },
        py::arg("batch"), py::arg("half_life"));
    m.def(
        "tune_half_life",
        [](const nb::WindowBatch& validation, const std::vector<double>& grid) {
            const auto t = nb::tune_half_life(validation, grid);
            std::vector<std::pair<double, double>> scores;
            for (const auto& s : t.scores) scores.emplace_back(s.half_life, s.rmse);
            return std::make_pair(t.best.half_life, scores);
        },
        py::arg("validation"), py::arg("grid") = nb::kDefaultHalfLifeGrid,
        "Returns (best half-life, [(half_life, validation RMSE)]).");

    m.def(
        "rmse_y", [](const std::vector<double>& p, const std::vector<double>& t) { return nb::rmse_y(p, t); }, py::arg("pred"),
        py::arg("truth"));
    m.def("rmse_beta", &nb::rmse_beta, py::arg("pred"), py::arg("truth"));
    m.def("improvement_vs_ols", &nb::improvement_vs_ols, py::arg("rmse_ols"), py::arg("rmse_model"));

    py::class_<nb::Model>(m, "Model")
        .def(py::init([](const std::string& config_json) { return nb::Model(nb::model_config_from_json(config_json)); }),
             py::arg("config_json") = "{}")
        .def_static("load", &nb::Model::load, py::arg("path"))
        .def("save", &nb::Model::save, py::arg("path"), py::arg("metadata_json") = "{}")
        .def_property_readonly("config_json", [](const nb::Model& mdl) { return nb::model_config_to_json(mdl.config()); })
        .def_property_readonly("n_parameters", [](const nb::Model& mdl) { return mdl.parameters().total_numel(); })
        .def_property_readonly("prior_mean", &nb::Model::prior_mean)
        .def_property_readonly("prior_precision", &nb::Model::prior_precision)
        .def(
            "predict",
            [](const nb::Model& mdl, const nb::WindowBatch& batch) {
                nb::Prediction p = mdl.predict(batch);
                return py::make_tuple(p.beta, p.weights ? py::cast(*p.weights) : py::none());
            },
            py::arg("batch"), "Returns (beta [N,d], weights [N,h] or None for the NB head).");

    m.def(
        "train",
        [](nb::Model& mdl, const nb::WindowBatch& train, const nb::WindowBatch& validation, const std::string& config_json) {
            nb::TrainResult r;
            {
                py::gil_scoped_release release;
                r = nb::train(mdl, train, validation, nb::train_config_from_json(config_json));
            }
            py::dict out;
            out["best_update"] = r.best.update;
            out["best_validation_rmse"] = r.best.validation_rmse;
            out["updates_run"] = r.updates_run;
            out["diverged"] = r.diverged;
            out["diagnostic"] = r.diagnostic;
            py::list log;
            for (const auto& e : r.log) log.append(py::make_tuple(e.update, e.train_loss, e.validation_rmse));
            out["log"] = log;
            return out;
        },
        py::arg("model"), py::arg("train"), py::arg("validation"), py::arg("config_json") = "{}",
        "Trains in place; the model keeps the best validation checkpoint.");

    m.def(
        "baseline_report",
        [](const std::string& config_json) {
            const nb::ExperimentConfig c = nb::experiment_config_from_json(config_json);
            const nb::PreparedData data = nb::prepare_data(c);
            const nb::BaselineResult b = nb::run_baselines(data, c.half_life_grid);
            py::dict out = report_dict(nb::make_report(c.name, data.test, data.split.test.size(),
                                                       {{"ols", b.ols_beta}, {"wls", b.wls_beta}}));
            out["half_life"] = b.tuning.best.half_life;
            return out;
        },
        py::arg("config_json"), "OLS and tuned-WLS test report for an experiment config given as JSON.");

    m.def(
        "weight_profile",
        [](const nb::Model& mdl, const nb::WindowBatch& cohort) {
            const auto p = nb::weight_profile(mdl, cohort, "cohort");
            return py::make_tuple(p.mean_weight, p.mean_log_weight);
        },
        py::arg("model"), py::arg("cohort"), "Per-lag (mean weight, mean log weight), oldest lag first.");
    m.def("trailing_std", &nb::trailing_std, py::arg("returns"), py::arg("window") = 5);
    m.def("sha256_hex", [](const std::string& s) { return nb::sha256_hex(s); }, py::arg("data"));
}
