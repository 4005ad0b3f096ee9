#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "neuralbeta/experiments.hpp"

namespace acceptance {

namespace nb = neuralbeta;

#ifndef NEURALBETA_SOURCE_DIR
#error "NEURALBETA_SOURCE_DIR must point at the source tree"
#endif

inline std::filesystem::path source_dir() { return NEURALBETA_SOURCE_DIR; }

// Hash of every source file that influences trained numbers. Cached runs
// are keyed on it, so any change to the numerics retrains.
inline std::string numerics_hash() {
    static const char* files[] = {
        "src/tensor.cpp",      "src/parameters.cpp",         "src/series.cpp",
        "src/synthetic.cpp",   "src/baselines.cpp",          "src/model.cpp",
        "src/training.cpp",    "include/neuralbeta/tensor.hpp", "include/neuralbeta/model.hpp",
        "include/neuralbeta/training.hpp",
    };
    std::string all;
    for (const char* f : files) all += nb::file_sha256(source_dir() / f);
    return nb::sha256_hex(all);
}

inline std::filesystem::path cache_root() {
    if (const char* env = std::getenv("NEURALBETA_ACCEPTANCE_CACHE")) return env;
    return source_dir() / ".acceptance-cache";
}

inline std::uint64_t scenario_seed(nb::ScenarioKind kind) {
    switch (kind) {
        case nb::ScenarioKind::constant: return 101;
        case nb::ScenarioKind::stepwise: return 202;
        case nb::ScenarioKind::cyclical: return 303;
    }
    return 0;
}

// Full-scale synthetic scenario with the desk training budget.
inline nb::ExperimentConfig scenario_experiment(nb::ScenarioKind kind) {
    nb::ExperimentConfig c;
    c.name = nb::to_string(kind);
    nb::ScenarioConfig s;
    s.kind = kind;
    s.n_samples = 100'000;
    s.series_length = 65;
    s.d = 1;
    c.scenario = s;
    c.split = nb::SplitSpec::fractions(0.7, 0.2, 0.1);
    c.model.sequence_kind = nb::SequenceKind::attention;
    c.model.head_kind = nb::HeadKind::nbi;
    c.model.hidden_size = 32;
    c.model.dropout = 0.0;
    c.model.lookback = 64;
    c.model.d = 1;
    c.train.max_updates = 20'000;
    c.train.validate_every = 1'000;
    c.train.batch_size = 256;
    c.apply_seed(scenario_seed(kind));
    return c;
}

}  // namespace acceptance
