#pragma once

// Return series, lookback windows and dataset splits.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neuralbeta/errors.hpp"

namespace neuralbeta {

// One target asset against d explanatory factors over T steps.
struct SeriesSample {
    std::string id;
    Eigen::MatrixXd x;                         // T x d
    Eigen::VectorXd y;                         // T
    std::optional<Eigen::MatrixXd> beta_true;  // T x d, synthetic data only
    std::vector<std::string> dates;            // ISO-8601 per row, or empty
    // Leading rows that only serve as history: no window targets them.
    std::size_t warmup = 0;
    // Scenario parameters recorded by the generators (e.g. "cycle_rate").
    std::map<std::string, double> tags;

    std::size_t length() const { return static_cast<std::size_t>(y.size()); }
    std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }

    // Throws DataError when the invariants of the type do not hold.
    void validate() const;
};

// Rows (s, t] of `sample`, i.e. zero-based rows s .. t-1. Requires
// 0 <= s < t <= T.
SeriesSample slice(const SeriesSample& sample, std::size_t s, std::size_t t);

struct WindowOrigin {
    std::string sample_id;
    std::size_t target = 0;  // zero-based row index of (next_x, next_y)
    std::string date;        // target date when the sample carries dates
};

// Lookback windows D_{t-h,t} with their next-step targets, stored flat and
// row-major so batches can be handed to the tensor engine without reshaping.
struct WindowBatch {
    std::size_t lookback = 0;
    std::size_t dim = 0;
    std::vector<double> windows_x;       // N * h * d
    std::vector<double> windows_y;       // N * h
    std::vector<double> next_x;          // N * d
    std::vector<double> next_y;          // N
    std::vector<double> beta_next_true;  // N * d, or empty
    std::vector<WindowOrigin> origin;

    std::size_t size() const { return next_y.size(); }
    bool empty() const { return next_y.empty(); }
    bool has_truth() const { return !beta_next_true.empty(); }

    Eigen::MatrixXd window_x(std::size_t i) const;  // h x d, oldest row first
    Eigen::VectorXd window_y(std::size_t i) const;
    Eigen::VectorXd target_x(std::size_t i) const;
    Eigen::VectorXd target_beta(std::size_t i) const;

    void append(const WindowBatch& other);
    WindowBatch subset(const std::vector<std::size_t>& rows) const;
};

// Produces one window per target index in [max(h, warmup), T), i.e. T - h
// windows when there is no warm-up.
WindowBatch make_windows(const SeriesSample& sample, std::size_t lookback);
WindowBatch make_windows(const std::vector<SeriesSample>& samples, std::size_t lookback);

struct DateRange {
    std::string first;  // inclusive, ISO-8601
    std::string last;   // inclusive
};

struct SplitSpec {
    enum class Mode { by_sample_fraction, by_date_range };
    Mode mode = Mode::by_sample_fraction;
    double train_fraction = 0.7;
    double validation_fraction = 0.2;
    double test_fraction = 0.1;
    DateRange train_dates, validation_dates, test_dates;
    // Date mode: rows before a partition's first date kept as warm-up history.
    std::size_t lookback = 0;

    static SplitSpec fractions(double train, double validation, double test);
    static SplitSpec dates(DateRange train, DateRange validation, DateRange test, std::size_t lookback);
    void validate() const;
};

struct DatasetSplit {
    std::vector<SeriesSample> train;
    std::vector<SeriesSample> validation;
    std::vector<SeriesSample> test;
};

// Fraction mode: deterministic seeded shuffle, each partition floored and the
// remainder assigned to train. Date mode: each sample is cut into the three
// date ranges, carrying `lookback` rows of warm-up history into the later
// partitions.
DatasetSplit split(const std::vector<SeriesSample>& dataset, const SplitSpec& spec, std::uint64_t seed);

// Partition sizes used by fraction mode.
std::array<std::size_t, 3> fraction_sizes(std::size_t n, const SplitSpec& spec);

}  // namespace neuralbeta
