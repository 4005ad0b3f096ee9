#include "neuralbeta/series.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace neuralbeta {

void SeriesSample::validate() const {
    const auto T = static_cast<Eigen::Index>(length());
    if (x.rows() != T) throw DataError(id + ": x has " + std::to_string(x.rows()) + " rows but y has " + std::to_string(T));
    if (x.cols() < 1) throw DataError(id + ": at least one factor is required");
    if (T < 2) throw DataError(id + ": series must have at least 2 rows");
    if (beta_true && (beta_true->rows() != T || beta_true->cols() != x.cols())) {
        throw DataError(id + ": beta_true shape does not match x");
    }
    if (!dates.empty() && dates.size() != length()) throw DataError(id + ": dates length does not match series");
    if (warmup >= length()) throw DataError(id + ": warm-up covers the whole series");
}

SeriesSample slice(const SeriesSample& sample, std::size_t s, std::size_t t) {
    if (!(s < t && t <= sample.length())) {
        throw BoundsError("slice(" + std::to_string(s) + ", " + std::to_string(t) + ") outside series of length " +
                          std::to_string(sample.length()));
    }
    const auto start = static_cast<Eigen::Index>(s);
    const auto n = static_cast<Eigen::Index>(t - s);
    SeriesSample out;
    out.id = sample.id;
    out.x = sample.x.middleRows(start, n);
    out.y = sample.y.segment(start, n);
    if (sample.beta_true) out.beta_true = sample.beta_true->middleRows(start, n);
    if (!sample.dates.empty()) {
        out.dates.assign(sample.dates.begin() + static_cast<std::ptrdiff_t>(s),
                         sample.dates.begin() + static_cast<std::ptrdiff_t>(t));
    }
    out.tags = sample.tags;
    return out;
}

Eigen::MatrixXd WindowBatch::window_x(std::size_t i) const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(lookback), static_cast<Eigen::Index>(dim));
    const double* p = windows_x.data() + i * lookback * dim;
    for (std::size_t r = 0; r < lookback; ++r)
        for (std::size_t c = 0; c < dim; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = p[r * dim + c];
    return m;
}

Eigen::VectorXd WindowBatch::window_y(std::size_t i) const {
    return Eigen::Map<const Eigen::VectorXd>(windows_y.data() + i * lookback, static_cast<Eigen::Index>(lookback));
}

Eigen::VectorXd WindowBatch::target_x(std::size_t i) const {
    return Eigen::Map<const Eigen::VectorXd>(next_x.data() + i * dim, static_cast<Eigen::Index>(dim));
}

Eigen::VectorXd WindowBatch::target_beta(std::size_t i) const {
    if (!has_truth()) throw UnsupportedError("window batch carries no ground-truth beta");
    return Eigen::Map<const Eigen::VectorXd>(beta_next_true.data() + i * dim, static_cast<Eigen::Index>(dim));
}

void WindowBatch::append(const WindowBatch& other) {
    if (other.empty()) return;
    if (empty() && windows_x.empty()) {
        *this = other;
        return;
    }
    if (other.lookback != lookback || other.dim != dim) throw ShapeError("cannot append windows of different shape");
    if (other.has_truth() != has_truth()) throw DataError("cannot mix windows with and without ground truth");
    windows_x.insert(windows_x.end(), other.windows_x.begin(), other.windows_x.end());
    windows_y.insert(windows_y.end(), other.windows_y.begin(), other.windows_y.end());
    next_x.insert(next_x.end(), other.next_x.begin(), other.next_x.end());
    next_y.insert(next_y.end(), other.next_y.begin(), other.next_y.end());
    beta_next_true.insert(beta_next_true.end(), other.beta_next_true.begin(), other.beta_next_true.end());
    origin.insert(origin.end(), other.origin.begin(), other.origin.end());
}

WindowBatch WindowBatch::subset(const std::vector<std::size_t>& rows) const {
    WindowBatch out;
    out.lookback = lookback;
    out.dim = dim;
    const std::size_t hd = lookback * dim;
    out.windows_x.reserve(rows.size() * hd);
    out.windows_y.reserve(rows.size() * lookback);
    for (std::size_t r : rows) {
        if (r >= size()) throw BoundsError("window index out of range");
        out.windows_x.insert(out.windows_x.end(), windows_x.begin() + static_cast<std::ptrdiff_t>(r * hd),
                             windows_x.begin() + static_cast<std::ptrdiff_t>((r + 1) * hd));
        out.windows_y.insert(out.windows_y.end(), windows_y.begin() + static_cast<std::ptrdiff_t>(r * lookback),
                             windows_y.begin() + static_cast<std::ptrdiff_t>((r + 1) * lookback));
        out.next_x.insert(out.next_x.end(), next_x.begin() + static_cast<std::ptrdiff_t>(r * dim),
                          next_x.begin() + static_cast<std::ptrdiff_t>((r + 1) * dim));
        out.next_y.push_back(next_y[r]);
        if (has_truth()) {
            out.beta_next_true.insert(out.beta_next_true.end(),
                                      beta_next_true.begin() + static_cast<std::ptrdiff_t>(r * dim),
                                      beta_next_true.begin() + static_cast<std::ptrdiff_t>((r + 1) * dim));
        }
        out.origin.push_back(origin[r]);
    }
    return out;
}

WindowBatch make_windows(const SeriesSample& sample, std::size_t lookback) {
    if (lookback == 0) throw ConfigError("lookback must be positive");
    const std::size_t T = sample.length();
    if (T <= lookback) {
        throw InsufficientHistoryError(sample.id + ": series of length " + std::to_string(T) +
                                       " has no room for a lookback of " + std::to_string(lookback));
    }
    const std::size_t d = sample.dim();
    WindowBatch out;
    out.lookback = lookback;
    out.dim = d;
    const std::size_t first_target = std::max(lookback, sample.warmup);
    const std::size_t n = T > first_target ? T - first_target : 0;
    out.windows_x.reserve(n * lookback * d);
    out.windows_y.reserve(n * lookback);
    for (std::size_t target = first_target; target < T; ++target) {
        const auto tg = static_cast<Eigen::Index>(target);
        for (std::size_t r = target - lookback; r < target; ++r) {
            const auto ri = static_cast<Eigen::Index>(r);
            for (std::size_t c = 0; c < d; ++c) out.windows_x.push_back(sample.x(ri, static_cast<Eigen::Index>(c)));
            out.windows_y.push_back(sample.y(ri));
        }
        for (std::size_t c = 0; c < d; ++c) out.next_x.push_back(sample.x(tg, static_cast<Eigen::Index>(c)));
        out.next_y.push_back(sample.y(tg));
        if (sample.beta_true) {
            for (std::size_t c = 0; c < d; ++c) out.beta_next_true.push_back((*sample.beta_true)(tg, static_cast<Eigen::Index>(c)));
        }
        out.origin.push_back({sample.id, target, sample.dates.empty() ? std::string{} : sample.dates[target]});
    }
    return out;
}

WindowBatch make_windows(const std::vector<SeriesSample>& samples, std::size_t lookback) {
    WindowBatch out;
    out.lookback = lookback;
    for (const auto& s : samples) {
        WindowBatch w = make_windows(s, lookback);
        if (out.windows_x.empty() && out.empty()) {
            out = std::move(w);
        } else {
            out.append(w);
        }
    }
    return out;
}

SplitSpec SplitSpec::fractions(double train, double validation, double test) {
    SplitSpec s;
    s.mode = Mode::by_sample_fraction;
    s.train_fraction = train;
    s.validation_fraction = validation;
    s.test_fraction = test;
    return s;
}

SplitSpec SplitSpec::dates(DateRange train, DateRange validation, DateRange test, std::size_t lookback) {
    SplitSpec s;
    s.mode = Mode::by_date_range;
    s.train_dates = std::move(train);
    s.validation_dates = std::move(validation);
    s.test_dates = std::move(test);
    s.lookback = lookback;
    return s;
}

void SplitSpec::validate() const {
    if (mode == Mode::by_sample_fraction) {
        const double total = train_fraction + validation_fraction + test_fraction;
        if (train_fraction < 0 || validation_fraction < 0 || test_fraction < 0 || std::abs(total - 1.0) > 1e-9) {
            throw ConfigError("split fractions must be non-negative and sum to 1");
        }
        return;
    }
    for (const DateRange* r : {&train_dates, &validation_dates, &test_dates}) {
        if (r->first.empty() || r->last.empty() || r->first > r->last) throw ConfigError("invalid date range");
    }
    if (!(train_dates.last < validation_dates.first && validation_dates.last < test_dates.first)) {
        throw ConfigError("date ranges must be disjoint and ordered train < validation < test");
    }
}

std::array<std::size_t, 3> fraction_sizes(std::size_t n, const SplitSpec& spec) {
    const auto floor_part = [n](double f) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9));
    };
    const std::size_t validation = floor_part(spec.validation_fraction);
    const std::size_t test = floor_part(spec.test_fraction);
    return {n - validation - test, validation, test};
}

namespace {

// Rows of `sample` whose date lies in `range`, with up to `lookback` rows of
// preceding history marked as warm-up.
std::optional<SeriesSample> cut_by_dates(const SeriesSample& sample, const DateRange& range, std::size_t lookback) {
    const auto first = std::lower_bound(sample.dates.begin(), sample.dates.end(), range.first);
    const auto last = std::upper_bound(sample.dates.begin(), sample.dates.end(), range.last);
    if (first >= last) return std::nullopt;
    const auto begin = static_cast<std::size_t>(first - sample.dates.begin());
    const auto end = static_cast<std::size_t>(last - sample.dates.begin());
    const std::size_t start = begin >= lookback ? begin - lookback : 0;
    SeriesSample out = slice(sample, start, end);
    out.warmup = begin - start;
    if (out.warmup >= out.length()) return std::nullopt;
    return out;
}

}  // namespace

DatasetSplit split(const std::vector<SeriesSample>& dataset, const SplitSpec& spec, std::uint64_t seed) {
    if (dataset.empty()) throw ConfigError("cannot split an empty dataset");
    spec.validate();
    DatasetSplit out;
    if (spec.mode == SplitSpec::Mode::by_sample_fraction) {
        std::vector<std::size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(seed);
        std::shuffle(order.begin(), order.end(), rng);
        const auto sizes = fraction_sizes(dataset.size(), spec);
        std::size_t k = 0;
        for (std::size_t i = 0; i < sizes[0]; ++i) out.train.push_back(dataset[order[k++]]);
        for (std::size_t i = 0; i < sizes[1]; ++i) out.validation.push_back(dataset[order[k++]]);
        for (std::size_t i = 0; i < sizes[2]; ++i) out.test.push_back(dataset[order[k++]]);
    } else {
        for (const auto& s : dataset) {
            if (s.dates.empty()) throw ConfigError(s.id + ": date split requires dated samples");
            if (auto p = cut_by_dates(s, spec.train_dates, 0)) out.train.push_back(std::move(*p));
            if (auto p = cut_by_dates(s, spec.validation_dates, spec.lookback)) out.validation.push_back(std::move(*p));
            if (auto p = cut_by_dates(s, spec.test_dates, spec.lookback)) out.test.push_back(std::move(*p));
        }
    }
    if (out.train.empty() || out.validation.empty() || out.test.empty()) {
        throw ConfigError("split produced an empty partition");
    }
    return out;
}

}  // namespace neuralbeta
