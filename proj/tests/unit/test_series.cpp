#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "neuralbeta/series.hpp"
#include "neuralbeta/synthetic.hpp"

using namespace neuralbeta;

namespace {

SeriesSample ramp(std::size_t T, std::size_t d = 1, const std::string& id = "a") {
    SeriesSample s;
    s.id = id;
    s.x.resize(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(d));
    s.y.resize(static_cast<Eigen::Index>(T));
    for (Eigen::Index t = 0; t < s.x.rows(); ++t) {
        for (Eigen::Index k = 0; k < s.x.cols(); ++k) s.x(t, k) = 100.0 * static_cast<double>(t) + static_cast<double>(k);
        s.y(t) = static_cast<double>(t);
    }
    return s;
}

std::vector<SeriesSample> many(std::size_t n, std::size_t T = 8) {
    std::vector<SeriesSample> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(ramp(T, 1, "s" + std::to_string(i)));
    return out;
}

}  // namespace

TEST(SeriesSample, ValidateRejectsMismatchedShapes) {
    SeriesSample s = ramp(5);
    EXPECT_NO_THROW(s.validate());
    s.y.resize(4);
    EXPECT_THROW(s.validate(), DataError);
    SeriesSample one = ramp(1);
    EXPECT_THROW(one.validate(), DataError);
    SeriesSample b = ramp(5);
    b.beta_true = Eigen::MatrixXd::Zero(4, 1);
    EXPECT_THROW(b.validate(), DataError);
}

TEST(Slice, FullSliceIsIdentity) {
    const SeriesSample s = ramp(65);
    const SeriesSample c = slice(s, 0, 65);
    EXPECT_EQ(c.x, s.x);
    EXPECT_EQ(c.y, s.y);
}

TEST(Slice, KeepsRowsFromStartToEnd) {
    const SeriesSample c = slice(ramp(65), 10, 20);
    EXPECT_EQ(c.length(), 10u);
    EXPECT_EQ(c.y(0), 10.0);  // 1-based row 11
    EXPECT_EQ(c.y(9), 19.0);
}

TEST(Slice, EmptyOrOutOfRangeIntervalThrows) {
    const SeriesSample s = ramp(65);
    EXPECT_THROW(slice(s, 5, 5), BoundsError);
    EXPECT_THROW(slice(s, 0, 66), BoundsError);
    EXPECT_THROW(slice(s, 7, 3), BoundsError);
}

TEST(MakeWindows, DefaultLengthGivesOneWindow) {
    const WindowBatch w = make_windows(ramp(65), 64);
    ASSERT_EQ(w.size(), 1u);
    EXPECT_EQ(w.origin[0].target, 64u);
    EXPECT_EQ(w.next_y[0], 64.0);
    EXPECT_EQ(w.windows_y.front(), 0.0);
    EXPECT_EQ(w.windows_y.back(), 63.0);
}

TEST(MakeWindows, CountIsTMinusH) {
    EXPECT_EQ(make_windows(ramp(65), 32).size(), 33u);
    for (std::size_t T : {3, 10, 40})
        for (std::size_t h : {1, 2})
            EXPECT_EQ(make_windows(ramp(T), h).size(), T - h);
}

TEST(MakeWindows, InsufficientHistoryThrows) {
    EXPECT_THROW(make_windows(ramp(64), 64), InsufficientHistoryError);
    EXPECT_THROW(make_windows(ramp(10), 0), ConfigError);
}

TEST(MakeWindows, NoLeakageAndUniqueOrigins) {
    const auto samples = generate({ScenarioKind::stepwise, 30, 20, 2, 9});
    const WindowBatch w = make_windows(samples, 7);
    std::set<std::pair<std::string, std::size_t>> seen;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const auto& o = w.origin[i];
        EXPECT_TRUE(seen.insert({o.sample_id, o.target}).second);
        const auto& s = *std::find_if(samples.begin(), samples.end(), [&](const auto& q) { return q.id == o.sample_id; });
        // window rows are exactly target-h .. target-1
        EXPECT_EQ(w.window_x(i), s.x.middleRows(static_cast<Eigen::Index>(o.target - 7), 7));
        EXPECT_EQ(w.target_x(i), s.x.row(static_cast<Eigen::Index>(o.target)).transpose());
        EXPECT_EQ(w.target_beta(i), s.beta_true->row(static_cast<Eigen::Index>(o.target)).transpose());
    }
}

TEST(MakeWindows, WarmupRowsAreNeverTargets) {
    SeriesSample s = ramp(20);
    s.warmup = 10;
    const WindowBatch w = make_windows(s, 4);
    EXPECT_EQ(w.size(), 10u);
    EXPECT_EQ(w.origin.front().target, 10u);
}

TEST(WindowBatch, SubsetAndAppend) {
    WindowBatch a = make_windows(ramp(10), 3);
    const WindowBatch b = a.subset({6, 0});
    EXPECT_EQ(b.size(), 2u);
    EXPECT_EQ(b.next_y[0], a.next_y[6]);
    a.append(b);
    EXPECT_EQ(a.size(), 9u);
    EXPECT_THROW(a.append(make_windows(ramp(10, 2), 3)), ShapeError);
    EXPECT_THROW(a.target_beta(0), UnsupportedError);
}

TEST(Split, DefaultFractions) {
    const auto s = fraction_sizes(100'000, SplitSpec::fractions(0.7, 0.2, 0.1));
    EXPECT_EQ(s, (std::array<std::size_t, 3>{70'000, 20'000, 10'000}));
    const auto parts = split(many(10), SplitSpec::fractions(0.7, 0.2, 0.1), 1);
    EXPECT_EQ(parts.train.size(), 7u);
    EXPECT_EQ(parts.validation.size(), 2u);
    EXPECT_EQ(parts.test.size(), 1u);
}

TEST(Split, RemainderGoesToTrain) {
    const auto s = fraction_sizes(11, SplitSpec::fractions(0.7, 0.2, 0.1));
    EXPECT_EQ(s, (std::array<std::size_t, 3>{8, 2, 1}));
}

TEST(Split, DeterministicAndExhaustive) {
    const auto data = many(37);
    const auto spec = SplitSpec::fractions(0.5, 0.3, 0.2);
    const auto a = split(data, spec, 5);
    const auto b = split(data, spec, 5);
    std::multiset<std::string> ids;
    std::vector<std::string> order_a, order_b;
    for (const auto* part : {&a.train, &a.validation, &a.test})
        for (const auto& s : *part) {
            ids.insert(s.id);
            order_a.push_back(s.id);
        }
    for (const auto* part : {&b.train, &b.validation, &b.test})
        for (const auto& s : *part) order_b.push_back(s.id);
    EXPECT_EQ(order_a, order_b);
    std::multiset<std::string> expected;
    for (const auto& s : data) expected.insert(s.id);
    EXPECT_EQ(ids, expected);
    const auto c = split(data, spec, 6);
    std::vector<std::string> order_c;
    for (const auto& s : c.train) order_c.push_back(s.id);
    EXPECT_NE(std::vector<std::string>(order_a.begin(), order_a.begin() + static_cast<std::ptrdiff_t>(order_c.size())), order_c);
}

TEST(Split, EmptyPartitionIsConfigError) {
    EXPECT_THROW(split(many(2), SplitSpec::fractions(0.7, 0.2, 0.1), 0), ConfigError);
    EXPECT_THROW(split({}, SplitSpec::fractions(0.7, 0.2, 0.1), 0), ConfigError);
    EXPECT_THROW(split(many(10), SplitSpec::fractions(0.7, 0.2, 0.2), 0), ConfigError);
}

TEST(Split, DateRangesCarryWarmupAndNeverStraddle) {
    SeriesSample s = ramp(30);
    for (int t = 0; t < 30; ++t) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "2020-01-%02d", t + 1);
        s.dates.push_back(buf);
    }
    const auto spec = SplitSpec::dates({"2020-01-01", "2020-01-15"}, {"2020-01-16", "2020-01-22"},
                                       {"2020-01-23", "2020-01-30"}, 4);
    const auto parts = split({s}, spec, 0);
    ASSERT_EQ(parts.validation.size(), 1u);
    const WindowBatch tr = make_windows(parts.train, 4);
    const WindowBatch va = make_windows(parts.validation, 4);
    const WindowBatch te = make_windows(parts.test, 4);
    EXPECT_EQ(tr.size(), 11u);
    EXPECT_EQ(va.size(), 7u);
    EXPECT_EQ(te.size(), 8u);
    for (const auto& o : va.origin) EXPECT_TRUE(o.date >= "2020-01-16" && o.date <= "2020-01-22");
    for (const auto& o : te.origin) EXPECT_TRUE(o.date >= "2020-01-23");
    EXPECT_EQ(va.windows_y.front(), 11.0);  // warm-up reaches back into the training range
}

TEST(Split, DateRangesMustBeOrdered) {
    const auto bad = SplitSpec::dates({"2020-01-01", "2020-02-01"}, {"2020-01-15", "2020-03-01"},
                                      {"2020-04-01", "2020-05-01"}, 2);
    EXPECT_THROW(bad.validate(), ConfigError);
}
