#include "neuralbeta/panel_csv.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace neuralbeta {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

double parse_number(const std::string& s, std::size_t line, const std::string& column) {
    double v = 0.0;
    const char* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (s.empty() || ec != std::errc() || ptr != end) {
        throw CsvSchemaError(line, "column " + column + ": '" + s + "' is not a number");
    }
    if (!std::isfinite(v)) throw CsvSchemaError(line, "column " + column + ": non-finite value");
    return v;
}

void append_number(std::string& out, double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

std::string day_string(std::size_t offset) {
    using namespace std::chrono;
    const year_month_day ymd{sys_days{year{2000} / January / 1} + days{static_cast<int>(offset)}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

struct Rows {
    std::vector<std::string> dates;
    std::vector<double> y;
    std::vector<double> x;
    std::vector<double> beta;
};

}  // namespace

bool is_iso_date(const std::string& s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9})
        if (s[i] < '0' || s[i] > '9') return false;
    using namespace std::chrono;
    const year_month_day ymd{year{std::stoi(s.substr(0, 4))}, month{static_cast<unsigned>(std::stoi(s.substr(5, 2)))},
                             day{static_cast<unsigned>(std::stoi(s.substr(8, 2)))}};
    return ymd.ok();
}

std::vector<SeriesSample> parse_panel_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw CsvSchemaError(1, "missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_fields(line);
    if (header.size() < 4 || header[0] != "date" || header[1] != "asset" || header[2] != "y") {
        throw CsvSchemaError(1, "header must start with date,asset,y,x_1");
    }
    std::size_t d = 0;
    while (3 + d < header.size() && header[3 + d] == "x_" + std::to_string(d + 1)) ++d;
    if (d == 0) throw CsvSchemaError(1, "header has no x_1 column");
    const std::size_t rest = header.size() - 3 - d;
    if (rest != 0 && rest != d) throw CsvSchemaError(1, "expected 0 or " + std::to_string(d) + " beta_true columns");
    for (std::size_t k = 0; k < rest; ++k) {
        if (header[3 + d + k] != "beta_true_" + std::to_string(k + 1)) {
            throw CsvSchemaError(1, "unexpected column '" + header[3 + d + k] + "'");
        }
    }
    const bool truth = rest == d;

    std::vector<std::string> order;
    std::map<std::string, Rows> by_asset;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != header.size()) {
            throw CsvSchemaError(lineno, "expected " + std::to_string(header.size()) + " fields, found " +
                                             std::to_string(f.size()));
        }
        if (!is_iso_date(f[0])) throw CsvSchemaError(lineno, "column date: '" + f[0] + "' is not YYYY-MM-DD");
        if (f[1].empty()) throw CsvSchemaError(lineno, "column asset: empty asset id");
        auto [it, fresh] = by_asset.try_emplace(f[1]);
        if (fresh) order.push_back(f[1]);
        Rows& r = it->second;
        if (!r.dates.empty()) {
            if (f[0] == r.dates.back()) throw CsvSchemaError(lineno, "duplicate row for (" + f[0] + ", " + f[1] + ")");
            if (f[0] < r.dates.back()) {
                throw CsvSchemaError(lineno, "dates for asset " + f[1] + " are not increasing (" + f[0] + " after " +
                                                 r.dates.back() + ")");
            }
        }
        r.dates.push_back(f[0]);
        r.y.push_back(parse_number(f[2], lineno, "y"));
        for (std::size_t k = 0; k < d; ++k) r.x.push_back(parse_number(f[3 + k], lineno, header[3 + k]));
        for (std::size_t k = 0; k < rest; ++k) r.beta.push_back(parse_number(f[3 + d + k], lineno, header[3 + d + k]));
    }
    if (order.empty()) throw CsvSchemaError(lineno, "no data rows");

    std::vector<SeriesSample> out;
    for (const auto& id : order) {
        Rows& r = by_asset[id];
        const auto T = static_cast<Eigen::Index>(r.y.size());
        const auto D = static_cast<Eigen::Index>(d);
        SeriesSample s;
        s.id = id;
        s.y = Eigen::Map<const Eigen::VectorXd>(r.y.data(), T);
        s.x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(r.x.data(), T, D);
        if (truth) {
            s.beta_true =
                Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(r.beta.data(), T, D);
        }
        s.dates = std::move(r.dates);
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<SeriesSample> ingest_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_panel_csv(buf.str());
}

std::string format_panel_csv(const std::vector<SeriesSample>& samples) {
    if (samples.empty()) throw ContractError("no samples to write");
    const std::size_t d = samples.front().dim();
    bool truth = true;
    for (const auto& s : samples) {
        s.validate();
        if (s.dim() != d) throw DataError("samples disagree on the number of factors");
        truth = truth && s.beta_true.has_value();
    }
    std::string out = "date,asset,y";
    for (std::size_t k = 1; k <= d; ++k) out += ",x_" + std::to_string(k);
    if (truth)
        for (std::size_t k = 1; k <= d; ++k) out += ",beta_true_" + std::to_string(k);
    out += '\n';
    std::set<std::string> seen;
    for (const auto& s : samples) {
        if (s.id.empty() || s.id.find(',') != std::string::npos) throw DataError("asset id '" + s.id + "' is not writable");
        if (!seen.insert(s.id).second) throw DataError("duplicate asset id " + s.id);
        for (std::size_t t = 0; t < s.length(); ++t) {
            const auto r = static_cast<Eigen::Index>(t);
            out += s.dates.empty() ? day_string(t) : s.dates[t];
            out += ',';
            out += s.id;
            out += ',';
            append_number(out, s.y(r));
            for (Eigen::Index k = 0; k < s.x.cols(); ++k) {
                out += ',';
                append_number(out, s.x(r, k));
            }
            if (truth) {
                for (Eigen::Index k = 0; k < s.x.cols(); ++k) {
                    out += ',';
                    append_number(out, (*s.beta_true)(r, k));
                }
            }
            out += '\n';
        }
    }
    return out;
}

void write_panel_csv(const std::filesystem::path& path, const std::vector<SeriesSample>& samples) {
    const std::string text = format_panel_csv(samples);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace neuralbeta
