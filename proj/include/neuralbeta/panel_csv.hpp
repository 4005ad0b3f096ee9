#pragma once

// Long-format return panels:
//   date,asset,y,x_1..x_d[,beta_true_1..beta_true_d]
// one row per (date, asset), dates ISO-8601 and strictly increasing per asset.

#include <filesystem>
#include <string>
#include <vector>

#include "neuralbeta/series.hpp"

namespace neuralbeta {

// Thrown for schema violations; `line` is 1-based (the header is line 1).
class CsvSchemaError : public DataError {
public:
    CsvSchemaError(std::size_t line, const std::string& what)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// One sample per asset in order of first appearance.
std::vector<SeriesSample> ingest_csv(const std::filesystem::path& path);
std::vector<SeriesSample> parse_panel_csv(const std::string& text);

// Samples without dates get consecutive calendar days from 2000-01-01.
// beta_true columns are written when every sample carries them.
void write_panel_csv(const std::filesystem::path& path, const std::vector<SeriesSample>& samples);
std::string format_panel_csv(const std::vector<SeriesSample>& samples);

// True for a valid YYYY-MM-DD calendar date.
bool is_iso_date(const std::string& s);

}  // namespace neuralbeta
