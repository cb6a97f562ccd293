#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "poolcf/domain.hpp"

namespace poolcf::io {

// Shortest decimal that round-trips to the same double.
std::string format_real(double v);
double parse_real(std::string_view s);
long long parse_integer(std::string_view s);

// Minimal CSV: comma separated, no quoting. Fields must not contain commas.
std::vector<std::string_view> split_csv_line(std::string_view line);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws DataError if absent.
  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

// Throws DataError when the header differs from the expected one.
void expect_header(const CsvTable& t, const std::vector<std::string>& expected,
                   const std::filesystem::path& path);

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  CsvWriter& add(std::string_view field);
  CsvWriter& add(double v);
  CsvWriter& add(long long v);
  CsvWriter& add(int v) { return add(static_cast<long long>(v)); }
  CsvWriter& add(std::size_t v) { return add(static_cast<long long>(v)); }
  CsvWriter& add_empty() { return add(std::string_view{}); }
  void end_row();

  const std::string& str() const { return buffer_; }
  void write(const std::filesystem::path& path) const;

 private:
  std::size_t columns_;
  std::size_t in_row_ = 0;
  std::string buffer_;
};

extern const std::vector<std::string> kSegmentsHeader;
extern const std::vector<std::string> kObservationsHeader;

void write_segments_csv(const Dataset& d, const std::filesystem::path& path);
void write_observations_csv(const Dataset& d, const std::filesystem::path& path);

// Loads segments.csv + observations.csv from a directory. The date range is
// [first observed date, last observed date + 1). Non-fatal anomalies (width
// below 2 m per lane) are appended to warnings.
Dataset read_dataset(const std::filesystem::path& dir, std::vector<std::string>* warnings = nullptr);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace poolcf::io
