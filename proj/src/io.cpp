#include "poolcf/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <algorithm>
#include <sstream>

#include "poolcf/error.hpp"

namespace poolcf::io {

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw IoError("cannot format real");
  return std::string(buf, ptr);
}

double parse_real(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError("not a real number: '" + std::string(s) + "'");
  }
  return v;
}

long long parse_integer(std::string_view s) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError("not an integer: '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw DataError("missing CSV column '" + std::string(name) + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  for (auto f : split_csv_line(line)) t.header.emplace_back(f);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != t.header.size()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(t.header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    t.rows.emplace_back(fields.begin(), fields.end());
  }
  return t;
}

void expect_header(const CsvTable& t, const std::vector<std::string>& expected,
                   const std::filesystem::path& path) {
  if (t.header != expected) {
    std::string want;
    for (const auto& h : expected) want += (want.empty() ? "" : ",") + h;
    throw DataError(path.string() + ": unexpected header (want " + want + ")");
  }
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) buffer_ += ',';
    buffer_ += header[i];
  }
  buffer_ += '\n';
}

CsvWriter& CsvWriter::add(std::string_view field) {
  if (field.find_first_of(",\n") != std::string_view::npos) {
    throw IoError("CSV field contains a separator: '" + std::string(field) + "'");
  }
  if (in_row_ == columns_) throw IoError("too many CSV fields in row");
  if (in_row_) buffer_ += ',';
  buffer_ += field;
  ++in_row_;
  return *this;
}

CsvWriter& CsvWriter::add(double v) { return add(std::string_view(format_real(v))); }

CsvWriter& CsvWriter::add(long long v) { return add(std::string_view(std::to_string(v))); }

void CsvWriter::end_row() {
  if (in_row_ != columns_) {
    throw IoError("CSV row has " + std::to_string(in_row_) + " fields, expected " +
                  std::to_string(columns_));
  }
  buffer_ += '\n';
  in_row_ = 0;
}

void CsvWriter::write(const std::filesystem::path& path) const { write_text(path, buffer_); }

const std::vector<std::string> kSegmentsHeader = {"id",    "city",    "priority",       "length_m",
                                                  "lanes", "width_m", "speed_limit_mps"};
const std::vector<std::string> kObservationsHeader = {
    "segment_id", "date", "hour", "dow", "partial_flow_vph", "mean_speed_mps"};

void write_segments_csv(const Dataset& d, const std::filesystem::path& path) {
  CsvWriter w(kSegmentsHeader);
  for (const auto& [id, s] : d.segments) {
    w.add(s.id).add(s.city).add(to_string(s.priority)).add(s.length_m).add(s.lanes).add(s.width_m).add(
        s.speed_limit_mps);
    w.end_row();
  }
  w.write(path);
}

void write_observations_csv(const Dataset& d, const std::filesystem::path& path) {
  CsvWriter w(kObservationsHeader);
  for (const auto& o : d.observations) {
    w.add(o.segment_id).add(o.t.date.iso()).add(o.t.hour).add(o.t.dow).add(o.partial_flow_vph).add(
        o.mean_speed_mps);
    w.end_row();
  }
  w.write(path);
}

Dataset read_dataset(const std::filesystem::path& dir, std::vector<std::string>* warnings) {
  const auto seg_path = dir / "segments.csv";
  const auto obs_path = dir / "observations.csv";
  Dataset d;

  const CsvTable segs = read_csv(seg_path);
  expect_header(segs, kSegmentsHeader, seg_path);
  for (const auto& r : segs.rows) {
    Segment s;
    s.id = r[0];
    s.city = r[1];
    s.priority = parse_priority(r[2]);
    s.length_m = parse_real(r[3]);
    s.lanes = static_cast<int>(parse_integer(r[4]));
    s.width_m = parse_real(r[5]);
    s.speed_limit_mps = parse_real(r[6]);
    if (!(s.length_m > 0) || s.lanes < 1 || !(s.width_m > 0) || !(s.speed_limit_mps > 0)) {
      throw DataError(seg_path.string() + ": segment '" + s.id + "' has non-positive attributes");
    }
    if (warnings && s.width_m < 2.0 * s.lanes) {
      warnings->push_back("segment '" + s.id + "' width " + format_real(s.width_m) + " m is below 2 m per lane");
    }
    if (!d.segments.emplace(s.id, s).second) {
      throw DataError(seg_path.string() + ": duplicate segment id '" + s.id + "'");
    }
  }

  const CsvTable obs = read_csv(obs_path);
  expect_header(obs, kObservationsHeader, obs_path);
  d.observations.reserve(obs.rows.size());
  for (const auto& r : obs.rows) {
    Observation o;
    o.segment_id = r[0];
    o.t.date = Date::from_iso(r[1]);
    o.t.hour = static_cast<int>(parse_integer(r[2]));
    o.t.dow = static_cast<int>(parse_integer(r[3]));
    o.partial_flow_vph = parse_real(r[4]);
    o.mean_speed_mps = parse_real(r[5]);
    if (o.t.hour < 0 || o.t.hour > 23 || o.t.dow < 0 || o.t.dow > 6) {
      throw DataError(obs_path.string() + ": hour/dow out of range for segment '" + o.segment_id + "'");
    }
    if (o.t.dow != o.t.date.weekday()) {
      throw DataError(obs_path.string() + ": dow " + std::to_string(o.t.dow) + " does not match date " +
                      o.t.date.iso());
    }
    if (!(o.partial_flow_vph >= 0)) {
      throw DataError(obs_path.string() + ": negative flow for segment '" + o.segment_id + "'");
    }
    d.observations.push_back(std::move(o));
  }
  validate(d);
  std::stable_sort(d.observations.begin(), d.observations.end(), observation_before);
  if (!d.observations.empty()) {
    d.range = {d.observations.front().t.date, d.observations.back().t.date + 1};
  }
  return d;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) { return fnv1a_hex(read_text(path)); }

}  // namespace poolcf::io
