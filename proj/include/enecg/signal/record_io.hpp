#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/signal/record.hpp"

// Record file layout, records concatenated:
//   ENECG1 <record_id> <C> <T> <fs_hz>
//   C lines of T comma-separated samples
//   rr_ms,age_years,sex,potassium_abnormal,arrhythmia_class

namespace enecg::signal {

inline std::string format_double(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

inline void write_record(std::ostream& os, const LabeledRecord& r) {
  const EcgRecord& rec = r.record;
  if (rec.record_id.empty() || rec.record_id.find_first_of(" \t\r\n") != std::string::npos) {
    throw UsageError("record id must be nonempty without whitespace: '" + rec.record_id + "'");
  }
  const std::size_t c = rec.n_leads(), t = rec.length();
  os << "ENECG1 " << rec.record_id << ' ' << c << ' ' << t << ' '
     << format_double(rec.sampling_rate_hz) << '\n';
  std::string line;
  for (std::size_t i = 0; i < c; ++i) {
    line.clear();
    for (std::size_t j = 0; j < t; ++j) {
      if (j) line.push_back(',');
      line += format_double(rec.leads[i * t + j]);
    }
    line.push_back('\n');
    os << line;
  }
  const LabelSet& l = r.labels;
  os << format_double(l.rr_ms) << ',' << format_double(l.age_years) << ',' << l.sex << ','
     << l.potassium_abnormal << ',' << l.arrhythmia_class << '\n';
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}
  bool next(std::string& line) {
    if (!std::getline(is_, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++number_;
    return true;
  }
  std::size_t number() const { return number_; }

 private:
  std::istream& is_;
  std::size_t number_ = 0;
};

[[noreturn]] inline void parse_fail(std::size_t line, const std::string& what) {
  throw ParseError("line " + std::to_string(line) + ": " + what);
}

}  // namespace detail

/// Reads every record in the stream.
inline std::vector<LabeledRecord> read_records(std::istream& is) {
  std::vector<LabeledRecord> out;
  detail::LineReader reader(is);
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    const std::size_t header_line = reader.number();
    const auto head = detail::split_ws(line);
    if (head.size() != 5 || head[0] != "ENECG1") {
      detail::parse_fail(header_line, "malformed header, expected 'ENECG1 <id> <C> <T> <fs_hz>'");
    }
    std::size_t c = 0, t = 0;
    double fs = 0.0;
    if (!detail::parse_number(head[2], c) || c < 1) detail::parse_fail(header_line, "bad lead count");
    if (!detail::parse_number(head[3], t) || t < 2) detail::parse_fail(header_line, "bad sample count");
    if (!detail::parse_number(head[4], fs) || !(fs > 0.0) || !std::isfinite(fs))
      detail::parse_fail(header_line, "bad sampling rate");

    LabeledRecord r;
    r.record.record_id = std::string(head[1]);
    r.record.sampling_rate_hz = fs;
    r.record.leads = Tensor({c, t});
    for (std::size_t row = 0; row < c; ++row) {
      if (!reader.next(line)) {
        detail::parse_fail(reader.number(), "record '" + r.record.record_id + "' declares C=" +
                                                std::to_string(c) + " but has only " +
                                                std::to_string(row) + " rows");
      }
      const auto fields = detail::split(line, ',');
      if (fields.size() != t) {
        detail::parse_fail(reader.number(),
                           "record '" + r.record.record_id + "' declares C=" + std::to_string(c) +
                               " rows of T=" + std::to_string(t) + " samples; found " +
                               std::to_string(row) + " rows before a line with " +
                               std::to_string(fields.size()) + " values");
      }
      for (std::size_t j = 0; j < t; ++j) {
        double v = 0.0;
        if (!detail::parse_number(fields[j], v) || !std::isfinite(v)) {
          detail::parse_fail(reader.number(), "unreadable sample '" + std::string(fields[j]) + "'");
        }
        r.record.leads[row * t + j] = v;
      }
    }
    if (!reader.next(line)) detail::parse_fail(reader.number(), "missing label line");
    const auto f = detail::split(line, ',');
    LabelSet& l = r.labels;
    if (f.size() != 5 || !detail::parse_number(f[0], l.rr_ms) ||
        !detail::parse_number(f[1], l.age_years) || !detail::parse_number(f[2], l.sex) ||
        !detail::parse_number(f[3], l.potassium_abnormal) ||
        !detail::parse_number(f[4], l.arrhythmia_class)) {
      detail::parse_fail(reader.number(),
                         "malformed label line, expected rr_ms,age_years,sex,potassium,class");
    }
    if (!(l.rr_ms > 0.0) || !(l.age_years >= 0.0 && l.age_years <= 110.0) ||
        (l.sex != 0 && l.sex != 1) || (l.potassium_abnormal != 0 && l.potassium_abnormal != 1) ||
        l.arrhythmia_class < 0 || l.arrhythmia_class >= kArrhythmiaClasses) {
      detail::parse_fail(reader.number(), "label value out of range");
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ParseError("line 1: empty record file");
  return out;
}

inline void save_records(const std::filesystem::path& path, std::span<const LabeledRecord> records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& r : records) write_record(os, r);
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline std::vector<LabeledRecord> load_records(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  try {
    return read_records(is);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Manifest: one record-file path per line, relative to the manifest.
inline void save_manifest(const std::filesystem::path& path,
                          std::span<const std::filesystem::path> files) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& f : files) os << f.generic_string() << '\n';
}

inline std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open manifest '" + path.string() + "'");
  std::vector<std::filesystem::path> files;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::filesystem::path p(line);
    files.push_back(p.is_absolute() ? p : path.parent_path() / p);
  }
  return files;
}

inline std::vector<LabeledRecord> load_dataset(const std::filesystem::path& manifest) {
  std::vector<LabeledRecord> out;
  for (const auto& f : read_manifest(manifest)) {
    auto part = load_records(f);
    for (auto& r : part) out.push_back(std::move(r));
  }
  return out;
}

}  // namespace enecg::signal
