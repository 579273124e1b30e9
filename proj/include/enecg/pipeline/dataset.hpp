#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/pipeline/config.hpp"
#include "enecg/pipeline/features.hpp"
#include "enecg/signal/generator.hpp"
#include "enecg/signal/record_io.hpp"

namespace enecg::pipeline {

/// Indexed access to a dataset without holding every signal in memory.
struct Dataset {
  std::size_t size = 0;
  std::size_t n_leads = 0;
  RecordSource source;
};

namespace detail {

inline std::size_t count_records(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open record file '" + file.string() + "'");
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("ENECG1 ", 0) == 0) ++n;
  return n;
}

/// Loads one record file at a time and keeps the most recent in memory.
class ManifestReader {
 public:
  explicit ManifestReader(const std::filesystem::path& manifest)
      : files_(signal::read_manifest(manifest)) {
    if (files_.empty()) throw ParseError("manifest '" + manifest.string() + "' lists no files");
    for (const auto& f : files_) {
      starts_.push_back(total_);
      total_ += count_records(f);
    }
    if (total_ == 0) throw ParseError("manifest '" + manifest.string() + "' holds no records");
  }

  std::size_t size() const noexcept { return total_; }

  signal::LabeledRecord get(std::size_t i) {
    if (i >= total_) throw UsageError("record index " + std::to_string(i) + " out of range");
    std::size_t f = files_.size() - 1;
    while (starts_[f] > i) --f;
    if (f != cached_) {
      records_ = signal::load_records(files_[f]);
      cached_ = f;
    }
    const std::size_t j = i - starts_[f];
    if (j >= records_.size()) throw ParseError("record file '" + files_[f].string() + "' is truncated");
    return records_[j];
  }

 private:
  std::vector<std::filesystem::path> files_;
  std::vector<std::size_t> starts_;
  std::size_t total_ = 0;
  std::size_t cached_ = static_cast<std::size_t>(-1);
  std::vector<signal::LabeledRecord> records_;
};

}  // namespace detail

/// Records listed by `cfg.data_manifest`, or generated on demand from
/// `cfg.generator` seeded with the experiment seed.
inline Dataset open_dataset(const ExperimentConfig& cfg) {
  Dataset d;
  if (!cfg.data_manifest.empty()) {
    auto reader = std::make_shared<detail::ManifestReader>(cfg.data_manifest);
    d.size = reader->size();
    d.source = [reader](std::size_t i) { return reader->get(i); };
    d.n_leads = d.source(0).record.n_leads();
    return d;
  }
  signal::GeneratorConfig g = cfg.generator;
  g.seed = cfg.seed;
  g.validate();
  d.size = g.n_records;
  d.n_leads = g.n_leads;
  d.source = [g](std::size_t i) { return signal::generate_record(g, i); };
  return d;
}

}  // namespace enecg::pipeline
