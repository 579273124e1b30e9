#pragma once

#include <string>

#include "enecg/numerics/tensor.hpp"

namespace enecg::signal {

inline constexpr int kArrhythmiaClasses = 15;

/// One multi-lead recording, leads x samples in millivolts.
struct EcgRecord {
  Tensor leads;
  double sampling_rate_hz = 500.0;
  std::string record_id;

  std::size_t n_leads() const { return leads.dim(0); }
  std::size_t length() const { return leads.dim(1); }
};

/// Targets for the five downstream tasks.
struct LabelSet {
  double rr_ms = 0.0;
  double age_years = 0.0;
  int sex = 0;
  int potassium_abnormal = 0;
  int arrhythmia_class = 0;

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

struct LabeledRecord {
  EcgRecord record;
  LabelSet labels;
};

}  // namespace enecg::signal
