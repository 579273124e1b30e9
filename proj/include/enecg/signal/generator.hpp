#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "enecg/error.hpp"
#include "enecg/signal/record.hpp"

namespace enecg::signal {

/// Gaussian deflection: amplitude (mV), centre relative to the R peak (s),
/// standard deviation (s).
struct WaveShape {
  double amplitude = 0.0;
  double center_s = 0.0;
  double width_s = 0.01;
};

/// Rhythm/morphology template selected by the arrhythmia label.
struct BeatPattern {
  std::string name;
  double rr_irregularity = 0.0;     // relative s.d. of each beat interval
  bool p_wave = true;
  double pr_extra_s = 0.0;          // added to the P-to-R distance
  double qrs_width_scale = 1.0;
  double s_amplitude_scale = 1.0;
  std::size_t drop_qrs_every = 0;   // every k-th beat conducts no QRS/T
  std::size_t premature_every = 0;  // every k-th beat arrives early
  double premature_fraction = 0.65;
  bool premature_ventricular = false;  // early beats are wide without P
  double t_scale = 1.0;
  double st_shift_mv = 0.0;
  double voltage_scale = 1.0;
};

inline std::vector<BeatPattern> default_beat_patterns() {
  std::vector<BeatPattern> p(kArrhythmiaClasses);
  p[0].name = "sinus";
  p[1].name = "sinus_arrhythmia";
  p[1].rr_irregularity = 0.08;
  p[2].name = "atrial_fibrillation";
  p[2].rr_irregularity = 0.20;
  p[2].p_wave = false;
  p[3].name = "first_degree_block";
  p[3].pr_extra_s = 0.12;
  p[4].name = "second_degree_block";
  p[4].drop_qrs_every = 3;
  p[5].name = "left_bundle_branch_block";
  p[5].qrs_width_scale = 2.5;
  p[6].name = "right_bundle_branch_block";
  p[6].qrs_width_scale = 1.8;
  p[6].s_amplitude_scale = 2.0;
  p[7].name = "ventricular_bigeminy";
  p[7].premature_every = 2;
  p[7].premature_ventricular = true;
  p[8].name = "ventricular_trigeminy";
  p[8].premature_every = 3;
  p[8].premature_ventricular = true;
  p[9].name = "atrial_premature";
  p[9].premature_every = 4;
  p[10].name = "t_wave_inversion";
  p[10].t_scale = -1.0;
  p[11].name = "st_elevation";
  p[11].st_shift_mv = 0.2;
  p[12].name = "low_voltage";
  p[12].voltage_scale = 0.5;
  p[13].name = "junctional";
  p[13].p_wave = false;
  p[14].name = "other";
  p[14].rr_irregularity = 0.05;
  p[14].t_scale = 0.5;
  return p;
}

struct GeneratorConfig {
  std::uint64_t seed = 0;
  std::size_t n_records = 10000;
  std::size_t n_leads = 12;
  double sampling_rate_hz = 500.0;
  double duration_s = 10.0;
  double hr_min_bpm = 50.0;
  double hr_max_bpm = 110.0;

  WaveShape p_wave{0.15, -0.16, 0.022};
  WaveShape q_wave{-0.12, -0.035, 0.010};
  WaveShape r_wave{1.10, 0.0, 0.011};
  WaveShape s_wave{-0.28, 0.035, 0.011};
  WaveShape t_wave{0.30, 0.30, 0.045};

  // The T-wave centre offset is the QT-like interval; age is affine in it.
  double qt_min_s = 0.26;
  double qt_max_s = 0.40;
  double age_slope_per_s = 60.0 / 0.14;
  double age_intercept = 20.0 - 0.26 * (60.0 / 0.14);
  double age_noise_years = 3.0;

  double sex_p_scale = 1.8;
  double potassium_t_scale = 2.0;
  double amplitude_jitter = 0.10;
  double axis_jitter = 0.10;
  double noise_mv = 0.02;

  // Rows project the 3-d cardiac source onto leads I, II, III, aVR, aVL,
  // aVF, V1..V6.
  std::vector<std::array<double, 3>> lead_matrix{
      {1.0, 0.0, 0.0},   {0.5, 0.866, 0.0}, {-0.5, 0.866, 0.0}, {-0.866, -0.5, 0.0},
      {0.866, -0.5, 0.0}, {0.0, 1.0, 0.0},   {-0.3, 0.0, 1.0},   {0.0, 0.0, 1.0},
      {0.4, 0.1, 0.9},   {0.7, 0.2, 0.6},   {0.9, 0.2, 0.3},    {1.0, 0.2, 0.0}};
  std::array<double, 3> p_axis{0.5, 0.8, 0.2};
  std::array<double, 3> qrs_axis{0.55, 0.8, -0.3};
  std::array<double, 3> t_axis{0.5, 0.75, 0.2};

  double sex_prevalence = 0.5;
  double potassium_prevalence = 0.03;
  std::vector<double> class_prevalence = default_class_prevalence();
  std::vector<BeatPattern> patterns = default_beat_patterns();

  static std::vector<double> default_class_prevalence() {
    std::vector<double> v(kArrhythmiaClasses, 0.05);
    v[0] = 0.30;
    return v;
  }

  std::size_t n_samples() const {
    return static_cast<std::size_t>(std::llround(duration_s * sampling_rate_hz));
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("generator: " + m); };
    if (n_leads == 0 || lead_matrix.size() != n_leads) fail("lead matrix must have n_leads rows");
    if (!(sampling_rate_hz > 0.0) || !(duration_s > 0.0) || n_samples() < 2)
      fail("sampling rate and duration must give at least 2 samples");
    if (!(hr_min_bpm > 0.0) || hr_max_bpm < hr_min_bpm)
      fail("heart-rate range must be positive and ordered");
    if (!(qt_min_s > 0.0) || qt_max_s < qt_min_s) fail("QT range must be positive and ordered");
    for (double p : {sex_prevalence, potassium_prevalence})
      if (!(p >= 0.0 && p <= 1.0)) fail("prevalences must lie in [0,1]");
    if (class_prevalence.size() != static_cast<std::size_t>(kArrhythmiaClasses) ||
        patterns.size() != static_cast<std::size_t>(kArrhythmiaClasses))
      fail("exactly 15 arrhythmia classes required");
    double total = 0.0;
    for (double p : class_prevalence) {
      if (!(p >= 0.0 && p <= 1.0)) fail("class prevalences must lie in [0,1]");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) fail("class prevalences must sum to 1");
    if (noise_mv < 0.0 || amplitude_jitter < 0.0 || axis_jitter < 0.0)
      fail("noise and jitter must be non-negative");
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct SourceSignal {
  std::vector<std::array<double, 3>> s;  // per sample, 3-d source
  double fs;

  void add(const WaveShape& w, double beat_time, const std::array<double, 3>& axis) {
    if (w.amplitude == 0.0) return;
    const double c = beat_time + w.center_s;
    const double lo = std::ceil((c - 5.0 * w.width_s) * fs);
    const double hi = std::floor((c + 5.0 * w.width_s) * fs);
    const auto n = static_cast<double>(s.size());
    const double inv = 1.0 / (2.0 * w.width_s * w.width_s);
    for (double k = std::max(lo, 0.0); k <= std::min(hi, n - 1.0); k += 1.0) {
      const double dt = k / fs - c;
      const double v = w.amplitude * std::exp(-dt * dt * inv);
      auto& out = s[static_cast<std::size_t>(k)];
      for (int d = 0; d < 3; ++d) out[d] += v * axis[d];
    }
  }
};

}  // namespace detail

/// Seed for record `index`; records are independent given this value.
inline std::uint64_t record_seed(std::uint64_t seed, std::size_t index) {
  return detail::splitmix64(seed ^ detail::splitmix64(static_cast<std::uint64_t>(index) + 1));
}

/// Draws record `index` of the dataset defined by `cfg`. Pure in (cfg, index).
inline LabeledRecord generate_record(const GeneratorConfig& cfg, std::size_t index) {
  std::mt19937_64 rng(record_seed(cfg.seed, index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * unit(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  LabeledRecord out;
  LabelSet& lab = out.labels;
  const double hr = uniform(cfg.hr_min_bpm, cfg.hr_max_bpm);
  lab.rr_ms = 60000.0 / hr;
  const double qt = uniform(cfg.qt_min_s, cfg.qt_max_s);
  lab.age_years = std::clamp(cfg.age_intercept + cfg.age_slope_per_s * qt +
                                 uniform(-cfg.age_noise_years, cfg.age_noise_years),
                             0.0, 110.0);
  lab.sex = unit(rng) < cfg.sex_prevalence ? 1 : 0;
  lab.potassium_abnormal = unit(rng) < cfg.potassium_prevalence ? 1 : 0;
  {
    std::discrete_distribution<int> cls(cfg.class_prevalence.begin(), cfg.class_prevalence.end());
    lab.arrhythmia_class = cls(rng);
  }
  const BeatPattern& pat = cfg.patterns[static_cast<std::size_t>(lab.arrhythmia_class)];

  auto jitter = [&](double base) { return base * (1.0 + uniform(-1.0, 1.0) * cfg.amplitude_jitter); };
  auto jitter_axis = [&](std::array<double, 3> a) {
    for (double& v : a) v += uniform(-1.0, 1.0) * cfg.axis_jitter;
    return a;
  };
  const double vs = pat.voltage_scale;
  WaveShape p = cfg.p_wave, q = cfg.q_wave, r = cfg.r_wave, s = cfg.s_wave, t = cfg.t_wave;
  p.amplitude = jitter(p.amplitude) * vs * (lab.sex == 1 ? cfg.sex_p_scale : 1.0);
  p.center_s -= pat.pr_extra_s;
  q.amplitude = jitter(q.amplitude) * vs;
  r.amplitude = jitter(r.amplitude) * vs;
  s.amplitude = jitter(s.amplitude) * vs * pat.s_amplitude_scale;
  t.amplitude = jitter(t.amplitude) * vs * pat.t_scale *
                (lab.potassium_abnormal == 1 ? cfg.potassium_t_scale : 1.0);
  t.center_s = qt;
  for (WaveShape* w : {&q, &r, &s}) {
    w->width_s *= pat.qrs_width_scale;
    w->center_s *= pat.qrs_width_scale;
  }
  const WaveShape st{pat.st_shift_mv * vs, 0.5 * (s.center_s + qt), 0.25 * (qt - s.center_s)};
  const auto p_axis = jitter_axis(cfg.p_axis);
  const auto qrs_axis = jitter_axis(cfg.qrs_axis);
  const auto t_axis = jitter_axis(cfg.t_axis);

  const std::size_t n = cfg.n_samples();
  detail::SourceSignal src{std::vector<std::array<double, 3>>(n, {0.0, 0.0, 0.0}),
                           cfg.sampling_rate_hz};
  const double rr = 60.0 / hr;
  const std::size_t period =
      std::max<std::size_t>({pat.premature_every, pat.drop_qrs_every, std::size_t{1}});
  std::size_t k = static_cast<std::size_t>(unit(rng) * static_cast<double>(period));
  auto is_premature = [&](std::size_t b) {
    return pat.premature_every > 0 && b % pat.premature_every == pat.premature_every - 1;
  };
  double beat = uniform(0.0, rr) - rr;
  while (beat < cfg.duration_s + rr) {
    const bool premature = is_premature(k);
    const bool dropped = pat.drop_qrs_every > 0 && k % pat.drop_qrs_every == pat.drop_qrs_every - 1;
    const bool ectopic = premature && pat.premature_ventricular;
    if (pat.p_wave && !ectopic) src.add(p, beat, p_axis);
    if (!dropped) {
      if (ectopic) {
        WaveShape wq = q, wr = r, ws = s;
        for (WaveShape* w : {&wq, &wr, &ws}) {
          w->width_s *= 2.2;
          w->center_s *= 2.2;
        }
        wr.amplitude *= 1.3;
        src.add(wq, beat, qrs_axis);
        src.add(wr, beat, qrs_axis);
        src.add(ws, beat, qrs_axis);
        WaveShape wt = t;
        wt.amplitude = -std::abs(t.amplitude);
        src.add(wt, beat, t_axis);
      } else {
        src.add(q, beat, qrs_axis);
        src.add(r, beat, qrs_axis);
        src.add(s, beat, qrs_axis);
        src.add(t, beat, t_axis);
        src.add(st, beat, t_axis);
      }
    }
    double interval;
    if (is_premature(k + 1)) {
      interval = rr * pat.premature_fraction;
    } else if (premature) {
      interval = rr * (2.0 - pat.premature_fraction);
    } else {
      interval = rr * std::clamp(1.0 + pat.rr_irregularity * gauss(rng), 0.6, 1.4);
    }
    beat += interval;
    ++k;
  }

  EcgRecord& rec = out.record;
  rec.sampling_rate_hz = cfg.sampling_rate_hz;
  rec.record_id = "rec" + std::to_string(cfg.seed) + "_" + std::to_string(index);
  rec.leads = Tensor({cfg.n_leads, n});
  for (std::size_t c = 0; c < cfg.n_leads; ++c) {
    const auto& m = cfg.lead_matrix[c];
    double* row = &rec.leads[c * n];
    for (std::size_t i = 0; i < n; ++i) {
      const auto& v = src.s[i];
      row[i] = m[0] * v[0] + m[1] * v[1] + m[2] * v[2];
    }
  }
  if (cfg.noise_mv > 0.0) {
    for (double& v : rec.leads.data()) v += cfg.noise_mv * gauss(rng);
  }
  return out;
}

/// The whole dataset in memory. Large configurations should stream
/// generate_record() instead.
inline std::vector<LabeledRecord> generate(const GeneratorConfig& cfg) {
  cfg.validate();
  std::vector<LabeledRecord> out;
  out.reserve(cfg.n_records);
  for (std::size_t i = 0; i < cfg.n_records; ++i) out.push_back(generate_record(cfg, i));
  return out;
}

}  // namespace enecg::signal
