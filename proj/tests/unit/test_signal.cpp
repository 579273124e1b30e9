#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "enecg/error.hpp"
#include "enecg/signal/generator.hpp"
#include "enecg/signal/record_io.hpp"
#include "enecg/signal/transforms.hpp"

using namespace enecg;
using namespace enecg::signal;

namespace {

GeneratorConfig small_config(std::size_t n = 20) {
  GeneratorConfig c;
  c.seed = 3;
  c.n_records = n;
  c.duration_s = 2.0;
  return c;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Local maxima above half the global maximum, at least 0.2 s apart.
std::vector<std::size_t> threshold_peaks(const double* x, std::size_t n, double fs) {
  double mx = 0.0;
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[i]);
  std::vector<std::size_t> peaks;
  const auto refractory = static_cast<std::size_t>(0.2 * fs);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (x[i] > 0.5 * mx && x[i] >= x[i - 1] && x[i] > x[i + 1]) {
      if (!peaks.empty() && i - peaks.back() < refractory) continue;
      peaks.push_back(i);
    }
  }
  return peaks;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("enecg_signal_" + name);
}

}  // namespace

TEST(Generator, SixtyBeatsPerMinuteGivesOneSecondRr) {
  GeneratorConfig c = small_config(3);
  c.hr_min_bpm = c.hr_max_bpm = 60.0;
  for (const auto& r : generate(c)) EXPECT_DOUBLE_EQ(r.labels.rr_ms, 1000.0);
}

TEST(Generator, ShapeAndFiniteSamples) {
  const auto recs = generate(small_config(4));
  ASSERT_EQ(recs.size(), 4u);
  for (const auto& r : recs) {
    EXPECT_EQ(r.record.n_leads(), 12u);
    EXPECT_EQ(r.record.length(), 1000u);
    EXPECT_TRUE(r.record.leads.all_finite());
    EXPECT_LT(r.labels.arrhythmia_class, kArrhythmiaClasses);
    EXPECT_GE(r.labels.age_years, 0.0);
    EXPECT_LE(r.labels.age_years, 110.0);
  }
}

TEST(Generator, SameSeedIsBitwiseIdentical) {
  const auto a = generate(small_config(5));
  const auto b = generate(small_config(5));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].record.leads, b[i].record.leads);
    EXPECT_EQ(a[i].labels, b[i].labels);
  }
  GeneratorConfig other = small_config(5);
  other.seed = 4;
  EXPECT_FALSE(generate(other)[0].record.leads == a[0].record.leads);
}

TEST(Generator, NoiselessSinusPeaksAreRrApart) {
  GeneratorConfig c = small_config(10);
  c.duration_s = 6.0;
  c.noise_mv = 0.0;
  c.class_prevalence.assign(kArrhythmiaClasses, 0.0);
  c.class_prevalence[0] = 1.0;
  for (const auto& r : generate(c)) {
    const std::size_t n = r.record.length();
    const double* lead2 = &r.record.leads[1 * n];
    const auto peaks = threshold_peaks(lead2, n, c.sampling_rate_hz);
    ASSERT_GE(peaks.size(), 3u);
    const double expected = r.labels.rr_ms / 1000.0 * c.sampling_rate_hz;
    for (std::size_t i = 1; i < peaks.size(); ++i)
      EXPECT_LE(std::abs(static_cast<double>(peaks[i] - peaks[i - 1]) - expected), 1.0);
  }
}

TEST(Generator, PotassiumPrevalenceOverTenThousandRecords) {
  // Labels are drawn before the waveform, so a short duration leaves them unchanged.
  GeneratorConfig c = small_config(10000);
  c.duration_s = 0.2;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < c.n_records; ++i) pos += generate_record(c, i).labels.potassium_abnormal;
  EXPECT_NEAR(static_cast<double>(pos) / 10000.0, 0.03, 0.005);
}

TEST(Generator, LabelPrevalencesWithinBinomialThreeSigma) {
  GeneratorConfig c = small_config(4000);
  c.duration_s = 0.2;
  std::vector<double> classes(kArrhythmiaClasses, 0.0);
  double sex = 0.0;
  for (std::size_t i = 0; i < c.n_records; ++i) {
    const auto l = generate_record(c, i).labels;
    sex += l.sex;
    classes[static_cast<std::size_t>(l.arrhythmia_class)] += 1.0;
  }
  const double n = static_cast<double>(c.n_records);
  auto within = [n](double count, double p) {
    return std::abs(count / n - p) <= 3.0 * std::sqrt(p * (1.0 - p) / n);
  };
  EXPECT_TRUE(within(sex, c.sex_prevalence));
  for (std::size_t k = 0; k < classes.size(); ++k)
    EXPECT_TRUE(within(classes[k], c.class_prevalence[k])) << "class " << k;
}

TEST(Generator, InvalidConfigIsConfigError) {
  GeneratorConfig c = small_config();
  c.hr_min_bpm = 120.0;
  c.hr_max_bpm = 60.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.potassium_prevalence = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Downsample, WindowsOfTen) {
  Tensor x({12, 5000}, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i % 5000);
  const Tensor y = downsample(x, 500);
  EXPECT_EQ(y.shape(), (Shape{12, 500}));
  EXPECT_DOUBLE_EQ(y[0], 4.5);
  EXPECT_DOUBLE_EQ(y[1], 14.5);
}

TEST(Downsample, FullLengthIsIdentity) {
  Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(downsample(x, 3), x);
}

TEST(Downsample, ConstantSignalStaysConstant) {
  const Tensor y = downsample(Tensor({12, 1000}, 0.7), 333);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.7);
  EXPECT_EQ(y.dim(1), 333u);
}

TEST(Downsample, Errors) {
  Tensor x({2, 10});
  EXPECT_THROW(downsample(x, 11), DimensionError);
  EXPECT_THROW(downsample(x, 0), UsageError);
}

TEST(LeadsSample, SelectsRowsInOrder) {
  Tensor x({12, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i / 4);
  EXPECT_EQ(leads_sample(x, iota(12)), x);
  const std::vector<std::size_t> two{1};
  const Tensor y = leads_sample(x, two);
  EXPECT_EQ(y.shape(), (Shape{1, 4}));
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  const std::vector<std::size_t> order{3, 1};
  const Tensor z = leads_sample(x, order);
  EXPECT_DOUBLE_EQ(z[0], 3.0);
  EXPECT_DOUBLE_EQ(z[4], 1.0);
}

TEST(LeadsSample, Errors) {
  Tensor x({12, 4});
  const std::vector<std::size_t> out_of_range{12};
  const std::vector<std::size_t> empty;
  const std::vector<std::size_t> dup{1, 1};
  EXPECT_THROW(leads_sample(x, out_of_range), DimensionError);
  EXPECT_THROW(leads_sample(x, empty), UsageError);
  EXPECT_THROW(leads_sample(x, dup), UsageError);
}

TEST(Transforms, DownsampleCommutesWithLeadSelection) {
  const auto recs = generate(small_config(5));
  const std::vector<std::size_t> idx{7, 0, 4};
  for (const auto& r : recs) {
    for (std::size_t target : {1000u, 333u, 250u, 7u}) {
      EXPECT_EQ(leads_sample(downsample(r.record.leads, target), idx),
                downsample(leads_sample(r.record.leads, idx), target));
    }
  }
}

TEST(RecordIo, RoundTripIsValueExact) {
  const auto recs = generate(small_config(100));
  const auto path = temp_file("roundtrip.ecg");
  save_records(path, recs);
  const auto back = load_records(path);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].labels, recs[i].labels);
    EXPECT_EQ(back[i].record.leads, recs[i].record.leads);
    EXPECT_EQ(back[i].record.record_id, recs[i].record.record_id);
  }
  std::filesystem::remove(path);
}

TEST(RecordIo, ManifestListsFilesRelativeToItself) {
  const auto dir = std::filesystem::temp_directory_path() / "enecg_signal_manifest";
  std::filesystem::create_directories(dir);
  const auto recs = generate(small_config(4));
  save_records(dir / "a.ecg", std::span(recs).subspan(0, 2));
  save_records(dir / "b.ecg", std::span(recs).subspan(2, 2));
  const std::vector<std::filesystem::path> files{"a.ecg", "b.ecg"};
  save_manifest(dir / "set.manifest", files);
  const auto back = load_dataset(dir / "set.manifest");
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back[3].record.leads, recs[3].record.leads);
  std::filesystem::remove_all(dir);
}

TEST(RecordIo, EmptyFileIsParseError) {
  std::istringstream in("");
  EXPECT_THROW(read_records(in), ParseError);
}

TEST(RecordIo, MissingRowIsParseErrorNamingRowCount) {
  GeneratorConfig c = small_config(1);
  c.duration_s = 0.02;
  const auto recs = generate(c);
  std::ostringstream os;
  write_record(os, recs[0]);
  std::string text = os.str();
  // Drop the last signal row (line 13 of 14).
  std::vector<std::string> lines;
  std::istringstream split(text);
  for (std::string l; std::getline(split, l);) lines.push_back(l);
  lines.erase(lines.begin() + 12);
  std::string broken;
  for (const auto& l : lines) broken += l + "\n";
  std::istringstream in(broken);
  try {
    read_records(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("11"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("line"), std::string::npos) << e.what();
  }
}

TEST(RecordIo, UnreadableFloatIsParseError) {
  std::istringstream in("ENECG1 r 1 2 500\n1.0,abc\n1000,40,0,0,0\n");
  EXPECT_THROW(read_records(in), ParseError);
}

TEST(RecordIo, MalformedHeaderIsParseError) {
  std::istringstream in("ECG r 1 2 500\n1.0,2.0\n1000,40,0,0,0\n");
  EXPECT_THROW(read_records(in), ParseError);
}
