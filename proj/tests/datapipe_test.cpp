#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "mmtfd/datapipe.hpp"
#include "mmtfd/errors.hpp"
#include "mmtfd/spectral.hpp"

using namespace mmtfd;
namespace fs = std::filesystem;

namespace {

SignalRecord ramp_record(std::size_t n, int label = 0) {
  SignalRecord r;
  r.samples.resize(n);
  std::iota(r.samples.begin(), r.samples.end(), 0.0);
  r.label = label;
  return r;
}

WindowDataset labeled_windows(const std::vector<int>& per_class, std::size_t len = 8) {
  WindowDataset ds;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(3.0, 2.0);
  for (std::size_t c = 0; c < per_class.size(); ++c)
    for (int i = 0; i < per_class[c]; ++i) {
      Window w;
      w.label = static_cast<int>(c);
      w.signal.samples.resize(len);
      for (auto& v : w.signal.samples) v = g(rng);
      ds.windows.push_back(w);
    }
  return ds;
}

std::map<int, int> class_counts(const WindowDataset& ds) {
  std::map<int, int> m;
  for (const auto& w : ds.windows) ++m[w.label];
  return m;
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("mmtfd_datapipe_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Overlap, Examples) {
  EXPECT_EQ(overlap_sample(ramp_record(2048), 2048, 850).size(), 1u);
  EXPECT_EQ(overlap_sample(ramp_record(2898), 2048, 850).size(), 2u);
  const auto ds = overlap_sample(ramp_record(183098, 2), 2048, 850);
  ASSERT_EQ(ds.size(), 214u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(ds.windows[i].offset, i * 850);
    EXPECT_EQ(ds.windows[i].signal.samples.front(), static_cast<double>(i * 850));
    EXPECT_EQ(ds.windows[i].signal.size(), 2048u);
    EXPECT_EQ(ds.windows[i].label, 2);
  }
}

TEST(Overlap, CountMatchesEnumeration) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t w = 1 + rng() % 64, s = 1 + rng() % 40, t = w + rng() % 500;
    std::size_t enumerated = 0;
    for (std::size_t off = 0; off + w <= t; off += s) ++enumerated;
    ASSERT_EQ(overlap_count(t, w, s), enumerated);
    ASSERT_EQ(overlap_sample(ramp_record(t), w, s).size(), enumerated);
  }
}

TEST(Overlap, Errors) {
  EXPECT_THROW(overlap_sample(ramp_record(100), 200, 10), CapacityError);
  EXPECT_THROW(overlap_sample(ramp_record(100), 10, 0), ContractError);
}

TEST(Split, PaperCountsAndPartition) {
  const auto ds = labeled_windows({214, 214, 214});
  const auto [train, test] = split(ds, 0.7, 3);
  for (auto [c, n] : class_counts(train)) EXPECT_EQ(n, 150) << c;
  for (auto [c, n] : class_counts(test)) EXPECT_EQ(n, 64) << c;
  std::multiset<double> all, parts;
  for (const auto& w : ds.windows) all.insert(w.signal.samples[0]);
  for (const auto& w : train.windows) parts.insert(w.signal.samples[0]);
  for (const auto& w : test.windows) parts.insert(w.signal.samples[0]);
  EXPECT_EQ(all, parts);
}

TEST(Split, DeterministicAndValidated) {
  const auto ds = labeled_windows({20, 30});
  const auto a = split(ds, 0.6, 1), b = split(ds, 0.6, 1);
  ASSERT_EQ(a.first.size(), b.first.size());
  for (std::size_t i = 0; i < a.first.size(); ++i)
    EXPECT_EQ(a.first.windows[i].signal.samples, b.first.windows[i].signal.samples);
  EXPECT_THROW(split(ds, 1.0, 1), ContractError);
  EXPECT_THROW(split(ds, 0.0, 1), ContractError);
  EXPECT_THROW(split(labeled_windows({5, 0, 5}), 0.5, 1), CapacityError);
}

TEST(Normalize, TrainStatsMeanZeroStdOneAndRoundTrip) {
  const auto [train, test] = split(labeled_windows({40, 40}, 16), 0.7, 2);
  const auto before = test;
  auto out = normalize(train, test);
  double sum = 0, sq = 0, n = 0;
  for (const auto& w : out.train.windows)
    for (double v : w.signal.samples) {
      sum += v;
      sq += v * v;
      ++n;
    }
  EXPECT_NEAR(sum / n, 0.0, 1e-9);
  EXPECT_NEAR(std::sqrt(sq / n - (sum / n) * (sum / n)), 1.0, 1e-9);
  invert_norm(out.test, out.stats);
  for (std::size_t i = 0; i < before.size(); ++i)
    for (std::size_t j = 0; j < 16; ++j)
      EXPECT_NEAR(out.test.windows[i].signal.samples[j], before.windows[i].signal.samples[j], 1e-9);
}

TEST(Normalize, ConstantDataFlagsStd) {
  auto ds = labeled_windows({3});
  for (auto& w : ds.windows) std::fill(w.signal.samples.begin(), w.signal.samples.end(), 4.0);
  const auto out = normalize(ds, {});
  EXPECT_TRUE(out.stats.std_substituted);
  for (const auto& w : out.train.windows)
    for (double v : w.signal.samples) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, PerWindowMode) {
  auto out = normalize(labeled_windows({4}, 32), {}, NormMode::per_window);
  for (const auto& w : out.train.windows) {
    const double m = std::accumulate(w.signal.samples.begin(), w.signal.samples.end(), 0.0) / 32;
    EXPECT_NEAR(m, 0.0, 1e-12);
  }
  EXPECT_THROW(invert_norm(out.train, out.stats), ContractError);
}

TEST(LabelBudget, StratifiedWithMinimumOne) {
  const auto ds = labeled_windows({150, 150, 150});
  const auto one = label_budget(ds, 0.01, 5);
  std::map<int, int> per;
  for (int i : one) ++per[ds.windows[i].label];
  for (int c = 0; c < 3; ++c) EXPECT_EQ(per[c], 2);  // round(1.5)
  const auto tiny = label_budget(labeled_windows({10, 10}), 0.01, 5);
  EXPECT_EQ(tiny.size(), 2u);
  EXPECT_EQ(label_budget(ds, 1.0, 5).size(), 450u);
  EXPECT_EQ(label_budget(ds, 0.1, 5), label_budget(ds, 0.1, 5));
  EXPECT_THROW(label_budget(ds, 0.0, 5), ContractError);
}

TEST(Corrupt, IdentityCountAndVariance) {
  auto ds = labeled_windows({30, 30}, 2048);
  const auto same = corrupt(ds, 0.0, 10.0, 0.0, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(same.windows[i].signal.samples, ds.windows[i].signal.samples);

  CorruptionReport rep;
  const auto noisy = corrupt(ds, 0.5, 10.0, 0.0, 1, &rep);
  EXPECT_EQ(rep.noisy.size(), 30u);
  // Sample variance of 2047 degrees of freedom has relative std sqrt(2/2047), about
  // 3.1%; each window must sit within 5 of those, the pooled estimate within [9.5, 10.5].
  std::size_t altered = 0;
  double pooled = 0.0, pooled_n = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& a = ds.windows[i].signal.samples;
    const auto& b = noisy.windows[i].signal.samples;
    if (a == b) continue;
    ++altered;
    double m = 0, v = 0;
    for (std::size_t t = 0; t < a.size(); ++t) m += (b[t] - a[t]) / a.size();
    for (std::size_t t = 0; t < a.size(); ++t) v += (b[t] - a[t] - m) * (b[t] - a[t] - m);
    pooled += v;
    pooled_n += a.size() - 1;
    v /= a.size() - 1;
    EXPECT_NEAR(v, 10.0, 5 * 10.0 * std::sqrt(2.0 / 2047.0));
  }
  EXPECT_GE(pooled / pooled_n, 9.5);
  EXPECT_LE(pooled / pooled_n, 10.5);
  EXPECT_EQ(altered, 30u);

  // Masking touches every window but keeps lengths.
  const auto masked = corrupt(ds, 0.0, 10.0, 0.05, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(masked.windows[i].signal.size(), 2048u);
    EXPECT_NE(masked.windows[i].signal.samples, ds.windows[i].signal.samples);
  }
  EXPECT_THROW(corrupt(ds, 1.5, 1.0, 0.0, 1), ContractError);
}

TEST(Synth, PureToneHitsItsBin) {
  SynthSpec spec;
  spec.classes = {{"a", 375.0, {1.0}, 0, 0}, {"b", 750.0, {1.0}, 0, 0}};
  spec.shaft_amplitude = 0.0;
  spec.noise_sigma = 0.0;
  spec.record_length = 2048;
  spec.sample_rate = 6000.0;
  const auto recs = synth_generate(spec, 1, 3);
  ASSERT_EQ(recs.size(), 2u);
  for (std::size_t c = 0; c < 2; ++c) {
    const auto mag = magnitude(fft(Signal{recs[c].samples, 6000.0}));
    const auto peak = std::max_element(mag.begin(), mag.begin() + 1024) - mag.begin();
    const double bin = spec.classes[c].frequency_hz * 2048 / 6000.0;
    EXPECT_EQ(peak, std::lround(bin));
  }
}

TEST(Synth, ClassSpectraDifferAtTheirFrequencies) {
  auto spec = SynthSpec::rotor_default();
  spec.record_length = 6000;
  const auto recs = synth_generate(spec, 2, 1);
  std::vector<std::vector<double>> mean(3, std::vector<double>(6000, 0.0));
  for (const auto& r : recs) {
    const auto mag = magnitude(fft(Signal{r.samples, 6000.0}));
    for (std::size_t k = 0; k < mag.size(); ++k) mean[r.label][k] += mag[k] / 2;
  }
  // 1 Hz bins: class c dominates the others at its own characteristic frequency.
  for (std::size_t c = 0; c < 3; ++c) {
    const auto k = static_cast<std::size_t>(spec.classes[c].frequency_hz);
    for (std::size_t o = 0; o < 3; ++o)
      if (o != c) EXPECT_GT(mean[c][k], 5 * mean[o][k]) << c << " vs " << o;
  }
}

TEST(Synth, DeterministicAndValidated) {
  auto spec = SynthSpec::rotor_default();
  spec.record_length = 3000;
  EXPECT_EQ(synth_generate(spec, 1, 4)[1].samples, synth_generate(spec, 1, 4)[1].samples);
  EXPECT_NE(synth_generate(spec, 1, 4)[1].samples, synth_generate(spec, 1, 5)[1].samples);
  auto bad = spec;
  bad.classes[0].frequency_hz = 2900;  // third harmonic above Nyquist
  EXPECT_THROW(synth_generate(bad, 1, 0), ContractError);
  bad = spec;
  bad.classes[1].frequency_hz = bad.classes[0].frequency_hz;
  EXPECT_THROW(bad.validate(), ContractError);
}

TEST(Synth, DefaultRecordsGive214WindowsPerClass) {
  const auto recs = synth_generate(SynthSpec::rotor_default(), 1, 0);
  const auto ds = window_records(recs, 2048, 850);
  for (auto [c, n] : class_counts(ds)) EXPECT_EQ(n, 214) << c;
}

TEST(Files, ManifestRoundTrip) {
  const auto dir = temp_dir("manifest");
  std::vector<SignalRecord> recs{ramp_record(10, 0), ramp_record(7, 1)};
  recs[1].samples[3] = -0.25;
  write_dataset(recs, dir);
  const auto back = load_manifest(dir / "manifest.json");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(back[r].label, recs[r].label);
    EXPECT_EQ(back[r].samples, recs[r].samples);  // exactly representable in float32
  }
  std::ofstream(dir / "a.csv") << "1.5\n-2\n\n3e-1\n";
  std::ofstream(dir / "m2.json") << R"({"records":[{"path":"a.csv","label":2,"format":"csv","sample_rate":100}]})";
  const auto csv = load_manifest(dir / "m2.json");
  EXPECT_EQ(csv[0].samples, (std::vector<double>{1.5, -2, 0.3}));
  EXPECT_EQ(csv[0].sample_rate, 100.0);
  std::ofstream(dir / "m3.json") << R"({"records":[{"path":"a.csv","format":"wav"}]})";
  EXPECT_THROW(load_manifest(dir / "m3.json"), ConfigError);
  EXPECT_THROW(load_manifest(dir / "missing.json"), ConfigError);
  fs::remove_all(dir);
}
