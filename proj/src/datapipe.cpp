#include "mmtfd/datapipe.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include <json.hpp>

#include "mmtfd/augment.hpp"
#include "mmtfd/errors.hpp"
#include "mmtfd/rng.hpp"

namespace mmtfd {

namespace fs = std::filesystem;

std::vector<int> WindowDataset::labels() const {
  std::vector<int> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(w.label);
  return out;
}

std::size_t WindowDataset::n_classes() const {
  int hi = -1;
  for (const auto& w : windows) hi = std::max(hi, w.label);
  return static_cast<std::size_t>(hi + 1);
}

std::size_t overlap_count(std::size_t length, std::size_t window, std::size_t step) {
  if (step == 0) throw ContractError("overlap_sample: step must be >= 1");
  if (window == 0) throw ContractError("overlap_sample: window must be >= 1");
  if (length < window) {
    throw CapacityError("overlap_sample: record of " + std::to_string(length) +
                        " samples is shorter than the window of " + std::to_string(window));
  }
  return (length - window) / step + 1;
}

WindowDataset overlap_sample(const SignalRecord& rec, std::size_t window, std::size_t step,
                             int record_index) {
  const std::size_t count = overlap_count(rec.samples.size(), window, step);
  WindowDataset ds;
  ds.windows.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t off = i * step;
    Window w;
    w.signal.samples.assign(rec.samples.begin() + static_cast<std::ptrdiff_t>(off),
                            rec.samples.begin() + static_cast<std::ptrdiff_t>(off + window));
    w.signal.sample_rate = rec.sample_rate;
    w.label = rec.label;
    w.record = record_index;
    w.offset = off;
    ds.windows.push_back(std::move(w));
  }
  return ds;
}

WindowDataset window_records(const std::vector<SignalRecord>& records, std::size_t window,
                             std::size_t step) {
  WindowDataset all;
  for (std::size_t r = 0; r < records.size(); ++r) {
    auto part = overlap_sample(records[r], window, step, static_cast<int>(r));
    all.windows.insert(all.windows.end(), std::make_move_iterator(part.windows.begin()),
                       std::make_move_iterator(part.windows.end()));
  }
  return all;
}

std::pair<WindowDataset, WindowDataset> split(const WindowDataset& ds, double ratio,
                                              std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("split: ratio must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.windows[i].label].push_back(i);
  for (int c = 0; c < static_cast<int>(ds.n_classes()); ++c) {
    if (by_class[c].empty()) {
      throw CapacityError("split: class " + std::to_string(c) + " has no windows");
    }
  }
  std::vector<std::size_t> train_idx, test_idx;
  for (auto& [cls, idx] : by_class) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(cls + 1));
    std::vector<std::size_t> shuffled = idx;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
    train_idx.insert(train_idx.end(), shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  WindowDataset train, test;
  train.tag = SplitTag::train;
  test.tag = SplitTag::test;
  for (auto i : train_idx) train.windows.push_back(ds.windows[i]);
  for (auto i : test_idx) test.windows.push_back(ds.windows[i]);
  return {std::move(train), std::move(test)};
}

NormStats compute_norm_stats(const WindowDataset& ds, NormMode mode) {
  if (ds.windows.empty()) throw ContractError("normalize: empty dataset");
  NormStats st;
  st.mode = mode;
  if (mode == NormMode::per_window) return st;
  double sum = 0.0, count = 0.0;
  for (const auto& w : ds.windows) {
    sum += std::accumulate(w.signal.samples.begin(), w.signal.samples.end(), 0.0);
    count += static_cast<double>(w.signal.size());
  }
  st.mean = sum / count;
  double acc = 0.0;
  for (const auto& w : ds.windows)
    for (double v : w.signal.samples) acc += (v - st.mean) * (v - st.mean);
  st.stdev = std::sqrt(acc / count);
  if (!(st.stdev > 0.0)) {
    st.stdev = 1.0;
    st.std_substituted = true;
  }
  return st;
}

void apply_norm(WindowDataset& ds, const NormStats& stats) {
  for (auto& w : ds.windows) {
    auto& s = w.signal.samples;
    double mu = stats.mean, sd = stats.stdev;
    if (stats.mode == NormMode::per_window) {
      mu = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
      sd = sample_std(s);
      if (!(sd > 0.0)) sd = 1.0;
    }
    for (auto& v : s) v = (v - mu) / sd;
  }
}

void invert_norm(WindowDataset& ds, const NormStats& stats) {
  if (stats.mode == NormMode::per_window) {
    throw ContractError("invert_norm: per-window normalization does not keep the statistics");
  }
  for (auto& w : ds.windows)
    for (auto& v : w.signal.samples) v = v * stats.stdev + stats.mean;
}

NormalizedSplit normalize(WindowDataset train, WindowDataset test, NormMode mode) {
  NormalizedSplit out;
  out.stats = compute_norm_stats(train, mode);
  apply_norm(train, out.stats);
  if (!test.windows.empty()) apply_norm(test, out.stats);
  out.train = std::move(train);
  out.test = std::move(test);
  return out;
}

std::vector<int> label_budget(const WindowDataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ContractError("label_budget: fraction must lie in (0, 1]");
  }
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.windows[i].label != kUnlabeled) by_class[ds.windows[i].label].push_back(static_cast<int>(i));
  }
  std::vector<int> chosen;
  for (auto& [cls, idx] : by_class) {
    Rng rng = make_rng(seed, 0x1abe1 + static_cast<std::uint64_t>(cls));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto want = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))));
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(want, idx.size())));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

WindowDataset corrupt(const WindowDataset& ds, double noise_fraction, double variance,
                      double mask_fraction, std::uint64_t seed, CorruptionReport* report) {
  if (noise_fraction < 0.0 || noise_fraction > 1.0 || mask_fraction < 0.0 ||
      mask_fraction > 1.0) {
    throw ContractError("corrupt: fractions must lie in [0, 1]");
  }
  if (variance < 0.0) throw ContractError("corrupt: variance must be >= 0");
  WindowDataset out = ds;
  const std::size_t n = ds.size();
  const auto n_noisy = static_cast<std::size_t>(std::floor(noise_fraction * static_cast<double>(n)));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0xc0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> noisy(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_noisy));
  std::sort(noisy.begin(), noisy.end());
  const double sigma = std::sqrt(variance);
  for (int i : noisy) {
    out.windows[static_cast<std::size_t>(i)].signal =
        time_noise(out.windows[static_cast<std::size_t>(i)].signal, sigma,
                   mix_seed(seed, 0x100000 + static_cast<std::uint64_t>(i)));
  }
  if (mask_fraction > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      out.windows[i].signal = freq_mask(out.windows[i].signal, mask_fraction,
                                        mix_seed(seed, 0x200000 + i));
    }
  }
  if (report) report->noisy = std::move(noisy);
  return out;
}

// ---- synthetic rotor generator ------------------------------------------------

void SynthSpec::validate() const {
  if (classes.size() < 2) throw ContractError("synth: at least two classes are required");
  if (!(sample_rate > 0.0)) throw ContractError("synth: sample_rate must be positive");
  if (record_length == 0) throw ContractError("synth: record_length must be positive");
  if (noise_sigma < 0.0) throw ContractError("synth: noise_sigma must be >= 0");
  const double nyquist = sample_rate / 2.0;
  std::set<double> seen;
  for (const auto& c : classes) {
    if (!(c.frequency_hz > 0.0)) throw ContractError("synth: class frequencies must be positive");
    if (!seen.insert(c.frequency_hz).second) {
      throw ContractError("synth: class frequencies must be distinct");
    }
    const double top = c.frequency_hz * static_cast<double>(std::max<std::size_t>(1, c.harmonics.size()));
    if (top >= nyquist) {
      throw ContractError("synth: class '" + c.name + "' harmonic at " + std::to_string(top) +
                          " Hz violates Nyquist (" + std::to_string(nyquist) + " Hz)");
    }
    if (c.impulse_rate_hz < 0.0 || c.impulse_rate_hz >= nyquist) {
      throw ContractError("synth: impulse rate out of range for class '" + c.name + "'");
    }
  }
  if (shaft_hz >= nyquist || resonance_hz >= nyquist) {
    throw ContractError("synth: shaft or resonance frequency violates Nyquist");
  }
}

SynthSpec SynthSpec::rotor_default() {
  SynthSpec s;
  s.classes = {
      {"normal", 37.0, {1.0, 0.4, 0.2}, 0.0, 0.0},
      {"imbalance_disk1", 61.0, {1.0, 0.4, 0.2}, 9.0, 1.5},
      {"imbalance_disk2", 89.0, {1.0, 0.4, 0.2}, 13.0, 1.5},
  };
  return s;
}

std::vector<SignalRecord> synth_generate(const SynthSpec& spec, int records_per_class,
                                         std::uint64_t seed) {
  spec.validate();
  if (records_per_class < 1) throw ContractError("synth: records_per_class must be >= 1");
  const double two_pi = 2.0 * std::numbers::pi;
  const double dt = 1.0 / spec.sample_rate;
  std::vector<SignalRecord> out;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    const SynthClass& cls = spec.classes[c];
    for (int r = 0; r < records_per_class; ++r) {
      Rng rng = make_rng(seed, c * 1000003ULL + static_cast<std::uint64_t>(r));
      std::uniform_real_distribution<double> phase(0.0, two_pi);
      std::normal_distribution<double> gauss(0.0, 1.0);

      // Slow speed wander: two sub-hertz sinusoids with random phases.
      const double w1 = phase(rng), w2 = phase(rng);
      std::vector<double> harmonic_phase(cls.harmonics.size());
      for (auto& p : harmonic_phase) p = phase(rng);
      double shaft_phase = phase(rng);
      double carrier = 0.0;  // accumulated characteristic-frequency cycles (radians)
      double impulse_clock = std::uniform_real_distribution<double>(0.0, 1.0)(rng);

      SignalRecord rec;
      rec.sample_rate = spec.sample_rate;
      rec.label = static_cast<int>(c);
      rec.source = "synthetic:" + cls.name + "#" + std::to_string(r);
      rec.samples.assign(spec.record_length, 0.0);
      std::vector<std::size_t> impulses;

      for (std::size_t t = 0; t < spec.record_length; ++t) {
        const double time = static_cast<double>(t) * dt;
        const double speed =
            1.0 + spec.speed_jitter * (0.7 * std::sin(two_pi * 0.13 * time + w1) +
                                       0.3 * std::sin(two_pi * 0.41 * time + w2));
        carrier += two_pi * cls.frequency_hz * speed * dt;
        shaft_phase += two_pi * spec.shaft_hz * speed * dt;
        double v = spec.shaft_amplitude * std::sin(shaft_phase);
        for (std::size_t h = 0; h < cls.harmonics.size(); ++h) {
          v += cls.harmonics[h] * std::sin(static_cast<double>(h + 1) * carrier + harmonic_phase[h]);
        }
        v += spec.noise_sigma * gauss(rng);
        rec.samples[t] = v;
        if (cls.impulse_rate_hz > 0.0) {
          impulse_clock += cls.impulse_rate_hz * speed * dt;
          if (impulse_clock >= 1.0) {
            impulse_clock -= 1.0;
            impulses.push_back(t);
          }
        }
      }
      // Each impulse excites a decaying structural resonance.
      const auto ring = static_cast<std::size_t>(5.0 * spec.impulse_decay_s * spec.sample_rate);
      for (std::size_t start : impulses) {
        for (std::size_t k = 0; k < ring && start + k < spec.record_length; ++k) {
          const double tau = static_cast<double>(k) * dt;
          rec.samples[start + k] += cls.impulse_amplitude * std::exp(-tau / spec.impulse_decay_s) *
                                    std::sin(two_pi * spec.resonance_hz * tau);
        }
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

// ---- file formats -----------------------------------------------------------------

std::vector<double> read_f32le(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw CapacityError("cannot open record file " + file.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 4 != 0) {
    throw ContractError("record file " + file.string() + " is not a whole number of float32s");
  }
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) {
      bits = (bits << 8) | static_cast<unsigned char>(bytes[i * 4 + static_cast<std::size_t>(b)]);
    }
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return out;
}

void write_f32le(const std::vector<double>& samples, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw CapacityError("cannot write record file " + file.string());
  for (double v : samples) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    char b[4];
    for (int k = 0; k < 4; ++k) b[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
    out.write(b, 4);
  }
}

std::vector<double> read_csv_samples(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw CapacityError("cannot open record file " + file.string());
  std::vector<double> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(std::stod(line));
    } catch (const std::exception&) {
      throw ContractError("record file " + file.string() + ": bad sample '" + line + "'");
    }
  }
  return out;
}

std::vector<SignalRecord> load_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw ConfigError("cannot open manifest " + manifest.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + manifest.string() + ": " + e.what());
  }
  if (!j.contains("records") || !j["records"].is_array()) {
    throw ConfigError("manifest must contain a \"records\" array");
  }
  std::vector<SignalRecord> out;
  for (const auto& r : j["records"]) {
    SignalRecord rec;
    fs::path path = r.at("path").get<std::string>();
    if (path.is_relative()) path = manifest.parent_path() / path;
    rec.label = r.value("label", kUnlabeled);
    rec.sample_rate = r.value("sample_rate", 6000.0);
    const std::string format = r.value("format", std::string("f32le"));
    if (format == "f32le") {
      rec.samples = read_f32le(path);
    } else if (format == "csv") {
      rec.samples = read_csv_samples(path);
    } else {
      throw ConfigError("manifest: unknown record format '" + format + "'");
    }
    if (!(rec.sample_rate > 0.0)) throw ConfigError("manifest: sample_rate must be positive");
    rec.source = path.string();
    out.push_back(std::move(rec));
  }
  return out;
}

void write_dataset(const std::vector<SignalRecord>& records, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json j;
  j["records"] = nlohmann::json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string name = "record_" + std::to_string(i) + ".f32";
    write_f32le(records[i].samples, dir / name);
    j["records"].push_back({{"path", name},
                            {"label", records[i].label},
                            {"sample_rate", records[i].sample_rate},
                            {"format", "f32le"},
                            {"source", records[i].source}});
  }
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << '\n';
}

}  // namespace mmtfd
