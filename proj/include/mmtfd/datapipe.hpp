#pragma once

// Signal ingestion, overlapping windows, splits, normalization, corruption and
// a synthetic rotor-vibration generator.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mmtfd/spectral.hpp"

namespace mmtfd {

inline constexpr int kUnlabeled = -1;

struct SignalRecord {
  std::vector<double> samples;
  double sample_rate = 6000.0;
  int label = kUnlabeled;
  std::string source;
};

struct Window {
  Signal signal;
  int label = kUnlabeled;
  int record = 0;   // index of the source record
  std::size_t offset = 0;
};

enum class SplitTag { all, train, test };

struct WindowDataset {
  std::vector<Window> windows;
  SplitTag tag = SplitTag::all;

  std::size_t size() const { return windows.size(); }
  std::vector<int> labels() const;
  // Number of classes implied by the largest label.
  std::size_t n_classes() const;
};

// Windows at offsets 0, step, 2*step, ...; count = floor((T - window) / step) + 1.
WindowDataset overlap_sample(const SignalRecord& rec, std::size_t window, std::size_t step,
                             int record_index = 0);
std::size_t overlap_count(std::size_t length, std::size_t window, std::size_t step);

// Concatenation of overlap_sample over several records.
WindowDataset window_records(const std::vector<SignalRecord>& records, std::size_t window,
                             std::size_t step);

// Stratified split: per class, round(ratio * n) windows go to train.
std::pair<WindowDataset, WindowDataset> split(const WindowDataset& ds, double ratio,
                                              std::uint64_t seed);

enum class NormMode { global, per_window };

struct NormStats {
  NormMode mode = NormMode::global;
  double mean = 0.0;
  double stdev = 1.0;
  bool std_substituted = false;  // the data had zero spread; 1 was used instead
};

// Mean/std of every sample in the dataset (global mode).
NormStats compute_norm_stats(const WindowDataset& ds, NormMode mode = NormMode::global);
// Global mode applies the stored stats; per-window mode standardizes each
// window by its own mean/std.
void apply_norm(WindowDataset& ds, const NormStats& stats);
void invert_norm(WindowDataset& ds, const NormStats& stats);

struct NormalizedSplit {
  WindowDataset train;
  WindowDataset test;
  NormStats stats;
};
// Statistics come from the training split and are applied to both splits.
NormalizedSplit normalize(WindowDataset train, WindowDataset test,
                          NormMode mode = NormMode::global);

// Stratified labeled subset: per class max(1, round(fraction * n_c)) indices.
std::vector<int> label_budget(const WindowDataset& ds, double fraction, std::uint64_t seed);

struct CorruptionReport {
  std::vector<int> noisy;  // indices of windows that received additive noise
};

// Adds N(0, variance) to floor(noise_fraction * n) randomly chosen windows,
// then zeroes a random contiguous band covering mask_fraction of the spectrum
// in every window.
WindowDataset corrupt(const WindowDataset& ds, double noise_fraction, double variance,
                      double mask_fraction, std::uint64_t seed,
                      CorruptionReport* report = nullptr);

struct SynthClass {
  std::string name;
  double frequency_hz = 0.0;           // characteristic frequency
  std::vector<double> harmonics{1.0};  // amplitude of k-th harmonic of frequency_hz
  double impulse_rate_hz = 0.0;        // 0 disables the impulse train
  double impulse_amplitude = 0.0;
};

struct SynthSpec {
  std::vector<SynthClass> classes;
  double shaft_hz = 50.0;  // running speed shared by every class
  double shaft_amplitude = 1.0;
  double resonance_hz = 1200.0;  // ringing frequency excited by each impulse
  double impulse_decay_s = 0.004;
  double speed_jitter = 0.0;  // relative std of a slow random speed wander
  double noise_sigma = 0.5;
  std::size_t record_length = 183098;
  double sample_rate = 6000.0;

  void validate() const;
  static SynthSpec rotor_default();
};

// records_per_class records for every class, labeled by class index.
std::vector<SignalRecord> synth_generate(const SynthSpec& spec, int records_per_class,
                                         std::uint64_t seed);

// Manifest: JSON {"records": [{"path", "label", "sample_rate", "format"}]} with
// format "f32le" (raw little-endian float32) or "csv" (one sample per line).
// Relative paths resolve against the manifest's directory.
std::vector<SignalRecord> load_manifest(const std::filesystem::path& manifest);
void write_dataset(const std::vector<SignalRecord>& records, const std::filesystem::path& dir);

std::vector<double> read_f32le(const std::filesystem::path& file);
void write_f32le(const std::vector<double>& samples, const std::filesystem::path& file);
std::vector<double> read_csv_samples(const std::filesystem::path& file);

}  // namespace mmtfd
