#pragma once

// Seeded time- and frequency-domain augmentations for 1-D vibration windows.
// Every operation preserves the signal length and returns a real signal.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mmtfd/spectral.hpp"

namespace mmtfd {

enum class AugOp { warp, flip, time_noise, freq_mask, freq_noise };

const char* to_string(AugOp op);
AugOp aug_op_from_string(const std::string& name);

struct AugPolicy {
  std::vector<AugOp> enabled{AugOp::warp, AugOp::flip, AugOp::time_noise, AugOp::freq_mask,
                             AugOp::freq_noise};
  double apply_probability = 0.5;
  double warp_scale_min = 0.5;
  double warp_scale_max = 2.0;
  // Noise standard deviation as a fraction of the window's own std.
  double noise_scale = 0.05;
  double mask_fraction_min = 0.05;
  double mask_fraction_max = 0.15;
  // Length of the random crop taken before augmenting; 0 keeps the full window.
  std::size_t crop_length = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AppliedOp {
  AugOp op;
  std::map<std::string, double> params;
};

struct AugmentedView {
  Signal signal;
  int source_index = 0;  // pseudo-label: index of the window it came from
  std::vector<AppliedOp> applied_ops;
};

// Stretches [t_s, t_e) by factor s with linear interpolation. The result is
// the untrimmed signal, length T - (t_e - t_s) + round(s * (t_e - t_s)).
std::vector<double> warp_segment(const Signal& x, std::size_t t_s, std::size_t t_e, double s);

// warp_segment followed by linear resampling back to the original length.
Signal window_warp(const Signal& x, std::size_t t_s, std::size_t t_e, double s);

Signal flip(const Signal& x);

// x + n with n ~ N(0, sigma^2).
Signal time_noise(const Signal& x, double sigma, std::uint64_t seed);

// Zeroes a contiguous band of one-sided bins [first_bin, first_bin + width)
// together with its conjugate mirror, then returns to the time domain.
Signal band_mask(const Signal& x, std::size_t first_bin, std::size_t width);

// band_mask with a band covering mask_fraction of the spectrum at a uniform
// random position.
Signal freq_mask(const Signal& x, double mask_fraction, std::uint64_t seed);

// Adds conjugate-symmetric complex Gaussian noise with E|N[k]|^2 = sigma^2
// to every bin.
Signal freq_noise(const Signal& x, double sigma, std::uint64_t seed);

// `count` independently augmented views of x. Each view takes a random crop,
// then applies a random non-empty subset of the enabled ops in a fixed order.
// View v depends only on (policy.seed, source_index, v).
std::vector<AugmentedView> sample_views(const Signal& x, const AugPolicy& policy, int count,
                                        int source_index = 0);

// Crop-only views, used when augmentation is switched off.
std::vector<AugmentedView> crop_views(const Signal& x, const AugPolicy& policy, int count,
                                      int source_index = 0);

double sample_std(const std::vector<double>& v);

}  // namespace mmtfd
