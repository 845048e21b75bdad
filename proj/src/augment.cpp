#include "mmtfd/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmtfd/errors.hpp"
#include "mmtfd/rng.hpp"

namespace mmtfd {

namespace {

// Linear interpolation at fractional position; positions past the end clamp.
double lerp_at(const std::vector<double>& v, double pos) {
  if (pos <= 0.0) return v.front();
  const double last = static_cast<double>(v.size() - 1);
  if (pos >= last) return v.back();
  const auto i0 = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(i0);
  if (frac == 0.0) return v[i0];
  return v[i0] * (1.0 - frac) + v[i0 + 1] * frac;
}

std::vector<double> resample_linear(const std::vector<double>& v, std::size_t n) {
  if (v.size() == n) return v;
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = v.front();
    return out;
  }
  const double span = static_cast<double>(v.size() - 1);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = lerp_at(v, static_cast<double>(i) * span / static_cast<double>(n - 1));
  }
  return out;
}

std::size_t one_sided_bins(std::size_t n) { return n / 2 + 1; }

Signal crop(const Signal& x, std::size_t length, Rng& rng) {
  if (length == 0 || length >= x.size()) return x;
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - length);
  const std::size_t off = pick(rng);
  return Signal{std::vector<double>(x.samples.begin() + static_cast<std::ptrdiff_t>(off),
                                    x.samples.begin() + static_cast<std::ptrdiff_t>(off + length)),
                x.sample_rate};
}

}  // namespace

const char* to_string(AugOp op) {
  switch (op) {
    case AugOp::warp: return "warp";
    case AugOp::flip: return "flip";
    case AugOp::time_noise: return "time_noise";
    case AugOp::freq_mask: return "freq_mask";
    case AugOp::freq_noise: return "freq_noise";
  }
  return "?";
}

AugOp aug_op_from_string(const std::string& name) {
  for (AugOp op : {AugOp::warp, AugOp::flip, AugOp::time_noise, AugOp::freq_mask,
                   AugOp::freq_noise}) {
    if (name == to_string(op)) return op;
  }
  throw ConfigError("unknown augmentation op '" + name + "'");
}

void AugPolicy::validate() const {
  if (!(warp_scale_min > 0.0) || warp_scale_max < warp_scale_min) {
    throw ConfigError("augment: warp scale range must satisfy 0 < min <= max");
  }
  if (!(noise_scale >= 0.0)) throw ConfigError("augment: noise_scale must be >= 0");
  if (mask_fraction_min < 0.0 || mask_fraction_max > 1.0 ||
      mask_fraction_max < mask_fraction_min) {
    throw ConfigError("augment: mask fraction range must lie in [0, 1]");
  }
  if (apply_probability < 0.0 || apply_probability > 1.0) {
    throw ConfigError("augment: apply_probability must lie in [0, 1]");
  }
}

double sample_std(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double n = static_cast<double>(v.size());
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double acc = 0.0;
  for (double x : v) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / n);
}

std::vector<double> warp_segment(const Signal& x, std::size_t t_s, std::size_t t_e, double s) {
  const std::size_t n = x.size();
  if (!(s > 0.0)) throw ContractError("window_warp: scale must be positive");
  if (t_e > n || t_s >= t_e) throw ContractError("window_warp: segment out of range");
  if (t_e - t_s < 2) throw ContractError("window_warp: segment shorter than 2 samples");
  const std::size_t seg = t_e - t_s;
  const auto warped = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::llround(s * static_cast<double>(seg))));
  std::vector<double> out;
  out.reserve(n - seg + warped);
  out.insert(out.end(), x.samples.begin(), x.samples.begin() + static_cast<std::ptrdiff_t>(t_s));
  for (std::size_t j = 0; j < warped; ++j) {
    // x'(t) = x(t_s + (t - t_s) / s)
    out.push_back(lerp_at(x.samples, static_cast<double>(t_s) + static_cast<double>(j) / s));
  }
  out.insert(out.end(), x.samples.begin() + static_cast<std::ptrdiff_t>(t_e), x.samples.end());
  return out;
}

Signal window_warp(const Signal& x, std::size_t t_s, std::size_t t_e, double s) {
  auto stretched = warp_segment(x, t_s, t_e, s);
  return Signal{resample_linear(stretched, x.size()), x.sample_rate};
}

Signal flip(const Signal& x) {
  Signal out = x;
  for (auto& v : out.samples) v = -v;
  return out;
}

Signal time_noise(const Signal& x, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ContractError("time_noise: sigma must be >= 0");
  Signal out = x;
  if (sigma == 0.0) return out;
  Rng rng = make_rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : out.samples) v += noise(rng);
  return out;
}

Signal band_mask(const Signal& x, std::size_t first_bin, std::size_t width) {
  const std::size_t n = x.size();
  const std::size_t half = one_sided_bins(n);
  if (width == 0) return x;
  if (first_bin + width > half) throw ContractError("band_mask: band exceeds spectrum");
  Spectrum spec = fft(x);
  for (std::size_t k = first_bin; k < first_bin + width; ++k) {
    spec.bins[k] = Complex{};
    spec.bins[(n - k) % n] = Complex{};
  }
  return ifft(spec, x.sample_rate);
}

Signal freq_mask(const Signal& x, double mask_fraction, std::uint64_t seed) {
  if (mask_fraction < 0.0 || mask_fraction > 1.0) {
    throw ContractError("freq_mask: fraction must lie in [0, 1]");
  }
  const std::size_t half = one_sided_bins(x.size());
  const auto width = std::min<std::size_t>(
      half, static_cast<std::size_t>(std::ceil(mask_fraction * static_cast<double>(half))));
  if (width == 0) return x;
  Rng rng = make_rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, half - width);
  return band_mask(x, pick(rng), width);
}

Signal freq_noise(const Signal& x, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ContractError("freq_noise: sigma must be >= 0");
  if (sigma == 0.0) return x;
  const std::size_t n = x.size();
  Spectrum spec = fft(x);
  Rng rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double component = sigma / std::sqrt(2.0);
  for (std::size_t k = 0; k < one_sided_bins(n); ++k) {
    const std::size_t mirror = (n - k) % n;
    if (mirror == k) {
      // DC and Nyquist bins are their own conjugates and must stay real.
      spec.bins[k] += Complex{sigma * gauss(rng), 0.0};
    } else {
      Complex noise{component * gauss(rng), component * gauss(rng)};
      spec.bins[k] += noise;
      spec.bins[mirror] += std::conj(noise);
    }
  }
  return ifft(spec, x.sample_rate);
}

std::vector<AugmentedView> sample_views(const Signal& x, const AugPolicy& policy, int count,
                                        int source_index) {
  if (count < 1) throw ContractError("sample_views: count must be >= 1");
  if (policy.enabled.empty()) throw ContractError("sample_views: no augmentation ops enabled");
  policy.validate();

  std::vector<AugmentedView> views;
  views.reserve(static_cast<std::size_t>(count));
  for (int v = 0; v < count; ++v) {
    const std::uint64_t stream = mix_seed(static_cast<std::uint64_t>(source_index),
                                          static_cast<std::uint64_t>(v));
    Rng rng = make_rng(policy.seed, stream);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    AugmentedView view;
    view.source_index = source_index;
    view.signal = crop(x, policy.crop_length, rng);

    std::vector<AugOp> chosen;
    for (AugOp op : policy.enabled) {
      if (unit(rng) < policy.apply_probability) chosen.push_back(op);
    }
    if (chosen.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, policy.enabled.size() - 1);
      chosen.push_back(policy.enabled[pick(rng)]);
    }
    std::sort(chosen.begin(), chosen.end());

    const std::size_t n = view.signal.size();
    const double sd = sample_std(view.signal.samples);
    for (AugOp op : chosen) {
      AppliedOp applied{op, {}};
      Signal& s = view.signal;
      switch (op) {
        case AugOp::warp: {
          if (n < 4) break;
          std::uniform_int_distribution<std::size_t> len_pick(std::max<std::size_t>(2, n / 10),
                                                              std::max<std::size_t>(2, n / 2));
          const std::size_t len = len_pick(rng);
          std::uniform_int_distribution<std::size_t> start_pick(0, n - len);
          const std::size_t t_s = start_pick(rng);
          std::uniform_real_distribution<double> scale_pick(policy.warp_scale_min,
                                                            policy.warp_scale_max);
          const double factor = scale_pick(rng);
          s = window_warp(s, t_s, t_s + len, factor);
          applied.params = {{"t_s", static_cast<double>(t_s)},
                            {"t_e", static_cast<double>(t_s + len)},
                            {"s", factor}};
          break;
        }
        case AugOp::flip:
          s = flip(s);
          break;
        case AugOp::time_noise: {
          const double sigma = policy.noise_scale * sd;
          s = time_noise(s, sigma, rng());
          applied.params = {{"sigma", sigma}};
          break;
        }
        case AugOp::freq_mask: {
          std::uniform_real_distribution<double> frac_pick(policy.mask_fraction_min,
                                                           policy.mask_fraction_max);
          const double fraction = frac_pick(rng);
          s = freq_mask(s, fraction, rng());
          applied.params = {{"fraction", fraction}};
          break;
        }
        case AugOp::freq_noise: {
          // Same per-sample noise power as time_noise: E|N|^2 = T * sigma_t^2.
          const double sigma = policy.noise_scale * sd * std::sqrt(static_cast<double>(n));
          s = freq_noise(s, sigma, rng());
          applied.params = {{"sigma", sigma}};
          break;
        }
      }
      view.applied_ops.push_back(std::move(applied));
    }
    views.push_back(std::move(view));
  }
  return views;
}

std::vector<AugmentedView> crop_views(const Signal& x, const AugPolicy& policy, int count,
                                      int source_index) {
  if (count < 1) throw ContractError("crop_views: count must be >= 1");
  std::vector<AugmentedView> views;
  for (int v = 0; v < count; ++v) {
    Rng rng = make_rng(policy.seed, mix_seed(static_cast<std::uint64_t>(source_index),
                                             static_cast<std::uint64_t>(v)));
    views.push_back(AugmentedView{crop(x, policy.crop_length, rng), source_index, {}});
  }
  return views;
}

}  // namespace mmtfd
