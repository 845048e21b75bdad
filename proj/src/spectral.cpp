#include "mmtfd/spectral.hpp"

#include <cmath>
#include <numbers>

#include "mmtfd/errors.hpp"

namespace mmtfd {

namespace {

void require_nonempty(std::size_t n, const char* op) {
  if (n == 0) throw ContractError(std::string(op) + ": empty input");
}

// In-place radix-2 transform; sign = -1 forward, +1 inverse (unnormalized).
void radix2(std::vector<Complex>& a, int sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    // Twiddles evaluated directly rather than by recurrence to avoid drift.
    std::vector<Complex> w(half);
    for (std::size_t k = 0; k < half; ++k) {
      w[k] = std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(k) /
                                 static_cast<double>(len));
    }
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        Complex u = a[i + k];
        Complex v = a[i + k + half] * w[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

// Chirp-z: X[k] = conj(c[k]) * sum_t (x[t] conj(c[t])) c[k-t], c[n] = exp(i pi n^2 / T).
std::vector<Complex> bluestein(std::span<const Complex> x, int sign) {
  const std::size_t n = x.size();
  const std::size_t m = next_pow2(2 * n - 1);
  std::vector<Complex> chirp(n);
  for (std::size_t t = 0; t < n; ++t) {
    // n^2 mod 2T keeps the phase argument small.
    const std::size_t sq = (t * t) % (2 * n);
    chirp[t] = std::polar(1.0, -sign * std::numbers::pi * static_cast<double>(sq) /
                                   static_cast<double>(n));
  }
  std::vector<Complex> a(m, Complex{}), b(m, Complex{});
  for (std::size_t t = 0; t < n; ++t) a[t] = x[t] * std::conj(chirp[t]);
  b[0] = chirp[0];
  for (std::size_t t = 1; t < n; ++t) b[t] = b[m - t] = chirp[t];
  radix2(a, -1);
  radix2(b, -1);
  for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
  radix2(a, +1);
  std::vector<Complex> out(n);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * inv_m * std::conj(chirp[k]);
  return out;
}

std::vector<Complex> transform(std::span<const Complex> x, int sign) {
  const std::size_t n = x.size();
  if (n == next_pow2(n)) {
    std::vector<Complex> a(x.begin(), x.end());
    radix2(a, sign);
    return a;
  }
  return bluestein(x, sign);
}

}  // namespace

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

Spectrum dft_naive(const Signal& x) {
  const std::size_t n = x.size();
  require_nonempty(n, "dft_naive");
  Spectrum out{std::vector<Complex>(n), n};
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc{};
    for (std::size_t t = 0; t < n; ++t) {
      // (k*t) mod T keeps the angle in [0, 2 pi).
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) /
                           static_cast<double>(n);
      acc += x.samples[t] * std::polar(1.0, angle);
    }
    out.bins[k] = acc;
  }
  return out;
}

Spectrum fft(std::span<const Complex> x) {
  require_nonempty(x.size(), "fft");
  return Spectrum{transform(x, -1), x.size()};
}

Spectrum fft(const Signal& x) {
  std::vector<Complex> c(x.samples.begin(), x.samples.end());
  return fft(std::span<const Complex>(c));
}

std::vector<Complex> ifft_complex(const Spectrum& spectrum) {
  require_nonempty(spectrum.size(), "ifft");
  if (spectrum.size() != spectrum.origin_length) {
    throw DimensionError("ifft: spectrum length differs from origin length");
  }
  auto out = transform(spectrum.bins, +1);
  const double inv_n = 1.0 / static_cast<double>(out.size());
  for (auto& v : out) v *= inv_n;
  return out;
}

Signal ifft(const Spectrum& spectrum, double sample_rate) {
  auto c = ifft_complex(spectrum);
  Signal out{std::vector<double>(c.size()), sample_rate};
  for (std::size_t i = 0; i < c.size(); ++i) out.samples[i] = c[i].real();
  return out;
}

std::vector<double> magnitude(const Spectrum& spectrum) {
  std::vector<double> out(spectrum.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(spectrum.bins[i]);
  return out;
}

}  // namespace mmtfd
