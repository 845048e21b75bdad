#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace mmtfd {

using Complex = std::complex<double>;

struct Signal {
  std::vector<double> samples;
  double sample_rate = 1.0;  // Hz

  std::size_t size() const { return samples.size(); }
};

// Unnormalized forward transform X[k] = sum_t x[t] exp(-2 pi i k t / T).
struct Spectrum {
  std::vector<Complex> bins;
  std::size_t origin_length = 0;

  std::size_t size() const { return bins.size(); }
};

// Direct O(T^2) evaluation of the forward transform; the reference oracle.
Spectrum dft_naive(const Signal& x);

// O(T log T). Power-of-two lengths use iterative radix-2 Cooley-Tukey; other
// lengths are mapped onto power-of-two transforms with Bluestein's chirp-z
// identity, so the result always has exactly T bins.
Spectrum fft(const Signal& x);
Spectrum fft(std::span<const Complex> x);

// Inverse with 1/T normalization, complex-valued.
std::vector<Complex> ifft_complex(const Spectrum& spectrum);
// Real part of the inverse transform.
Signal ifft(const Spectrum& spectrum, double sample_rate = 1.0);

// |X[k]| for every bin.
std::vector<double> magnitude(const Spectrum& spectrum);

std::size_t next_pow2(std::size_t n);

}  // namespace mmtfd
