#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "mmtfd/augment.hpp"
#include "mmtfd/errors.hpp"

using namespace mmtfd;

namespace {

Signal random_signal(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Signal s;
  s.samples.resize(n);
  for (auto& v : s.samples) v = g(rng);
  return s;
}

Signal tone(std::size_t n, std::size_t bin) {
  Signal s;
  for (std::size_t t = 0; t < n; ++t) s.samples.push_back(std::cos(2 * std::numbers::pi * bin * t / n));
  return s;
}

double energy(const Signal& s) {
  return std::inner_product(s.samples.begin(), s.samples.end(), s.samples.begin(), 0.0);
}

double max_diff(const Signal& a, const Signal& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.samples[i] - b.samples[i]));
  return d;
}

}  // namespace

TEST(Warp, UnitScaleIsIdentity) {
  const auto x = random_signal(50, 1);
  const auto y = window_warp(x, 5, 30, 1.0);
  EXPECT_EQ(y.samples, x.samples);
}

TEST(Warp, RampStretchedByTwo) {
  Signal ramp;
  for (int i = 0; i < 8; ++i) ramp.samples.push_back(i);
  const auto stretched = warp_segment(ramp, 2, 6, 2.0);
  // 2 samples before, 8 interpolated segment samples, 2 after.
  const std::vector<double> expected{0, 1, 2, 2.5, 3, 3.5, 4, 4.5, 5, 5.5, 6, 7};
  ASSERT_EQ(stretched.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_DOUBLE_EQ(stretched[i], expected[i]);
  const auto out = window_warp(ramp, 2, 6, 2.0);
  ASSERT_EQ(out.size(), 8u);
  // Final correction maps output i to position i * 11 / 7 of the stretched signal.
  for (std::size_t i = 0; i < 8; ++i) {
    const double pos = static_cast<double>(i) * 11.0 / 7.0;
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    const double want = lo + 1 < expected.size() ? expected[lo] * (1 - frac) + expected[lo + 1] * frac
                                                 : expected[lo];
    EXPECT_NEAR(out.samples[i], want, 1e-12);
  }
}

TEST(Warp, LengthPreservedForRandomArguments) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 4 + rng() % 300;
    const auto x = random_signal(n, trial);
    const std::size_t t_s = rng() % (n - 2);
    const std::size_t t_e = t_s + 2 + rng() % (n - t_s - 1);
    const double s = std::uniform_real_distribution<double>(0.1, 4.0)(rng);
    ASSERT_EQ(window_warp(x, t_s, std::min(t_e, n), s).size(), n);
  }
}

TEST(Warp, DegenerateSegmentRejected) {
  const auto x = random_signal(10, 1);
  EXPECT_THROW(window_warp(x, 3, 4, 2.0), ContractError);
  EXPECT_THROW(window_warp(x, 3, 3, 2.0), ContractError);
  EXPECT_THROW(window_warp(x, 3, 11, 2.0), ContractError);
  EXPECT_THROW(window_warp(x, 3, 8, 0.0), ContractError);
}

TEST(Flip, NegatesAndIsInvolution) {
  const auto y = flip(Signal{{1, -2, 3}, 1.0});
  EXPECT_EQ(y.samples, (std::vector<double>{-1, 2, -3}));
  const auto x = random_signal(64, 3);
  EXPECT_EQ(flip(flip(x)).samples, x.samples);
  const Signal zero{std::vector<double>(5, 0.0), 1.0};
  for (double v : flip(zero).samples) EXPECT_EQ(v, 0.0);
}

TEST(TimeNoise, ZeroSigmaAndDeterminism) {
  const auto x = random_signal(100, 4);
  EXPECT_EQ(time_noise(x, 0.0, 9).samples, x.samples);
  EXPECT_EQ(time_noise(x, 0.3, 9).samples, time_noise(x, 0.3, 9).samples);
  EXPECT_NE(time_noise(x, 0.3, 9).samples, time_noise(x, 0.3, 10).samples);
  EXPECT_THROW(time_noise(x, -1.0, 0), ContractError);
}

TEST(TimeNoise, MomentsOfAddedNoise) {
  const Signal zero{std::vector<double>(100000, 0.0), 1.0};
  const auto n = time_noise(zero, 1.0, 123);
  const double mean = std::accumulate(n.samples.begin(), n.samples.end(), 0.0) / 1e5;
  double var = 0.0;
  for (double v : n.samples) var += (v - mean) * (v - mean);
  var /= 1e5 - 1;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_GE(var, 0.97);
  EXPECT_LE(var, 1.03);
}

TEST(FreqMask, ZeroFractionIdentityFullFractionZero) {
  for (std::size_t n : {64u, 100u}) {
    const auto x = random_signal(n, 5);
    EXPECT_LT(max_diff(freq_mask(x, 0.0, 1), x), 1e-9);
    for (double v : freq_mask(x, 1.0, 1).samples) EXPECT_NEAR(v, 0.0, 1e-9);
  }
}

TEST(FreqMask, MaskingToneBinAnnihilatesIt) {
  const auto x = tone(64, 5);
  for (double v : band_mask(x, 5, 1).samples) EXPECT_NEAR(v, 0.0, 1e-9);
  // A band elsewhere leaves the tone untouched.
  EXPECT_LT(max_diff(band_mask(x, 10, 4), x), 1e-9);
}

TEST(FreqMask, RandomBandEitherKillsToneOrLeavesIt) {
  const auto x = tone(128, 20);
  int killed = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto y = freq_mask(x, 0.1, seed);
    ASSERT_EQ(y.size(), x.size());
    if (energy(y) < 1e-12) {
      ++killed;
    } else {
      ASSERT_LT(max_diff(y, x), 1e-9) << seed;
    }
  }
  EXPECT_GT(killed, 0);
  EXPECT_LT(killed, 200);
}

TEST(FreqMask, RemovesItsShareOfFlatSpectrumEnergy) {
  // An impulse has a flat spectrum: every bin carries the same energy.
  const std::size_t n = 256;
  Signal impulse{std::vector<double>(n, 0.0), 1.0};
  impulse.samples[0] = 1.0;
  for (double f : {0.05, 0.1, 0.3}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const double removed = 1.0 - energy(freq_mask(impulse, f, seed)) / energy(impulse);
      EXPECT_GE(removed, f - 2.0 / static_cast<double>(n)) << f;
    }
  }
}

TEST(FreqNoise, IdentityDeterminismAndEnergy) {
  const auto x = random_signal(1024, 6);
  EXPECT_LT(max_diff(freq_noise(x, 0.0, 1), x), 1e-12);
  EXPECT_EQ(freq_noise(x, 2.0, 1).samples, freq_noise(x, 2.0, 1).samples);
  // Parseval: E sum|N|^2 = T sigma^2, so the time-domain energy rises by sigma^2 on average.
  const Signal zero{std::vector<double>(1024, 0.0), 1.0};
  const double sigma = 3.0;
  double total = 0.0;
  const int trials = 20;
  for (int s = 0; s < trials; ++s) total += energy(freq_noise(zero, sigma, s));
  EXPECT_NEAR(total / trials / (sigma * sigma), 1.0, 0.05);
}

TEST(Augment, OutputsStayRealAndSameLength) {
  for (std::size_t n : {63u, 64u, 2048u}) {
    const auto x = random_signal(n, 8);
    EXPECT_EQ(freq_mask(x, 0.2, 3).size(), n);
    EXPECT_EQ(freq_noise(x, 0.5, 3).size(), n);
    EXPECT_EQ(time_noise(x, 0.5, 3).size(), n);
  }
}

TEST(SampleViews, FiveViewsKeepLengthAndSource) {
  AugPolicy p;
  p.seed = 42;
  const auto x = random_signal(256, 9);
  const auto views = sample_views(x, p, 5, 17);
  ASSERT_EQ(views.size(), 5u);
  for (const auto& v : views) {
    EXPECT_EQ(v.signal.size(), 256u);
    EXPECT_EQ(v.source_index, 17);
    EXPECT_FALSE(v.applied_ops.empty());
  }
}

TEST(SampleViews, FlipOnlyPolicyGivesNegatedCrops) {
  AugPolicy p;
  p.enabled = {AugOp::flip};
  p.apply_probability = 1.0;
  const auto x = random_signal(64, 10);
  for (const auto& v : sample_views(x, p, 4)) EXPECT_EQ(v.signal.samples, flip(x).samples);

  p.crop_length = 16;
  for (const auto& v : sample_views(x, p, 4)) {
    ASSERT_EQ(v.signal.size(), 16u);
    // The view is the negation of some contiguous slice of x.
    bool found = false;
    for (std::size_t off = 0; off + 16 <= 64 && !found; ++off) {
      found = std::equal(v.signal.samples.begin(), v.signal.samples.end(), x.samples.begin() + off,
                         [](double a, double b) { return a == -b; });
    }
    EXPECT_TRUE(found);
  }
}

TEST(SampleViews, DeterministicAndOrderIndependent) {
  AugPolicy p;
  p.seed = 7;
  const auto x = random_signal(128, 11);
  const auto a = sample_views(x, p, 5, 3);
  const auto b = sample_views(x, p, 5, 3);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].signal.samples, b[i].signal.samples);
  // Asking for fewer views reproduces the prefix.
  const auto c = sample_views(x, p, 2, 3);
  EXPECT_EQ(c[1].signal.samples, a[1].signal.samples);
  p.seed = 8;
  EXPECT_NE(sample_views(x, p, 1, 3)[0].signal.samples, a[0].signal.samples);
}

TEST(SampleViews, RejectsBadArguments) {
  AugPolicy p;
  const auto x = random_signal(16, 1);
  EXPECT_THROW(sample_views(x, p, 0), ContractError);
  p.enabled.clear();
  EXPECT_THROW(sample_views(x, p, 1), ContractError);
}

TEST(AugOpNames, RoundTrip) {
  for (AugOp op : {AugOp::warp, AugOp::flip, AugOp::time_noise, AugOp::freq_mask, AugOp::freq_noise}) {
    EXPECT_EQ(aug_op_from_string(to_string(op)), op);
  }
}
