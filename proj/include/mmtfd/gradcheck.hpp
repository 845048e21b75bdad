#pragma once

// Central-difference gradient checking. Only forward values are used to
// build the numeric estimate, so it stays independent of the autodiff path.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmtfd/tensor.hpp"

namespace mmtfd {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t compared = 0;
  // Elements whose stencil x +/- step crosses a relu kink. Central differences
  // say nothing about the derivative there, so they are left out.
  std::size_t skipped = 0;
  bool passed = false;
};

// Largest share of skipped elements a check may have and still pass.
inline constexpr double kMaxSkippedFraction = 0.02;

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

// Compares gradients(f(inputs), inputs) with central differences of f.
// The error for each input tensor is max|analytic - numeric| divided by the
// larger of the two gradients' max-abs magnitudes; the worst tensor is reported.
GradCheckResult check_gradients(const std::string& name, const ScalarFn& f,
                                std::vector<Tensor> inputs, double step = 1e-3,
                                double tolerance = 1e-4);

// Numeric gradient of f with respect to each input, by central differences.
// When `kinked` is given it receives, per element, whether f(x + step),
// f(x) and f(x - step) took different relu branches.
std::vector<std::vector<double>> numeric_gradients(
    const ScalarFn& f, std::vector<Tensor>& inputs, double step,
    std::vector<std::vector<char>>* kinked = nullptr);

// Every differentiable op plus the full one-block model, once per seed.
std::vector<GradCheckResult> run_gradcheck_suite(std::span<const std::uint64_t> seeds,
                                                 double step = 1e-3, double tolerance = 1e-4);

}  // namespace mmtfd
