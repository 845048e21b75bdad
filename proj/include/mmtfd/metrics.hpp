#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mmtfd {

using Confusion = std::vector<std::vector<std::size_t>>;

// Share of positions where pred == truth.
double accuracy(std::span<const int> pred, std::span<const int> truth);

// Entry (i, j) counts items of true class i predicted as class j.
Confusion confusion(std::span<const int> pred, std::span<const int> truth, std::size_t n_classes);

// Diagonal over row sum; classes with no items report 0.
std::vector<double> per_class_accuracy(const Confusion& m);

struct EvalScores {
  double accuracy = 0.0;
  Confusion confusion;
  std::vector<double> per_class;

  bool operator==(const EvalScores&) const = default;
};

EvalScores score(std::span<const int> pred, std::span<const int> truth, std::size_t n_classes);

struct MetricsReport {
  EvalScores clean;
  std::optional<EvalScores> corrupted;
  // Named per-iteration sequences (loss, accuracy, ...).
  std::map<std::string, std::vector<double>> curves;

  bool operator==(const MetricsReport&) const = default;
};

std::string report_json(const MetricsReport& r);
// One "iteration,value" row per entry, with a header line.
void write_curve_csv(const std::vector<double>& values, const std::string& column,
                     const std::filesystem::path& file);

}  // namespace mmtfd
