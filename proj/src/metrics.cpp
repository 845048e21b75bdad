#include "mmtfd/metrics.hpp"

#include <fstream>

#include <json.hpp>

#include "mmtfd/errors.hpp"

namespace mmtfd {

double accuracy(std::span<const int> pred, std::span<const int> truth) {
  if (pred.empty() || pred.size() != truth.size()) {
    throw ContractError("accuracy: predictions and labels must be nonempty and equally long");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

Confusion confusion(std::span<const int> pred, std::span<const int> truth, std::size_t n_classes) {
  if (pred.size() != truth.size()) throw ContractError("confusion: length mismatch");
  Confusion m(n_classes, std::vector<std::size_t>(n_classes, 0));
  const auto in_range = [n_classes](int c) {
    return c >= 0 && static_cast<std::size_t>(c) < n_classes;
  };
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!in_range(pred[i]) || !in_range(truth[i])) {
      throw ContractError("confusion: label out of range at position " + std::to_string(i));
    }
    ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  }
  return m;
}

std::vector<double> per_class_accuracy(const Confusion& m) {
  std::vector<double> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::size_t row = 0;
    for (auto v : m[i]) row += v;
    out.push_back(row ? static_cast<double>(m[i][i]) / static_cast<double>(row) : 0.0);
  }
  return out;
}

EvalScores score(std::span<const int> pred, std::span<const int> truth, std::size_t n_classes) {
  EvalScores s;
  s.accuracy = accuracy(pred, truth);
  s.confusion = confusion(pred, truth, n_classes);
  s.per_class = per_class_accuracy(s.confusion);
  return s;
}

namespace {

nlohmann::json scores_json(const EvalScores& s) {
  return {{"accuracy", s.accuracy}, {"confusion", s.confusion}, {"per_class_accuracy", s.per_class}};
}

}  // namespace

std::string report_json(const MetricsReport& r) {
  nlohmann::json j;
  j["clean"] = scores_json(r.clean);
  if (r.corrupted) j["corrupted"] = scores_json(*r.corrupted);
  for (const auto& [name, values] : r.curves) j["curves"][name] = values;
  return j.dump(2);
}

void write_curve_csv(const std::vector<double>& values, const std::string& column,
                     const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw CapacityError("cannot write " + file.string());
  out.precision(17);
  out << "iteration," << column << '\n';
  for (std::size_t i = 0; i < values.size(); ++i) out << i << ',' << values[i] << '\n';
}

}  // namespace mmtfd
