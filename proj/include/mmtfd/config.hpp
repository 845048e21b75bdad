#pragma once

// Run configuration, stored as JSON with one section per component.
// Unknown keys are rejected so that typos fail loudly.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "mmtfd/augment.hpp"
#include "mmtfd/datapipe.hpp"
#include "mmtfd/meta.hpp"
#include "mmtfd/model.hpp"
#include "mmtfd/objective.hpp"

namespace mmtfd {

struct DataConfig {
  std::string manifest;  // empty: use the synthetic generator
  SynthSpec synth = SynthSpec::rotor_default();
  int records_per_class = 1;
  std::size_t window = 2048;
  std::size_t step = 850;
  double train_ratio = 0.7;
  NormMode normalization = NormMode::global;
};

struct LossConfig {
  // The time head is down-weighted: with a shared classifier and a handful of
  // labels, a full-weight time term lets noisy time logits swamp the decision.
  LossWeights weights{0.1, 1.0, 1.0};
  bool stop_target = false;
  double cross_corr_weight = 0.0;  // 0 disables the redundancy term in pretraining
};

struct PretrainConfig {
  int iterations = 300;
  std::size_t batch_size = 16;
  int views = 5;
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// What the meta loops minimize per task.
enum class TaskObjective {
  time_align,  // time-branch cross-entropy + alignment; predicts from the time branch
  joint,       // both branches' cross-entropy + alignment; predicts from summed logits
};

struct MetaSection {
  MetaConfig meta;
  EpisodeShape shape;
  TaskObjective objective = TaskObjective::joint;
};

struct FinetuneConfig {
  double label_budget = 0.01;
  int iterations = 50;
  // Group rates; unset picks the published pair for the nearest budget.
  std::optional<double> classifier_rate;
  std::optional<double> backbone_rate;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  double classifier_lr() const;
  double backbone_lr() const;
};

struct CorruptConfig {
  double noise_fraction = 0.5;
  double variance = 10.0;
  double mask_fraction = 0.05;
};

struct AblationConfig {
  bool no_bilevel = false;  // plain SGD fine-tuning instead of the meta loop
  bool no_freq = false;     // drop the frequency classification task and the align target
  bool no_aug = false;      // crop-only views in pretraining
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "run";
  DataConfig data;
  AugPolicy augment;
  ModelConfig model;
  LossConfig loss;
  PretrainConfig pretrain;
  MetaSection meta;
  FinetuneConfig finetune;
  CorruptConfig corrupt;
  AblationConfig ablation;

  // Raises ConfigError naming the offending field.
  void validate() const;
};

RunConfig config_from_json(const std::string& text);
std::string config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::filesystem::path& file);

SynthSpec synth_from_json(const std::string& text, int* records_per_class = nullptr);
std::string synth_to_json(const SynthSpec& spec);

}  // namespace mmtfd
