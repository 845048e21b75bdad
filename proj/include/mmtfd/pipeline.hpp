#pragma once

// pretrain -> finetune -> evaluate, plus the data preparation they share.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mmtfd/checkpoint.hpp"
#include "mmtfd/config.hpp"
#include "mmtfd/metrics.hpp"

namespace mmtfd {

using Progress = std::function<void(const std::string&)>;

struct PreparedData {
  WindowDataset train;     // normalized
  WindowDataset test;      // normalized
  WindowDataset test_raw;  // before normalization; corruption is applied here
  NormStats stats;
  std::size_t n_classes = 0;
};

// Loads or generates records, windows them, splits 7:3 (configurable) and
// normalizes with training statistics. Deterministic in cfg.seed.
PreparedData prepare_data(const RunConfig& cfg);

// Per-view model outputs. Without the frequency branch the *_f fields stay
// undefined.
struct ViewOutputs {
  Tensor z_t, z_f, feat_t, feat_f, logits_t, logits_f;
};
ViewOutputs forward_view(const Signal& x, const Params& p, const ModelConfig& cfg,
                         bool with_freq);

// Class decision for one window under the run's task objective.
int predict(const Params& p, const Signal& x, const RunConfig& cfg);

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<double> loss;   // total objective per iteration
  std::vector<double> align;  // alignment term per iteration (0 when disabled)
};

// Self-supervised stage: augmented views, time-frequency alignment and
// instance discrimination over source-window pseudo-labels.
PretrainResult pretrain(const RunConfig& cfg, const PreparedData& data,
                        const Progress& progress = {});

struct FinetuneResult {
  Checkpoint checkpoint;
  std::vector<double> loss;      // one entry per outer step
  std::vector<double> accuracy;  // query (or training-batch) accuracy per outer step
  std::vector<int> labeled;      // indices into data.train
};

// Meta fine-tuning on the labeled budget (or plain SGD with no_bilevel).
// Drops the pretraining-only heads from the checkpoint.
FinetuneResult finetune(const Checkpoint& pretrained, const RunConfig& cfg,
                        const PreparedData& data, const Progress& progress = {});

using Predictor = std::function<int(const Signal&)>;
EvalScores evaluate_predictor(const Predictor& predict_fn, const WindowDataset& ds,
                              std::size_t n_classes);

struct Evaluation {
  MetricsReport report;
  std::vector<std::vector<double>> embeddings;  // z_t per clean test window
  std::vector<int> labels;
};

// Clean test accuracy; with `with_corruption` also accuracy on the corrupted
// raw test windows, normalized with the checkpoint's statistics.
Evaluation evaluate(const Checkpoint& ck, const RunConfig& cfg, const PreparedData& data,
                    bool with_corruption);

void write_embeddings(const Evaluation& ev, const std::filesystem::path& file);

struct RunOutputs {
  PretrainResult pretrained;
  FinetuneResult finetuned;
  Evaluation evaluation;
};

// The whole pipeline. When out_dir is non-empty, checkpoints, curves, the
// report and embeddings are written there.
RunOutputs run_pipeline(const RunConfig& cfg, const std::filesystem::path& out_dir,
                        bool with_corruption, const Progress& progress = {});

}  // namespace mmtfd
