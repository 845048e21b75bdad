#pragma once

// Time/frequency twin transformer encoders with multi-query attention,
// projection heads and a shared classifier.
//
// All forward functions are pure in the parameters: they read tensors out of
// a Params map, so the same code runs on meta-parameters and on adapted
// copies produced inside a meta-learning inner loop.

#include <cstdint>
#include <string>
#include <vector>

#include "mmtfd/spectral.hpp"
#include "mmtfd/tensor.hpp"

namespace mmtfd {

struct ModelConfig {
  std::size_t input_length = 2048;  // samples per window fed to the encoders
  std::size_t patch = 128;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t depth = 2;
  std::size_t d_proj = 32;
  std::size_t n_classes = 3;
  std::size_t ff_mult = 4;

  std::size_t seq_len() const { return (input_length + patch - 1) / patch; }
  void validate() const;
};

// Views into a Params map for one attention layer.
struct AttentionParams {
  std::vector<Tensor> queries;  // M tensors, d x d
  Tensor w_o;                   // d x (M*d)
};

struct AttentionOutput {
  Tensor out;                   // L x d
  std::vector<Tensor> weights;  // per head, L x L, row-stochastic
};

AttentionParams attention_params(const Params& p, const std::string& prefix, std::size_t heads);

// Head m: A_m = softmax_rows((H Q_m) H^T / sqrt(d)) H. Heads are concatenated
// along features and mapped back to d by W_o: H' = [A_1 ... A_M] W_o^T.
AttentionOutput multi_head_attention(const Tensor& h, const AttentionParams& p);

// Non-overlapping patches of length `patch` mapped linearly to d, plus a
// learned positional row per patch. Inputs shorter than a multiple of the
// patch size are zero-padded. Output: L x d with L = ceil(T / patch).
Tensor embed(std::span<const double> input, const Params& p, const std::string& prefix,
             const ModelConfig& cfg);

// `depth` post-norm blocks followed by mean pooling over positions; 1 x d.
Tensor transformer_encode(const Tensor& h, const Params& p, const std::string& prefix,
                          const ModelConfig& cfg,
                          std::vector<Tensor>* attention_weights = nullptr);

// Two-layer projection head d -> d -> d_proj with a relu in between.
Tensor project(const Tensor& features, const Params& p, const std::string& prefix);

struct BranchOutputs {
  Tensor z_t;       // 1 x d_proj
  Tensor z_f;       // 1 x d_proj
  Tensor feat_t;    // 1 x d, pooled encoder output before projection
  Tensor feat_f;    // 1 x d
  Tensor logits_t;  // 1 x n_classes
  Tensor logits_f;  // 1 x n_classes
};

// Magnitude spectrum fed to the frequency encoder, scaled by 1/sqrt(T) so its
// energy equals that of the time-domain window.
std::vector<double> frequency_input(const Signal& x);

BranchOutputs forward_branches(const Signal& x, const Params& p, const ModelConfig& cfg);

// Fresh parameters: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight,
// bias and positional table; layer-norm gains 1 and offsets 0.
Params init_params(const ModelConfig& cfg, std::uint64_t seed);

// Adds a d -> n_outputs linear head under `prefix` (used for pseudo-label
// instance discrimination during pretraining).
void add_linear_head(Params& p, const std::string& prefix, std::size_t d_in,
                     std::size_t n_outputs, std::uint64_t seed);

bool is_classifier_param(const std::string& name);

}  // namespace mmtfd
