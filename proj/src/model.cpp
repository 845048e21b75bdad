#include "mmtfd/model.hpp"

#include <cmath>

#include "mmtfd/errors.hpp"
#include "mmtfd/rng.hpp"

namespace mmtfd {

namespace {

const Tensor& param(const Params& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ContractError("model: missing parameter '" + name + "'");
  return it->second;
}

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor uniform_init(const std::string& name, Shape shape, std::size_t fan_in,
                    std::uint64_t seed) {
  Rng rng = make_rng(seed, name_hash(name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

void add_linear(Params& p, const std::string& prefix, std::size_t in, std::size_t out,
                std::uint64_t seed) {
  p[prefix + ".W"] = uniform_init(prefix + ".W", {in, out}, in, seed);
  p[prefix + ".b"] = uniform_init(prefix + ".b", {out}, in, seed);
}

void add_encoder(Params& p, const std::string& br, const ModelConfig& cfg, std::uint64_t seed) {
  const std::size_t d = cfg.d_model;
  add_linear(p, br + ".embed", cfg.patch, d, seed);
  p[br + ".embed.pos"] = uniform_init(br + ".embed.pos", {cfg.seq_len(), d}, d, seed);
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string blk = br + ".block" + std::to_string(b);
    for (std::size_t m = 0; m < cfg.heads; ++m) {
      const std::string q = blk + ".attn.Q" + std::to_string(m);
      p[q] = uniform_init(q, {d, d}, d, seed);
    }
    p[blk + ".attn.Wo"] = uniform_init(blk + ".attn.Wo", {d, cfg.heads * d}, cfg.heads * d, seed);
    p[blk + ".ln1.gamma"] = Tensor::full({d}, 1.0, true);
    p[blk + ".ln1.beta"] = Tensor::zeros({d}, true);
    add_linear(p, blk + ".ff1", d, cfg.ff_mult * d, seed);
    add_linear(p, blk + ".ff2", cfg.ff_mult * d, d, seed);
    p[blk + ".ln2.gamma"] = Tensor::full({d}, 1.0, true);
    p[blk + ".ln2.beta"] = Tensor::zeros({d}, true);
  }
  add_linear(p, br + ".proj1", d, d, seed);
  add_linear(p, br + ".proj2", d, cfg.d_proj, seed);
}

}  // namespace

void ModelConfig::validate() const {
  if (input_length == 0 || patch == 0 || d_model == 0 || heads == 0 || d_proj == 0 ||
      ff_mult == 0) {
    throw ConfigError("model: dimensions must be positive");
  }
  if (n_classes < 2) throw ConfigError("model: need at least 2 classes");
}

AttentionParams attention_params(const Params& p, const std::string& prefix, std::size_t heads) {
  AttentionParams a;
  for (std::size_t m = 0; m < heads; ++m) {
    a.queries.push_back(param(p, prefix + ".Q" + std::to_string(m)));
  }
  a.w_o = param(p, prefix + ".Wo");
  return a;
}

AttentionOutput multi_head_attention(const Tensor& h, const AttentionParams& p) {
  if (h.rank() != 2) throw DimensionError("attention: H must be L x d");
  const std::size_t d = h.shape()[1];
  if (p.queries.empty()) throw ContractError("attention: no heads");
  for (const auto& q : p.queries) {
    if (q.shape() != Shape{d, d}) {
      throw DimensionError("attention: query matrix must be " + shape_str({d, d}) + ", got " +
                           shape_str(q.shape()));
    }
  }
  if (p.w_o.shape() != Shape{d, p.queries.size() * d}) {
    throw DimensionError("attention: W_o must be d x (M*d), got " + shape_str(p.w_o.shape()));
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const Tensor h_t = transpose(h);
  AttentionOutput result;
  std::vector<Tensor> heads;
  for (const auto& q : p.queries) {
    Tensor scores = scale(matmul(matmul(h, q), h_t), inv_sqrt_d);
    Tensor weights = softmax_rows(scores);
    heads.push_back(matmul(weights, h));
    result.weights.push_back(weights);
  }
  Tensor cat = heads.size() == 1 ? heads.front() : concat_cols(heads);
  result.out = matmul(cat, transpose(p.w_o));
  return result;
}

Tensor embed(std::span<const double> input, const Params& p, const std::string& prefix,
             const ModelConfig& cfg) {
  const std::size_t patch = cfg.patch;
  const std::size_t len = (input.size() + patch - 1) / patch;
  const Tensor& pos = param(p, prefix + ".embed.pos");
  if (len == 0) throw ContractError("embed: empty input");
  if (len > pos.shape()[0]) {
    throw DimensionError("embed: input of " + std::to_string(input.size()) +
                         " samples exceeds the positional table");
  }
  std::vector<double> patches(len * patch, 0.0);
  std::copy(input.begin(), input.end(), patches.begin());
  Tensor x = Tensor::from({len, patch}, std::move(patches));
  Tensor h = linear(x, param(p, prefix + ".embed.W"), param(p, prefix + ".embed.b"));
  const Tensor positions = len == pos.shape()[0] ? pos : slice_rows(pos, 0, len);
  return add(h, positions);
}

Tensor transformer_encode(const Tensor& h, const Params& p, const std::string& prefix,
                          const ModelConfig& cfg, std::vector<Tensor>* attention_weights) {
  Tensor x = h;
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const std::string blk = prefix + ".block" + std::to_string(b);
    AttentionOutput attn = multi_head_attention(x, attention_params(p, blk + ".attn", cfg.heads));
    if (attention_weights) {
      attention_weights->insert(attention_weights->end(), attn.weights.begin(),
                                attn.weights.end());
    }
    x = layer_norm(add(x, attn.out), param(p, blk + ".ln1.gamma"), param(p, blk + ".ln1.beta"));
    Tensor ff = relu(linear(x, param(p, blk + ".ff1.W"), param(p, blk + ".ff1.b")));
    ff = linear(ff, param(p, blk + ".ff2.W"), param(p, blk + ".ff2.b"));
    x = layer_norm(add(x, ff), param(p, blk + ".ln2.gamma"), param(p, blk + ".ln2.beta"));
  }
  return mean_rows(x);
}

Tensor project(const Tensor& features, const Params& p, const std::string& prefix) {
  Tensor hidden = relu(linear(features, param(p, prefix + "1.W"), param(p, prefix + "1.b")));
  return linear(hidden, param(p, prefix + "2.W"), param(p, prefix + "2.b"));
}

std::vector<double> frequency_input(const Signal& x) {
  auto mag = magnitude(fft(x));
  const double s = 1.0 / std::sqrt(static_cast<double>(x.size()));
  for (auto& v : mag) v *= s;
  return mag;
}

BranchOutputs forward_branches(const Signal& x, const Params& p, const ModelConfig& cfg) {
  BranchOutputs out;
  out.feat_t = transformer_encode(embed(x.samples, p, "t", cfg), p, "t", cfg);
  const auto spectrum = frequency_input(x);
  out.feat_f = transformer_encode(embed(spectrum, p, "f", cfg), p, "f", cfg);
  out.z_t = project(out.feat_t, p, "t.proj");
  out.z_f = project(out.feat_f, p, "f.proj");
  const Tensor& w = param(p, "cls.W");
  const Tensor& b = param(p, "cls.b");
  out.logits_t = linear(out.feat_t, w, b);
  out.logits_f = linear(out.feat_f, w, b);
  return out;
}

Params init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Params p;
  add_encoder(p, "t", cfg, seed);
  add_encoder(p, "f", cfg, seed);
  add_linear(p, "cls", cfg.d_model, cfg.n_classes, seed);
  return p;
}

void add_linear_head(Params& p, const std::string& prefix, std::size_t d_in,
                     std::size_t n_outputs, std::uint64_t seed) {
  add_linear(p, prefix, d_in, n_outputs, seed);
}

bool is_classifier_param(const std::string& name) { return name.rfind("cls.", 0) == 0; }

}  // namespace mmtfd
