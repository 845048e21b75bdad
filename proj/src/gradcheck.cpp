#include "mmtfd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mmtfd/model.hpp"
#include "mmtfd/objective.hpp"
#include "mmtfd/rng.hpp"

namespace mmtfd {

namespace {

double eval_with_pattern(const ScalarFn& f, std::span<const Tensor> inputs,
                         std::vector<bool>* pattern) {
  KinkRecorder rec;
  const double v = f(inputs).item();
  if (pattern) *pattern = std::move(rec.pattern);
  return v;
}

}  // namespace

std::vector<std::vector<double>> numeric_gradients(const ScalarFn& f,
                                                   std::vector<Tensor>& inputs, double step,
                                                   std::vector<std::vector<char>>* kinked) {
  NoGradGuard guard;
  std::vector<bool> base, up_pat, down_pat;
  if (kinked) {
    kinked->clear();
    eval_with_pattern(f, inputs, &base);
  }
  std::vector<std::vector<double>> out;
  for (auto& x : inputs) {
    std::vector<double> g(x.numel());
    std::vector<char> k(x.numel(), 0);
    auto v = x.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + step;
      const double up = eval_with_pattern(f, inputs, kinked ? &up_pat : nullptr);
      v[i] = keep - step;
      const double down = eval_with_pattern(f, inputs, kinked ? &down_pat : nullptr);
      v[i] = keep;
      g[i] = (up - down) / (2.0 * step);
      if (kinked) k[i] = up_pat != base || down_pat != base;
    }
    out.push_back(std::move(g));
    if (kinked) kinked->push_back(std::move(k));
  }
  return out;
}

GradCheckResult check_gradients(const std::string& name, const ScalarFn& f,
                                std::vector<Tensor> inputs, double step, double tolerance) {
  for (auto& x : inputs) x = x.clone(true);
  const Tensor y = f(inputs);
  const auto analytic = gradients(y, inputs, false);
  std::vector<std::vector<char>> kinked;
  const auto numeric = numeric_gradients(f, inputs, step, &kinked);

  GradCheckResult r;
  r.name = name;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto a = analytic[t].data();
    const auto& n = numeric[t];
    double diff = 0.0, mag = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (kinked[t][i]) {
        ++r.skipped;
        continue;
      }
      ++r.compared;
      diff = std::max(diff, std::abs(a[i] - n[i]));
      mag = std::max({mag, std::abs(a[i]), std::abs(n[i])});
    }
    // Tensors with (near) zero gradient are compared in absolute terms.
    const double err = diff / std::max(mag, 1e-6);
    r.max_rel_error = std::max(r.max_rel_error, err);
  }
  const double total = static_cast<double>(r.compared + r.skipped);
  r.passed = r.max_rel_error <= tolerance && std::isfinite(r.max_rel_error) &&
             static_cast<double>(r.skipped) <= kMaxSkippedFraction * total;
  return r;
}

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// Values bounded away from zero, for ops with a kink at 0.
Tensor away_from_zero(Rng& rng, Shape shape) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// Reduces a tensor to a scalar with fixed random weights so every output
// element contributes a distinct amount.
struct Readout {
  Tensor weights;
  Tensor operator()(const Tensor& out) const { return sum(mul(out, weights)); }
};

Readout readout(Rng& rng, const Shape& shape) { return {random_tensor(rng, shape)}; }

void add_op_checks(std::vector<GradCheckResult>& results, std::uint64_t seed, double step,
                   double tol) {
  Rng rng = make_rng(seed, 0x6c);
  const std::string tag = "#" + std::to_string(seed);
  auto check = [&](const std::string& name, const ScalarFn& f, std::vector<Tensor> in) {
    results.push_back(check_gradients(name + tag, f, std::move(in), step, tol));
  };
  const Shape s34{3, 4};
  const auto r34 = readout(rng, s34);

  check("matmul", [](auto in) { return sum(matmul(in[0], in[1])); },
        {random_tensor(rng, {5, 7}), random_tensor(rng, {7, 3})});
  check("add", [r34](auto in) { return r34(add(in[0], in[1])); },
        {random_tensor(rng, s34), random_tensor(rng, s34)});
  check("sub", [r34](auto in) { return r34(sub(in[0], in[1])); },
        {random_tensor(rng, s34), random_tensor(rng, s34)});
  check("mul", [r34](auto in) { return r34(mul(in[0], in[1])); },
        {random_tensor(rng, s34), random_tensor(rng, s34)});
  check("div", [r34](auto in) { return r34(div(in[0], in[1])); },
        {random_tensor(rng, s34), random_tensor(rng, s34, 0.5, 2.0)});
  check("scale", [r34](auto in) { return r34(scale(in[0], -1.7)); }, {random_tensor(rng, s34)});
  check("add_scalar", [r34](auto in) { return r34(add_scalar(in[0], 0.3)); },
        {random_tensor(rng, s34)});
  check("neg", [r34](auto in) { return r34(neg(in[0])); }, {random_tensor(rng, s34)});
  check("exp", [r34](auto in) { return r34(exp(in[0])); }, {random_tensor(rng, s34)});
  check("log", [r34](auto in) { return r34(log(in[0])); }, {random_tensor(rng, s34, 0.5, 2.0)});
  check("sqrt", [r34](auto in) { return r34(sqrt(in[0])); },
        {random_tensor(rng, s34, 0.5, 2.0)});
  check("relu", [r34](auto in) { return r34(relu(in[0])); }, {away_from_zero(rng, s34)});

  const auto r43 = readout(rng, {4, 3});
  check("transpose", [r43](auto in) { return r43(transpose(in[0])); }, {random_tensor(rng, s34)});
  const auto r26 = readout(rng, {2, 6});
  check("reshape", [r26](auto in) { return r26(reshape(in[0], {2, 6})); },
        {random_tensor(rng, s34)});
  check("sum", [](auto in) { return scale(sum(in[0]), 0.7); }, {random_tensor(rng, s34)});
  const auto r31 = readout(rng, {3, 1});
  check("sum_rows", [r31](auto in) { return r31(sum_rows(in[0])); }, {random_tensor(rng, s34)});
  const auto r14 = readout(rng, {1, 4});
  check("sum_cols", [r14](auto in) { return r14(sum_cols(in[0])); }, {random_tensor(rng, s34)});
  check("mean_rows", [r14](auto in) { return r14(mean_rows(in[0])); },
        {random_tensor(rng, s34)});
  check("mean", [](auto in) { return mean(mul(in[0], in[0])); }, {random_tensor(rng, s34)});
  check("broadcast_cols", [r34](auto in) { return r34(broadcast_cols(in[0], 4)); },
        {random_tensor(rng, {3, 1})});
  check("broadcast_rows", [r34](auto in) { return r34(broadcast_rows(in[0], 3)); },
        {random_tensor(rng, {1, 4})});
  check("expand", [r34](auto in) { return r34(expand(in[0], {3, 4})); },
        {random_tensor(rng, {1})});

  const auto r36 = readout(rng, {3, 6});
  check("concat_cols",
        [r36](auto in) {
          std::vector<Tensor> parts{in[0], in[1]};
          return r36(concat_cols(parts));
        },
        {random_tensor(rng, {3, 2}), random_tensor(rng, s34)});
  const auto r54 = readout(rng, {5, 4});
  check("concat_rows",
        [r54](auto in) {
          std::vector<Tensor> parts{in[0], in[1]};
          return r54(concat_rows(parts));
        },
        {random_tensor(rng, {2, 4}), random_tensor(rng, s34)});
  const auto r32 = readout(rng, {3, 2});
  check("slice_cols", [r32](auto in) { return r32(slice_cols(in[0], 1, 2)); },
        {random_tensor(rng, s34)});
  const auto r24 = readout(rng, {2, 4});
  check("slice_rows", [r24](auto in) { return r24(slice_rows(in[0], 1, 2)); },
        {random_tensor(rng, s34)});
  const auto r37 = readout(rng, {3, 7});
  check("pad_cols", [r37](auto in) { return r37(pad_cols(in[0], 2, 7)); },
        {random_tensor(rng, s34)});
  const auto r64 = readout(rng, {6, 4});
  check("pad_rows", [r64](auto in) { return r64(pad_rows(in[0], 1, 6)); },
        {random_tensor(rng, s34)});

  check("softmax_rows", [r34](auto in) { return r34(softmax_rows(in[0])); },
        {random_tensor(rng, s34, -2.0, 2.0)});
  check("log_softmax_rows", [r34](auto in) { return r34(log_softmax_rows(in[0])); },
        {random_tensor(rng, s34, -2.0, 2.0)});
  check("layer_norm", [r34](auto in) { return r34(layer_norm(in[0], in[1], in[2])); },
        {random_tensor(rng, s34), random_tensor(rng, {4}, 0.5, 1.5), random_tensor(rng, {4})});
  const auto r35 = readout(rng, {3, 5});
  check("linear", [r35](auto in) { return r35(linear(in[0], in[1], in[2])); },
        {random_tensor(rng, s34), random_tensor(rng, {4, 5}), random_tensor(rng, {5})});
  check("mse", [](auto in) { return mse(in[0], in[1]); },
        {random_tensor(rng, s34), random_tensor(rng, s34)});
  const std::vector<int> labels{0, 3, 1};
  check("cross_entropy", [labels](auto in) { return cross_entropy(in[0], labels); },
        {random_tensor(rng, s34, -2.0, 2.0)});
  check("l2_normalize_rows", [r34](auto in) { return r34(l2_normalize_rows(in[0])); },
        {random_tensor(rng, s34)});
  check("align_loss", [](auto in) { return align_loss(in[0], in[1]); },
        {random_tensor(rng, s34), random_tensor(rng, s34)});
  check("cross_corr_loss", [](auto in) { return cross_corr_loss(in[0], in[1]); },
        {random_tensor(rng, {5, 3}), random_tensor(rng, {5, 3})});

  const auto r48 = readout(rng, {4, 8});
  check("multi_head_attention",
        [r48](auto in) {
          AttentionParams p{{in[1], in[2]}, in[3]};
          return r48(multi_head_attention(in[0], p).out);
        },
        {random_tensor(rng, {4, 8}), random_tensor(rng, {8, 8}, -0.5, 0.5),
         random_tensor(rng, {8, 8}, -0.5, 0.5), random_tensor(rng, {8, 16}, -0.5, 0.5)});
}

// One encoder block per branch, L = 4 patches, d = 8, two heads. The loss
// combines both classification heads and the alignment term over a batch of 2.
void add_model_check(std::vector<GradCheckResult>& results, std::uint64_t seed, double step,
                     double tol) {
  ModelConfig cfg;
  cfg.input_length = 16;
  cfg.patch = 4;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.depth = 1;
  cfg.d_proj = 4;
  cfg.n_classes = 3;
  const Params init = init_params(cfg, seed);

  Rng rng = make_rng(seed, 0x30de1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Signal> batch(2);
  for (auto& s : batch) {
    s.samples.resize(cfg.input_length);
    for (auto& v : s.samples) v = gauss(rng);
  }
  const std::vector<int> labels{2, 0};

  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  for (const auto& [n, t] : init) {
    names.push_back(n);
    inputs.push_back(t);
  }
  ScalarFn f = [&](std::span<const Tensor> in) {
    Params p;
    for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], in[i]);
    std::vector<Tensor> zt, zf, lt, lf;
    for (const auto& s : batch) {
      auto b = forward_branches(s, p, cfg);
      zt.push_back(b.z_t);
      zf.push_back(b.z_f);
      lt.push_back(b.logits_t);
      lf.push_back(b.logits_f);
    }
    LossParts parts;
    parts.align = align_loss(concat_rows(zt), concat_rows(zf));
    parts.cls_time = cls_loss(concat_rows(lt), labels);
    parts.cls_freq = cls_loss(concat_rows(lf), labels);
    return final_loss(parts, LossWeights{});
  };
  results.push_back(check_gradients("model_1block#" + std::to_string(seed), f, inputs, step, tol));
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::span<const std::uint64_t> seeds,
                                                 double step, double tolerance) {
  std::vector<GradCheckResult> results;
  for (auto seed : seeds) {
    add_op_checks(results, seed, step, tolerance);
    add_model_check(results, seed, step, tolerance);
  }
  return results;
}

}  // namespace mmtfd
