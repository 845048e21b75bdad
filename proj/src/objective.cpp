#include "mmtfd/objective.hpp"

#include <cmath>

#include "mmtfd/errors.hpp"

namespace mmtfd {

void LossWeights::validate() const {
  for (double w : {cls_time, cls_freq, meta}) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and >= 0");
  }
}

Tensor align_loss(const Tensor& z_t, const Tensor& z_f, bool stop_target) {
  if (z_t.shape() != z_f.shape() || z_t.rank() != 2) {
    throw DimensionError("align_loss: Z_t " + shape_str(z_t.shape()) + " vs Z_f " +
                         shape_str(z_f.shape()));
  }
  Tensor target = l2_normalize_rows(stop_target ? z_t.detach() : z_t);
  Tensor pred = l2_normalize_rows(z_f);
  Tensor diff = sub(pred, target);
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(z_t.shape()[0]));
}

Tensor cls_loss(const Tensor& logits, std::span<const int> labels) {
  return cross_entropy(logits, labels);
}

namespace {

Tensor standardize_columns(const Tensor& z) {
  const std::size_t b = z.shape()[0];
  Tensor centered = sub(z, broadcast_rows(mean_rows(z), b));
  Tensor stdev = sqrt(add_scalar(mean_rows(mul(centered, centered)), 1e-12));
  return div(centered, broadcast_rows(stdev, b));
}

}  // namespace

Tensor cross_corr_loss(const Tensor& z_a, const Tensor& z_b, double off_weight) {
  if (z_a.shape() != z_b.shape() || z_a.rank() != 2) {
    throw DimensionError("cross_corr_loss: shapes " + shape_str(z_a.shape()) + " vs " +
                         shape_str(z_b.shape()));
  }
  const std::size_t b = z_a.shape()[0], d = z_a.shape()[1];
  if (b < 2) throw ContractError("cross_corr_loss: batch of at least 2 rows required");
  Tensor corr = scale(matmul(transpose(standardize_columns(z_a)), standardize_columns(z_b)),
                      1.0 / static_cast<double>(b));
  std::vector<double> eye(d * d, 0.0), off(d * d, 1.0);
  for (std::size_t i = 0; i < d; ++i) {
    eye[i * d + i] = 1.0;
    off[i * d + i] = 0.0;
  }
  Tensor identity = Tensor::from({d, d}, eye);
  Tensor on_diag = mul(sub(corr, identity), identity);
  Tensor off_diag = mul(corr, Tensor::from({d, d}, off));
  return add(sum(mul(on_diag, on_diag)), scale(sum(mul(off_diag, off_diag)), off_weight));
}

Tensor final_loss(const LossParts& parts, const LossWeights& w) {
  Tensor total = Tensor::scalar(0.0);
  auto accumulate = [&total](const Tensor& part, double weight) {
    if (!part.defined()) return;
    if (part.numel() != 1) throw DimensionError("final_loss: loss parts must be scalars");
    total = add(total, weight == 1.0 ? reshape(part, {1}) : scale(reshape(part, {1}), weight));
  };
  accumulate(parts.align, 1.0);
  accumulate(parts.cls_time, w.cls_time);
  accumulate(parts.cls_freq, w.cls_freq);
  accumulate(parts.meta, w.meta);
  return total;
}

}  // namespace mmtfd
