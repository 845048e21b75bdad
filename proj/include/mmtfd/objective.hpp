#pragma once

#include <span>

#include "mmtfd/tensor.hpp"

namespace mmtfd {

struct LossWeights {
  double cls_time = 1.0;  // lambda_1
  double cls_freq = 1.0;  // lambda_2
  double meta = 1.0;      // lambda_3

  void validate() const;
};

// Mean over rows of ||n(z_f) - n(z_t)||^2 where n() L2-normalizes each row.
// With stop_target the time branch is a constant target.
Tensor align_loss(const Tensor& z_t, const Tensor& z_f, bool stop_target = false);

// Mean cross-entropy of logits (B x C) against labels in [0, C).
Tensor cls_loss(const Tensor& logits, std::span<const int> labels);

// Cross-correlation redundancy loss between column-standardized batches:
// C = z_a^T z_b / B, loss = sum_i (1 - C_ii)^2 + off_weight * sum_{i != j} C_ij^2.
Tensor cross_corr_loss(const Tensor& z_a, const Tensor& z_b, double off_weight = 5e-3);

// Any part may be left undefined; it then contributes nothing.
struct LossParts {
  Tensor align;
  Tensor cls_time;
  Tensor cls_freq;
  Tensor meta;
};

// align + l1 * cls_time + l2 * cls_freq + l3 * meta
Tensor final_loss(const LossParts& parts, const LossWeights& w);

}  // namespace mmtfd
