#pragma once

// Episodic task sampling and MAML-style bi-level optimization.
//
// The learner is described only by a TaskLoss callback, so the same code
// drives the transformer model and closed-form toy problems.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mmtfd/tensor.hpp"

namespace mmtfd {

enum class MetaOrder { first, second };

struct MetaConfig {
  double alpha = 0.01;  // inner learning rate
  double beta = 0.001;  // outer learning rate
  int inner_steps = 1;
  MetaOrder order = MetaOrder::first;
  int tasks_per_batch = 4;
  // Optional per-parameter multipliers on alpha (inner) and beta (outer).
  LrScale inner_scale;
  LrScale outer_scale;

  void validate() const;
};

// Item indices into some dataset plus their episode-local labels.
struct EpisodeSet {
  std::vector<int> items;
  std::vector<int> labels;
};

struct EpisodeTask {
  EpisodeSet support;
  EpisodeSet query;
  std::vector<int> class_map;  // episode label -> original class id
};

// Draws `count` tasks. Each picks n_way distinct classes, then k_shot support
// and q query items per class without replacement, so support and query are
// disjoint. Deterministic in seed.
std::vector<EpisodeTask> sample_tasks(std::span<const int> labels, int n_way, int k_shot, int q,
                                      int count, std::uint64_t seed);

struct TaskEval {
  Tensor loss;  // scalar
  std::size_t correct = 0;
  std::size_t total = 0;
};

using TaskLoss = std::function<TaskEval(const Params& theta, const EpisodeSet& set)>;

// theta' = theta - alpha * grad L(support; theta), inner_steps times. theta is
// never modified. With create_graph the result stays differentiable in theta.
Params inner_adapt(const Params& theta, const EpisodeSet& support, const TaskLoss& loss,
                   const MetaConfig& cfg, bool create_graph);

struct OuterResult {
  Params grads;  // d/d theta of the summed query loss, as constants
  double query_loss = 0.0;  // summed over tasks
  double query_accuracy = 0.0;
};

// Summed query-loss gradient over tasks, reduced in task order. First order
// evaluates the gradient at each theta'_i; second order differentiates
// through inner_adapt.
OuterResult outer_gradient(const Params& theta, std::span<const EpisodeTask> tasks,
                           const TaskLoss& loss, const MetaConfig& cfg);

// theta <- theta - beta * sum_i grad L(query_i; theta'_i). Returns new leaves.
Params outer_update(const Params& theta, std::span<const EpisodeTask> tasks,
                    const TaskLoss& loss, const MetaConfig& cfg);

struct MetaRecord {
  int iteration = 0;
  double query_loss = 0.0;
  double query_accuracy = 0.0;
};

struct EpisodeShape {
  int n_way = 3;
  int k_shot = 5;
  int q = 15;
};

// Applies an outer gradient to theta in place. The default is a plain step
// theta -= beta * outer_scale(name) * g.
using OuterStep = std::function<void(Params& theta, const Params& grads)>;

struct MetaTrainResult {
  Params theta;
  std::vector<MetaRecord> history;
};

MetaTrainResult meta_train(std::span<const int> labels, const Params& theta,
                           const TaskLoss& loss, const MetaConfig& cfg, const EpisodeShape& shape,
                           int iterations, std::uint64_t seed, const OuterStep& step = {});

// Copies values into fresh requires_grad leaves.
Params clone_params(const Params& p);

}  // namespace mmtfd
