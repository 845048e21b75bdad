#include "mmtfd/meta.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mmtfd/errors.hpp"
#include "mmtfd/rng.hpp"

namespace mmtfd {

namespace {

double scale_for(const LrScale& s, const std::string& name) { return s ? s(name) : 1.0; }

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void check_finite(const Tensor& loss, const std::vector<std::string>& names,
                  const std::vector<Tensor>& grads) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!all_finite(grads[i].data())) {
      throw NumericError("non-finite gradient in parameter '" + names[i] + "'");
    }
  }
  if (!std::isfinite(loss.item())) throw NumericError("non-finite task loss");
}

}  // namespace

void MetaConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("meta: alpha and beta must be >= 0");
  if (inner_steps < 1) throw ConfigError("meta: inner_steps must be >= 1");
  if (tasks_per_batch < 1) throw ConfigError("meta: tasks_per_batch must be >= 1");
}

Params clone_params(const Params& p) {
  Params out;
  for (const auto& [name, t] : p) out.emplace(name, t.clone(true));
  return out;
}

std::vector<EpisodeTask> sample_tasks(std::span<const int> labels, int n_way, int k_shot, int q,
                                      int count, std::uint64_t seed) {
  if (n_way < 1 || k_shot < 1 || q < 0 || count < 0) {
    throw ContractError("sample_tasks: need n_way >= 1, k_shot >= 1, q >= 0");
  }
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
  if (static_cast<int>(by_class.size()) < n_way) {
    throw CapacityError("sample_tasks: " + std::to_string(by_class.size()) +
                        " classes available, n_way=" + std::to_string(n_way));
  }
  for (const auto& [cls, items] : by_class) {
    if (static_cast<int>(items.size()) < k_shot + q) {
      throw CapacityError("sample_tasks: class " + std::to_string(cls) + " has " +
                          std::to_string(items.size()) + " samples, need " +
                          std::to_string(k_shot + q));
    }
  }
  std::vector<int> classes;
  for (const auto& kv : by_class) classes.push_back(kv.first);

  Rng rng = make_rng(seed, 0x7a5c);
  std::vector<EpisodeTask> tasks;
  tasks.reserve(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t) {
    std::vector<int> pool = classes;
    std::shuffle(pool.begin(), pool.end(), rng);
    EpisodeTask task;
    task.class_map.assign(pool.begin(), pool.begin() + n_way);
    for (int e = 0; e < n_way; ++e) {
      std::vector<int> items = by_class[task.class_map[static_cast<std::size_t>(e)]];
      std::shuffle(items.begin(), items.end(), rng);
      for (int i = 0; i < k_shot; ++i) {
        task.support.items.push_back(items[static_cast<std::size_t>(i)]);
        task.support.labels.push_back(e);
      }
      for (int i = 0; i < q; ++i) {
        task.query.items.push_back(items[static_cast<std::size_t>(k_shot + i)]);
        task.query.labels.push_back(e);
      }
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

Params inner_adapt(const Params& theta, const EpisodeSet& support, const TaskLoss& loss,
                   const MetaConfig& cfg, bool create_graph) {
  if (support.items.empty()) throw ContractError("inner_adapt: empty support set");
  Params current = create_graph ? theta : clone_params(theta);
  std::vector<std::string> names;
  for (const auto& kv : current) names.push_back(kv.first);

  for (int step = 0; step < cfg.inner_steps; ++step) {
    std::vector<Tensor> wrt;
    for (const auto& n : names) wrt.push_back(current.at(n));
    TaskEval eval = loss(current, support);
    auto grads = gradients(eval.loss, wrt, create_graph);
    check_finite(eval.loss, names, grads);
    Params next;
    for (std::size_t i = 0; i < names.size(); ++i) {
      const double lr = cfg.alpha * scale_for(cfg.inner_scale, names[i]);
      if (create_graph) {
        next.emplace(names[i], sub(wrt[i], scale(grads[i], lr)));
      } else {
        std::vector<double> v = wrt[i].to_vector();
        auto g = grads[i].data();
        for (std::size_t j = 0; j < v.size(); ++j) v[j] -= lr * g[j];
        next.emplace(names[i], Tensor::from(wrt[i].shape(), std::move(v), true));
      }
    }
    current = std::move(next);
  }
  return current;
}

OuterResult outer_gradient(const Params& theta, std::span<const EpisodeTask> tasks,
                           const TaskLoss& loss, const MetaConfig& cfg) {
  if (tasks.empty()) throw ContractError("outer_gradient: no tasks");
  std::vector<std::string> names;
  std::vector<Tensor> thetas;
  for (const auto& [n, t] : theta) {
    names.push_back(n);
    thetas.push_back(t);
  }
  std::vector<std::vector<double>> total(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) total[i].assign(thetas[i].numel(), 0.0);

  OuterResult result;
  std::size_t correct = 0, seen = 0;
  const bool second = cfg.order == MetaOrder::second;
  for (const auto& task : tasks) {
    Params adapted = inner_adapt(theta, task.support, loss, cfg, second);
    TaskEval q = loss(adapted, task.query);
    std::vector<Tensor> grads;
    if (second) {
      grads = gradients(q.loss, thetas, false);
    } else {
      std::vector<Tensor> wrt;
      for (const auto& n : names) wrt.push_back(adapted.at(n));
      grads = gradients(q.loss, wrt, false);
    }
    check_finite(q.loss, names, grads);
    for (std::size_t i = 0; i < names.size(); ++i) {
      auto g = grads[i].data();
      for (std::size_t j = 0; j < g.size(); ++j) total[i][j] += g[j];
    }
    result.query_loss += q.loss.item();
    correct += q.correct;
    seen += q.total;
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    result.grads.emplace(names[i], Tensor::from(thetas[i].shape(), std::move(total[i])));
  }
  result.query_accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
  return result;
}

namespace {

void plain_step(Params& theta, const Params& grads, const MetaConfig& cfg) {
  for (auto& [name, t] : theta) {
    const double lr = cfg.beta * scale_for(cfg.outer_scale, name);
    auto g = grads.at(name).data();
    std::vector<double> v = t.to_vector();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] -= lr * g[j];
    t = Tensor::from(t.shape(), std::move(v), true);
  }
}

}  // namespace

Params outer_update(const Params& theta, std::span<const EpisodeTask> tasks,
                    const TaskLoss& loss, const MetaConfig& cfg) {
  cfg.validate();
  OuterResult r = outer_gradient(theta, tasks, loss, cfg);
  Params next = clone_params(theta);
  plain_step(next, r.grads, cfg);
  return next;
}

MetaTrainResult meta_train(std::span<const int> labels, const Params& theta,
                           const TaskLoss& loss, const MetaConfig& cfg, const EpisodeShape& shape,
                           int iterations, std::uint64_t seed, const OuterStep& step) {
  cfg.validate();
  if (iterations < 0) throw ContractError("meta_train: negative iteration count");
  MetaTrainResult out{clone_params(theta), {}};
  for (int it = 0; it < iterations; ++it) {
    auto tasks = sample_tasks(labels, shape.n_way, shape.k_shot, shape.q, cfg.tasks_per_batch,
                              mix_seed(seed, static_cast<std::uint64_t>(it)));
    if (shape.q == 0) {
      for (auto& t : tasks) t.query = t.support;
    }
    OuterResult r = outer_gradient(out.theta, tasks, loss, cfg);
    if (step) {
      step(out.theta, r.grads);
    } else {
      plain_step(out.theta, r.grads, cfg);
    }
    out.history.push_back({it, r.query_loss, r.query_accuracy});
  }
  return out;
}

}  // namespace mmtfd
