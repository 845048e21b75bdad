#include "mmtfd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mmtfd/errors.hpp"
#include "mmtfd/rng.hpp"

namespace mmtfd {

namespace {

// Stream ids for the seeded stages of a run.
enum Stream : std::uint64_t {
  kDataStream = 0xda7a,
  kSplitStream = 0x5117,
  kInitStream = 0x1417,
  kBatchStream = 0xb47c,
  kViewStream = 0x71e3,
  kBudgetStream = 0x1abe,
  kTaskStream = 0x7a5c,
  kCorruptStream = 0xc044,
};

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

bool uses_freq(const RunConfig& cfg) { return !cfg.ablation.no_freq; }

// Parameters a stage trains; the tensors are shared with `all`.
Params select(const Params& all, const std::function<bool(const std::string&)>& keep) {
  Params out;
  for (const auto& [n, t] : all)
    if (keep(n)) out.emplace(n, t);
  return out;
}

// Parameters the loss did not reach (e.g. the time projection head under a
// stopped alignment target) get an explicit zero gradient.
void require_finite_grads(Params& p) {
  for (auto& [name, t] : p) {
    if (!t.has_grad()) t.set_grad(Tensor::zeros(t.shape()));
    for (double g : t.grad().data()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
    }
  }
}

int argmax_row(const Tensor& logits) {
  auto v = logits.data();
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Losses and decisions for a batch of windows under the configured objective.
struct BatchEval {
  Tensor loss;
  std::vector<int> predictions;
};

BatchEval batch_objective(const Params& p, const std::vector<const Signal*>& xs,
                          std::span<const int> labels, const RunConfig& cfg) {
  const bool freq = uses_freq(cfg);
  std::vector<Tensor> zt, zf, lt, lf;
  for (const Signal* x : xs) {
    ViewOutputs o = forward_view(*x, p, cfg.model, freq);
    zt.push_back(o.z_t);
    lt.push_back(o.logits_t);
    if (freq) {
      zf.push_back(o.z_f);
      lf.push_back(o.logits_f);
    }
  }
  const Tensor logits_t = concat_rows(lt);
  LossParts parts;
  parts.cls_time = cls_loss(logits_t, labels);
  Tensor decision = logits_t;
  if (freq) {
    parts.align = align_loss(concat_rows(zt), concat_rows(zf), cfg.loss.stop_target);
    if (cfg.meta.objective == TaskObjective::joint) {
      const Tensor logits_f = concat_rows(lf);
      parts.cls_freq = cls_loss(logits_f, labels);
      decision = add(logits_t, logits_f);
    }
  }
  BatchEval out;
  out.loss = final_loss(parts, cfg.loss.weights);
  for (std::size_t r = 0; r < xs.size(); ++r) {
    out.predictions.push_back(argmax_row(slice_rows(decision.detach(), r, 1)));
  }
  return out;
}

}  // namespace

PreparedData prepare_data(const RunConfig& cfg) {
  std::vector<SignalRecord> records =
      cfg.data.manifest.empty()
          ? synth_generate(cfg.data.synth, cfg.data.records_per_class, mix_seed(cfg.seed, kDataStream))
          : load_manifest(cfg.data.manifest);
  for (const auto& r : records) {
    if (r.label < 0 || static_cast<std::size_t>(r.label) >= cfg.model.n_classes) {
      throw ConfigError("record '" + r.source + "' has label " + std::to_string(r.label) +
                        " outside [0, model.n_classes)");
    }
  }
  WindowDataset all = window_records(records, cfg.data.window, cfg.data.step);
  auto [train, test] = split(all, cfg.data.train_ratio, mix_seed(cfg.seed, kSplitStream));
  PreparedData out;
  out.test_raw = test;
  NormalizedSplit ns = normalize(std::move(train), std::move(test), cfg.data.normalization);
  out.train = std::move(ns.train);
  out.test = std::move(ns.test);
  out.stats = ns.stats;
  out.n_classes = cfg.model.n_classes;
  if (out.test.windows.empty()) throw CapacityError("test split is empty");
  return out;
}

ViewOutputs forward_view(const Signal& x, const Params& p, const ModelConfig& cfg,
                         bool with_freq) {
  if (with_freq) {
    BranchOutputs b = forward_branches(x, p, cfg);
    return {b.z_t, b.z_f, b.feat_t, b.feat_f, b.logits_t, b.logits_f};
  }
  ViewOutputs o;
  o.feat_t = transformer_encode(embed(x.samples, p, "t", cfg), p, "t", cfg);
  o.z_t = project(o.feat_t, p, "t.proj");
  o.logits_t = linear(o.feat_t, p.at("cls.W"), p.at("cls.b"));
  return o;
}

int predict(const Params& p, const Signal& x, const RunConfig& cfg) {
  NoGradGuard guard;
  const bool freq = uses_freq(cfg);
  ViewOutputs o = forward_view(x, p, cfg.model, freq);
  if (freq && cfg.meta.objective == TaskObjective::joint) return argmax_row(add(o.logits_t, o.logits_f));
  return argmax_row(o.logits_t);
}

PretrainResult pretrain(const RunConfig& cfg, const PreparedData& data, const Progress& progress) {
  cfg.validate();
  const std::size_t n = data.train.size();
  if (n == 0) throw CapacityError("pretrain: no unlabeled windows");
  const bool freq = uses_freq(cfg);

  Params params = init_params(cfg.model, mix_seed(cfg.seed, kInitStream));
  add_linear_head(params, "inst", cfg.model.d_model, n, mix_seed(cfg.seed, kInitStream));
  Params trained = select(params, [freq](const std::string& name) {
    return !is_classifier_param(name) && (freq || !starts_with(name, "f."));
  });
  SgdState opt;
  opt.learning_rate = cfg.pretrain.learning_rate;
  opt.momentum = cfg.pretrain.momentum;
  opt.weight_decay = cfg.pretrain.weight_decay;

  PretrainResult result;
  const std::size_t batch = std::min(cfg.pretrain.batch_size, n);
  std::vector<int> order(n);
  for (int it = 0; it < cfg.pretrain.iterations; ++it) {
    Rng rng = make_rng(cfg.seed, mix_seed(kBatchStream, static_cast<std::uint64_t>(it)));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    AugPolicy policy = cfg.augment;
    policy.seed = mix_seed(cfg.seed, mix_seed(kViewStream, static_cast<std::uint64_t>(it)));
    std::vector<Tensor> zt, zf, ft, ff;
    std::vector<int> pseudo;
    for (std::size_t b = 0; b < batch; ++b) {
      const int idx = order[b];
      const Signal& x = data.train.windows[static_cast<std::size_t>(idx)].signal;
      auto views = cfg.ablation.no_aug ? crop_views(x, policy, cfg.pretrain.views, idx)
                                       : sample_views(x, policy, cfg.pretrain.views, idx);
      for (const auto& v : views) {
        ViewOutputs o = forward_view(v.signal, params, cfg.model, freq);
        zt.push_back(o.z_t);
        ft.push_back(o.feat_t);
        if (freq) {
          zf.push_back(o.z_f);
          ff.push_back(o.feat_f);
        }
        pseudo.push_back(v.source_index);
      }
    }
    const Tensor& w = params.at("inst.W");
    const Tensor& bias = params.at("inst.b");
    LossParts parts;
    parts.cls_time = cls_loss(linear(concat_rows(ft), w, bias), pseudo);
    Tensor z_t = concat_rows(zt);
    double align_value = 0.0;
    Tensor extra;
    if (freq) {
      Tensor z_f = concat_rows(zf);
      parts.align = align_loss(z_t, z_f, cfg.loss.stop_target);
      parts.cls_freq = cls_loss(linear(concat_rows(ff), w, bias), pseudo);
      align_value = parts.align.item();
      if (cfg.loss.cross_corr_weight > 0.0 && z_t.rows() >= 2) {
        extra = scale(cross_corr_loss(z_t, z_f), cfg.loss.cross_corr_weight);
      }
    }
    Tensor loss = final_loss(parts, cfg.loss.weights);
    if (extra.defined()) loss = add(loss, extra);
    if (!std::isfinite(loss.item())) {
      throw NumericError("pretrain: non-finite loss at iteration " + std::to_string(it));
    }
    backward(loss);
    require_finite_grads(trained);
    sgd_step(trained, opt);
    zero_grad(params);
    result.loss.push_back(loss.item());
    result.align.push_back(align_value);
    if (progress && (it % 25 == 0 || it + 1 == cfg.pretrain.iterations)) {
      progress("pretrain " + std::to_string(it) + " loss " + std::to_string(loss.item()) +
               " align " + std::to_string(align_value));
    }
  }
  result.checkpoint.params = std::move(params);
  result.checkpoint.norm = data.stats;
  result.checkpoint.config_json = config_to_json(cfg);
  result.checkpoint.step = static_cast<std::uint64_t>(cfg.pretrain.iterations);
  return result;
}

FinetuneResult finetune(const Checkpoint& pretrained, const RunConfig& cfg,
                        const PreparedData& data, const Progress& progress) {
  cfg.validate();
  const bool freq = uses_freq(cfg);
  FinetuneResult result;
  result.labeled = label_budget(data.train, cfg.finetune.label_budget,
                                mix_seed(cfg.seed, kBudgetStream));
  std::vector<int> labels;
  std::vector<std::size_t> per_class(data.n_classes, 0);
  for (int i : result.labeled) {
    const int y = data.train.windows[static_cast<std::size_t>(i)].label;
    labels.push_back(y);
    ++per_class[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c] == 0) {
      throw CapacityError("finetune: class " + std::to_string(c) + " has no labeled windows");
    }
  }

  // Fresh copies of the pretrained weights without the pseudo-label head.
  Params all;
  for (const auto& [name, t] : pretrained.params)
    if (!starts_with(name, "inst.")) all.emplace(name, t.clone(true));
  for (const char* required : {"cls.W", "cls.b"}) {
    if (!all.count(required)) throw ContractError("finetune: checkpoint lacks " + std::string(required));
  }
  Params theta = select(all, [freq](const std::string& name) {
    return freq || !starts_with(name, "f.");
  });

  const double r_cls = cfg.finetune.classifier_lr();
  const double r_bb = cfg.finetune.backbone_lr();
  const LrScale group_rate = [r_cls, r_bb](std::string_view name) {
    return is_classifier_param(std::string(name)) ? r_cls : r_bb;
  };

  auto windows_of = [&](const EpisodeSet& set) {
    std::vector<const Signal*> xs;
    std::vector<int> ys;
    for (int item : set.items) {
      const auto idx = static_cast<std::size_t>(result.labeled[static_cast<std::size_t>(item)]);
      xs.push_back(&data.train.windows[idx].signal);
      ys.push_back(labels[static_cast<std::size_t>(item)]);
    }
    return std::pair{xs, ys};
  };
  // Episode labels are only a permutation; the classifier keeps the real class ids.
  TaskLoss task_loss = [&](const Params& p, const EpisodeSet& set) {
    auto [xs, ys] = windows_of(set);
    BatchEval be = batch_objective(p, xs, ys, cfg);
    TaskEval ev{be.loss, 0, ys.size()};
    for (std::size_t i = 0; i < ys.size(); ++i) ev.correct += be.predictions[i] == ys[i];
    return ev;
  };

  EpisodeSet everything;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    everything.items.push_back(static_cast<int>(i));
    everything.labels.push_back(labels[i]);
  }

  SgdState opt;
  opt.learning_rate = 1.0;  // the group rate carries the step size
  opt.momentum = cfg.finetune.momentum;
  opt.weight_decay = cfg.finetune.weight_decay;
  const double lambda_meta = cfg.loss.weights.meta;

  if (cfg.ablation.no_bilevel) {
    for (int it = 0; it < cfg.finetune.iterations; ++it) {
      TaskEval ev = task_loss(theta, everything);
      if (!std::isfinite(ev.loss.item())) throw NumericError("finetune: non-finite loss");
      backward(scale(ev.loss, lambda_meta));
      require_finite_grads(theta);
      sgd_step(theta, opt, group_rate);
      zero_grad(theta);
      result.loss.push_back(ev.loss.item());
      result.accuracy.push_back(static_cast<double>(ev.correct) / static_cast<double>(ev.total));
    }
  } else {
    // Small budgets cannot fill k_shot + q per class: shrink the episode.
    std::size_t n_min = per_class.front();
    for (auto c : per_class) n_min = std::min(n_min, c);
    EpisodeShape shape = cfg.meta.shape;
    shape.n_way = std::min<int>(shape.n_way, static_cast<int>(data.n_classes));
    if (n_min >= 2) {
      shape.k_shot = std::max(1, std::min<int>(shape.k_shot, static_cast<int>(n_min / 2)));
      shape.q = std::min<int>(shape.q, static_cast<int>(n_min) - shape.k_shot);
    } else {
      shape.k_shot = 1;
      shape.q = 0;
    }
    MetaConfig mcfg = cfg.meta.meta;
    mcfg.alpha = 1.0;
    mcfg.inner_scale = group_rate;
    OuterStep step = [&](Params& th, const Params& grads) {
      for (auto& [name, t] : th) t.set_grad(scale(grads.at(name), lambda_meta));
      sgd_step(th, opt, group_rate);
      zero_grad(th);
    };
    MetaTrainResult mt = meta_train(labels, theta, task_loss, mcfg, shape, cfg.finetune.iterations,
                                    mix_seed(cfg.seed, kTaskStream), step);
    for (const auto& rec : mt.history) {
      result.loss.push_back(rec.query_loss / static_cast<double>(mcfg.tasks_per_batch));
      result.accuracy.push_back(rec.query_accuracy);
    }
    // Final adaptation on every labeled window, as at deployment.
    Params adapted = mt.theta;
    if (cfg.finetune.iterations > 0) adapted = inner_adapt(mt.theta, everything, task_loss, mcfg, false);
    for (auto& [name, t] : adapted) theta[name] = t;
  }
  for (const auto& [name, t] : theta) all[name] = t;
  if (progress) {
    progress("finetune done: " + std::to_string(result.labeled.size()) + " labels, last accuracy " +
             (result.accuracy.empty() ? std::string("n/a") : std::to_string(result.accuracy.back())));
  }

  result.checkpoint.params = std::move(all);
  result.checkpoint.norm = pretrained.norm;
  result.checkpoint.config_json = config_to_json(cfg);
  result.checkpoint.step = pretrained.step + static_cast<std::uint64_t>(cfg.finetune.iterations);
  return result;
}

EvalScores evaluate_predictor(const Predictor& predict_fn, const WindowDataset& ds,
                              std::size_t n_classes) {
  if (ds.windows.empty()) throw ContractError("evaluate: empty test split");
  std::vector<int> pred, truth;
  for (const auto& w : ds.windows) {
    pred.push_back(predict_fn(w.signal));
    truth.push_back(w.label);
  }
  return score(pred, truth, n_classes);
}

Evaluation evaluate(const Checkpoint& ck, const RunConfig& cfg, const PreparedData& data,
                    bool with_corruption) {
  Evaluation ev;
  const Predictor model = [&](const Signal& x) { return predict(ck.params, x, cfg); };
  ev.report.clean = evaluate_predictor(model, data.test, data.n_classes);
  {
    NoGradGuard guard;
    for (const auto& w : data.test.windows) {
      ViewOutputs o = forward_view(w.signal, ck.params, cfg.model, false);
      ev.embeddings.push_back(o.z_t.to_vector());
      ev.labels.push_back(w.label);
    }
  }
  if (with_corruption) {
    WindowDataset noisy = corrupt(data.test_raw, cfg.corrupt.noise_fraction, cfg.corrupt.variance,
                                  cfg.corrupt.mask_fraction, mix_seed(cfg.seed, kCorruptStream));
    apply_norm(noisy, ck.norm);
    ev.report.corrupted = evaluate_predictor(model, noisy, data.n_classes);
  }
  return ev;
}

void write_embeddings(const Evaluation& ev, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw CapacityError("cannot write " + file.string());
  out.precision(17);
  out << "label";
  if (!ev.embeddings.empty())
    for (std::size_t j = 0; j < ev.embeddings.front().size(); ++j) out << ",z" << j;
  out << '\n';
  for (std::size_t i = 0; i < ev.embeddings.size(); ++i) {
    out << ev.labels[i];
    for (double v : ev.embeddings[i]) out << ',' << v;
    out << '\n';
  }
}

RunOutputs run_pipeline(const RunConfig& cfg, const std::filesystem::path& out_dir,
                        bool with_corruption, const Progress& progress) {
  const PreparedData data = prepare_data(cfg);
  RunOutputs out;
  out.pretrained = pretrain(cfg, data, progress);
  out.finetuned = finetune(out.pretrained.checkpoint, cfg, data, progress);
  out.evaluation = evaluate(out.finetuned.checkpoint, cfg, data, with_corruption);
  auto& curves = out.evaluation.report.curves;
  curves["pretrain_loss"] = out.pretrained.loss;
  curves["pretrain_align"] = out.pretrained.align;
  curves["finetune_loss"] = out.finetuned.loss;
  curves["finetune_accuracy"] = out.finetuned.accuracy;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_checkpoint(out.pretrained.checkpoint, out_dir / "pretrain.ckpt");
    save_checkpoint(out.finetuned.checkpoint, out_dir / "finetune.ckpt");
    for (const auto& [name, values] : curves) write_curve_csv(values, name, out_dir / (name + ".csv"));
    std::ofstream(out_dir / "report.json") << report_json(out.evaluation.report) << '\n';
    write_embeddings(out.evaluation, out_dir / "embeddings.csv");
  }
  return out;
}

}  // namespace mmtfd
