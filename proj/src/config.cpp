#include "mmtfd/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mmtfd/errors.hpp"

namespace mmtfd {

using nlohmann::json;

namespace {

// Reads keys from one JSON object and complains about any it did not consume.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(path_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

SynthSpec read_synth(const json& j, const std::string& path, int* records_per_class) {
  SynthSpec s;
  Section sec(j, path);
  if (sec.has("classes")) {
    s.classes.clear();
    for (const auto& c : sec.at("classes")) {
      Section cs(c, sec.path("classes[]"));
      SynthClass k;
      cs.get("name", k.name);
      cs.get("frequency_hz", k.frequency_hz);
      cs.get("harmonics", k.harmonics);
      cs.get("impulse_rate_hz", k.impulse_rate_hz);
      cs.get("impulse_amplitude", k.impulse_amplitude);
      cs.finish();
      s.classes.push_back(std::move(k));
    }
  }
  sec.get("shaft_hz", s.shaft_hz);
  sec.get("shaft_amplitude", s.shaft_amplitude);
  sec.get("resonance_hz", s.resonance_hz);
  sec.get("impulse_decay_s", s.impulse_decay_s);
  sec.get("speed_jitter", s.speed_jitter);
  sec.get("noise_sigma", s.noise_sigma);
  sec.get("record_length", s.record_length);
  sec.get("sample_rate", s.sample_rate);
  if (records_per_class) sec.get("records_per_class", *records_per_class);
  sec.finish();
  return s;
}

json synth_json(const SynthSpec& s) {
  json classes = json::array();
  for (const auto& c : s.classes) {
    classes.push_back({{"name", c.name},
                       {"frequency_hz", c.frequency_hz},
                       {"harmonics", c.harmonics},
                       {"impulse_rate_hz", c.impulse_rate_hz},
                       {"impulse_amplitude", c.impulse_amplitude}});
  }
  return {{"classes", classes},
          {"shaft_hz", s.shaft_hz},
          {"shaft_amplitude", s.shaft_amplitude},
          {"resonance_hz", s.resonance_hz},
          {"impulse_decay_s", s.impulse_decay_s},
          {"speed_jitter", s.speed_jitter},
          {"noise_sigma", s.noise_sigma},
          {"record_length", s.record_length},
          {"sample_rate", s.sample_rate}};
}

std::string norm_name(NormMode m) { return m == NormMode::global ? "global" : "per_window"; }

NormMode norm_from(const std::string& s) {
  if (s == "global") return NormMode::global;
  if (s == "per_window") return NormMode::per_window;
  throw ConfigError("data.normalization: expected 'global' or 'per_window', got '" + s + "'");
}

std::string objective_name(TaskObjective o) {
  return o == TaskObjective::joint ? "joint" : "time_align";
}

TaskObjective objective_from(const std::string& s) {
  if (s == "time_align") return TaskObjective::time_align;
  if (s == "joint") return TaskObjective::joint;
  throw ConfigError("meta.task_objective: expected 'time_align' or 'joint', got '" + s + "'");
}

template <class F>
void rethrow_as_config(const std::string& where, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

double FinetuneConfig::classifier_lr() const {
  if (classifier_rate) return *classifier_rate;
  return label_budget < 0.0316 ? 0.05 : 1.0;
}

double FinetuneConfig::backbone_lr() const {
  if (backbone_rate) return *backbone_rate;
  return label_budget < 0.0316 ? 1e-4 : 0.01;
}

void RunConfig::validate() const {
  rethrow_as_config("data.synth", [&] {
    if (data.manifest.empty()) data.synth.validate();
  });
  if (data.records_per_class < 1) throw ConfigError("data.records_per_class must be >= 1");
  if (data.window == 0 || data.step == 0) throw ConfigError("data.window and data.step must be >= 1");
  if (!(data.train_ratio > 0.0 && data.train_ratio < 1.0)) {
    throw ConfigError("data.train_ratio must lie in (0, 1)");
  }
  rethrow_as_config("augment", [&] { augment.validate(); });
  rethrow_as_config("model", [&] { model.validate(); });
  if (model.input_length != (augment.crop_length ? augment.crop_length : data.window)) {
    throw ConfigError("model.input_length must equal the view length (augment.crop_length, or "
                      "data.window when no crop is set)");
  }
  if (data.manifest.empty() && model.n_classes != data.synth.classes.size()) {
    throw ConfigError("model.n_classes must equal the number of synthetic classes");
  }
  rethrow_as_config("loss", [&] { loss.weights.validate(); });
  if (loss.cross_corr_weight < 0.0) throw ConfigError("loss.cross_corr_weight must be >= 0");
  if (pretrain.iterations < 0) throw ConfigError("pretrain.iterations must be >= 0");
  if (pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
  if (pretrain.views < 1) throw ConfigError("pretrain.views must be >= 1");
  if (!(pretrain.learning_rate > 0.0)) throw ConfigError("pretrain.learning_rate must be > 0");
  if (pretrain.momentum < 0.0 || pretrain.momentum >= 1.0) {
    throw ConfigError("pretrain.momentum must lie in [0, 1)");
  }
  if (pretrain.weight_decay < 0.0) throw ConfigError("pretrain.weight_decay must be >= 0");
  rethrow_as_config("meta", [&] { meta.meta.validate(); });
  if (meta.shape.n_way < 1 || meta.shape.k_shot < 1 || meta.shape.q < 0) {
    throw ConfigError("meta: need n_way >= 1, k_shot >= 1, q >= 0");
  }
  if (!(finetune.label_budget > 0.0 && finetune.label_budget <= 1.0)) {
    throw ConfigError("finetune.label_budget must lie in (0, 1]");
  }
  if (finetune.iterations < 0) throw ConfigError("finetune.iterations must be >= 0");
  if (!(finetune.classifier_lr() > 0.0) || !(finetune.backbone_lr() >= 0.0)) {
    throw ConfigError("finetune: group rates must be positive");
  }
  if (finetune.momentum < 0.0 || finetune.momentum >= 1.0) {
    throw ConfigError("finetune.momentum must lie in [0, 1)");
  }
  const auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(corrupt.noise_fraction) || !unit(corrupt.mask_fraction) || corrupt.variance < 0.0) {
    throw ConfigError("corrupt: fractions must lie in [0, 1] and variance must be >= 0");
  }
}

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root(j, "config");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);

  if (root.has("data")) {
    Section s(root.at("data"), "data");
    s.get("manifest", c.data.manifest);
    if (s.has("synth")) c.data.synth = read_synth(s.at("synth"), "data.synth", nullptr);
    s.get("records_per_class", c.data.records_per_class);
    s.get("window", c.data.window);
    s.get("step", c.data.step);
    s.get("train_ratio", c.data.train_ratio);
    std::string norm = norm_name(c.data.normalization);
    s.get("normalization", norm);
    c.data.normalization = norm_from(norm);
    s.finish();
  }
  if (root.has("augment")) {
    Section s(root.at("augment"), "augment");
    if (s.has("ops")) {
      c.augment.enabled.clear();
      for (const auto& op : s.at("ops")) {
        rethrow_as_config("augment.ops", [&] {
          c.augment.enabled.push_back(aug_op_from_string(op.get<std::string>()));
        });
      }
    }
    s.get("apply_probability", c.augment.apply_probability);
    s.get("warp_scale_min", c.augment.warp_scale_min);
    s.get("warp_scale_max", c.augment.warp_scale_max);
    s.get("noise_scale", c.augment.noise_scale);
    s.get("mask_fraction_min", c.augment.mask_fraction_min);
    s.get("mask_fraction_max", c.augment.mask_fraction_max);
    s.get("crop_length", c.augment.crop_length);
    s.finish();
  }
  if (root.has("model")) {
    Section s(root.at("model"), "model");
    s.get("input_length", c.model.input_length);
    s.get("patch", c.model.patch);
    s.get("d_model", c.model.d_model);
    s.get("heads", c.model.heads);
    s.get("depth", c.model.depth);
    s.get("d_proj", c.model.d_proj);
    s.get("n_classes", c.model.n_classes);
    s.get("ff_mult", c.model.ff_mult);
    s.finish();
  }
  if (root.has("loss")) {
    Section s(root.at("loss"), "loss");
    s.get("lambda_time", c.loss.weights.cls_time);
    s.get("lambda_freq", c.loss.weights.cls_freq);
    s.get("lambda_meta", c.loss.weights.meta);
    s.get("stop_target", c.loss.stop_target);
    s.get("cross_corr_weight", c.loss.cross_corr_weight);
    s.finish();
  }
  if (root.has("pretrain")) {
    Section s(root.at("pretrain"), "pretrain");
    s.get("iterations", c.pretrain.iterations);
    s.get("batch_size", c.pretrain.batch_size);
    s.get("views", c.pretrain.views);
    s.get("learning_rate", c.pretrain.learning_rate);
    s.get("momentum", c.pretrain.momentum);
    s.get("weight_decay", c.pretrain.weight_decay);
    s.finish();
  }
  if (root.has("meta")) {
    Section s(root.at("meta"), "meta");
    s.get("alpha", c.meta.meta.alpha);
    s.get("beta", c.meta.meta.beta);
    s.get("inner_steps", c.meta.meta.inner_steps);
    s.get("tasks_per_batch", c.meta.meta.tasks_per_batch);
    std::string order = c.meta.meta.order == MetaOrder::second ? "second" : "first";
    s.get("order", order);
    if (order != "first" && order != "second") {
      throw ConfigError("meta.order: expected 'first' or 'second'");
    }
    c.meta.meta.order = order == "second" ? MetaOrder::second : MetaOrder::first;
    s.get("n_way", c.meta.shape.n_way);
    s.get("k_shot", c.meta.shape.k_shot);
    s.get("q", c.meta.shape.q);
    std::string obj = objective_name(c.meta.objective);
    s.get("task_objective", obj);
    c.meta.objective = objective_from(obj);
    s.finish();
  }
  if (root.has("finetune")) {
    Section s(root.at("finetune"), "finetune");
    s.get("label_budget", c.finetune.label_budget);
    s.get("iterations", c.finetune.iterations);
    if (s.has("classifier_rate")) {
      double v = 0.0;
      s.get("classifier_rate", v);
      c.finetune.classifier_rate = v;
    }
    if (s.has("backbone_rate")) {
      double v = 0.0;
      s.get("backbone_rate", v);
      c.finetune.backbone_rate = v;
    }
    s.get("momentum", c.finetune.momentum);
    s.get("weight_decay", c.finetune.weight_decay);
    s.finish();
  }
  if (root.has("corrupt")) {
    Section s(root.at("corrupt"), "corrupt");
    s.get("noise_fraction", c.corrupt.noise_fraction);
    s.get("variance", c.corrupt.variance);
    s.get("mask_fraction", c.corrupt.mask_fraction);
    s.finish();
  }
  if (root.has("ablation")) {
    Section s(root.at("ablation"), "ablation");
    s.get("no_bilevel", c.ablation.no_bilevel);
    s.get("no_freq", c.ablation.no_freq);
    s.get("no_aug", c.ablation.no_aug);
    s.finish();
  }
  root.finish();
  c.augment.seed = c.seed;
  c.validate();
  return c;
}

std::string config_to_json(const RunConfig& c) {
  json ops = json::array();
  for (auto op : c.augment.enabled) ops.push_back(to_string(op));
  json ft = {{"label_budget", c.finetune.label_budget},
             {"iterations", c.finetune.iterations},
             {"momentum", c.finetune.momentum},
             {"weight_decay", c.finetune.weight_decay}};
  if (c.finetune.classifier_rate) ft["classifier_rate"] = *c.finetune.classifier_rate;
  if (c.finetune.backbone_rate) ft["backbone_rate"] = *c.finetune.backbone_rate;
  json j = {
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"data",
       {{"manifest", c.data.manifest},
        {"synth", synth_json(c.data.synth)},
        {"records_per_class", c.data.records_per_class},
        {"window", c.data.window},
        {"step", c.data.step},
        {"train_ratio", c.data.train_ratio},
        {"normalization", norm_name(c.data.normalization)}}},
      {"augment",
       {{"ops", ops},
        {"apply_probability", c.augment.apply_probability},
        {"warp_scale_min", c.augment.warp_scale_min},
        {"warp_scale_max", c.augment.warp_scale_max},
        {"noise_scale", c.augment.noise_scale},
        {"mask_fraction_min", c.augment.mask_fraction_min},
        {"mask_fraction_max", c.augment.mask_fraction_max},
        {"crop_length", c.augment.crop_length}}},
      {"model",
       {{"input_length", c.model.input_length},
        {"patch", c.model.patch},
        {"d_model", c.model.d_model},
        {"heads", c.model.heads},
        {"depth", c.model.depth},
        {"d_proj", c.model.d_proj},
        {"n_classes", c.model.n_classes},
        {"ff_mult", c.model.ff_mult}}},
      {"loss",
       {{"lambda_time", c.loss.weights.cls_time},
        {"lambda_freq", c.loss.weights.cls_freq},
        {"lambda_meta", c.loss.weights.meta},
        {"stop_target", c.loss.stop_target},
        {"cross_corr_weight", c.loss.cross_corr_weight}}},
      {"pretrain",
       {{"iterations", c.pretrain.iterations},
        {"batch_size", c.pretrain.batch_size},
        {"views", c.pretrain.views},
        {"learning_rate", c.pretrain.learning_rate},
        {"momentum", c.pretrain.momentum},
        {"weight_decay", c.pretrain.weight_decay}}},
      {"meta",
       {{"alpha", c.meta.meta.alpha},
        {"beta", c.meta.meta.beta},
        {"inner_steps", c.meta.meta.inner_steps},
        {"tasks_per_batch", c.meta.meta.tasks_per_batch},
        {"order", c.meta.meta.order == MetaOrder::second ? "second" : "first"},
        {"n_way", c.meta.shape.n_way},
        {"k_shot", c.meta.shape.k_shot},
        {"q", c.meta.shape.q},
        {"task_objective", objective_name(c.meta.objective)}}},
      {"finetune", ft},
      {"corrupt",
       {{"noise_fraction", c.corrupt.noise_fraction},
        {"variance", c.corrupt.variance},
        {"mask_fraction", c.corrupt.mask_fraction}}},
      {"ablation",
       {{"no_bilevel", c.ablation.no_bilevel},
        {"no_freq", c.ablation.no_freq},
        {"no_aug", c.ablation.no_aug}}},
  };
  return j.dump(2);
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

SynthSpec synth_from_json(const std::string& text, int* records_per_class) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec is not valid JSON: ") + e.what());
  }
  SynthSpec s = read_synth(j, "spec", records_per_class);
  rethrow_as_config("spec", [&] { s.validate(); });
  return s;
}

std::string synth_to_json(const SynthSpec& spec) { return synth_json(spec).dump(2); }

}  // namespace mmtfd
