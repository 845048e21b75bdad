// Command-line front end: data generation, the three training stages and the
// gradient check suite.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmtfd/config.hpp"
#include "mmtfd/errors.hpp"
#include "mmtfd/gradcheck.hpp"
#include "mmtfd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mmtfd;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kCapacity = 3, kNumeric = 4 };

std::string read_text(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

void write_curves(const std::map<std::string, std::vector<double>>& curves, const fs::path& dir) {
  for (const auto& [name, values] : curves) write_curve_csv(values, name, dir / (name + ".csv"));
}

int cmd_gen_data(const std::string& spec_file, const fs::path& out, std::uint64_t seed) {
  int records_per_class = 1;
  SynthSpec spec = SynthSpec::rotor_default();
  if (!spec_file.empty()) spec = synth_from_json(read_text(spec_file), &records_per_class);
  const auto records = synth_generate(spec, records_per_class, seed);
  write_dataset(records, out);
  std::cout << "wrote " << records.size() << " records to " << out.string() << '\n';
  return kOk;
}

int cmd_pretrain(const RunConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  const PreparedData data = prepare_data(cfg);
  const PretrainResult r = pretrain(cfg, data, log_line);
  fs::create_directories(dir);
  save_checkpoint(r.checkpoint, dir / "pretrain.ckpt");
  write_curves({{"pretrain_loss", r.loss}, {"pretrain_align", r.align}}, dir);
  std::cout << "pretrain.ckpt written to " << dir.string() << '\n';
  return kOk;
}

int cmd_finetune(RunConfig cfg, const fs::path& checkpoint, double budget) {
  if (budget > 0.0) {
    cfg.finetune.label_budget = budget;
    cfg.validate();
  }
  const fs::path dir = cfg.output_dir;
  const PreparedData data = prepare_data(cfg);
  const FinetuneResult r = finetune(load_checkpoint(checkpoint), cfg, data, log_line);
  fs::create_directories(dir);
  save_checkpoint(r.checkpoint, dir / "finetune.ckpt");
  write_curves({{"finetune_loss", r.loss}, {"finetune_accuracy", r.accuracy}}, dir);
  std::cout << "labeled windows: " << r.labeled.size() << "\nfinetune.ckpt written to "
            << dir.string() << '\n';
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, bool corrupted) {
  const fs::path dir = cfg.output_dir;
  const PreparedData data = prepare_data(cfg);
  const Evaluation ev = evaluate(load_checkpoint(checkpoint), cfg, data, corrupted);
  fs::create_directories(dir);
  std::ofstream(dir / "report.json") << report_json(ev.report) << '\n';
  write_embeddings(ev, dir / "embeddings.csv");
  std::printf("clean accuracy %.4f\n", ev.report.clean.accuracy);
  if (ev.report.corrupted) std::printf("corrupted accuracy %.4f\n", ev.report.corrupted->accuracy);
  return kOk;
}

int cmd_run(const RunConfig& cfg, bool corrupted) {
  const RunOutputs out = run_pipeline(cfg, cfg.output_dir, corrupted, log_line);
  std::printf("clean accuracy %.4f\n", out.evaluation.report.clean.accuracy);
  if (out.evaluation.report.corrupted) {
    std::printf("corrupted accuracy %.4f\n", out.evaluation.report.corrupted->accuracy);
  }
  return kOk;
}

int cmd_gradcheck(const std::vector<std::uint64_t>& seeds, double step, double tol) {
  const auto results = run_gradcheck_suite(seeds, step, tol);
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (!r.passed) ++failed;
    std::printf("%-4s %-28s err %.3e  compared %zu  skipped %zu\n", r.passed ? "ok" : "FAIL",
                r.name.c_str(), r.max_rel_error, r.compared, r.skipped);
  }
  std::printf("%zu/%zu checks passed\n", results.size() - failed, results.size());
  return failed == 0 ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot fault diagnosis with a time-frequency meta transformer"};
  app.require_subcommand(1);

  std::string config_file, checkpoint, spec_file, out_dir;
  std::uint64_t seed = 0;
  double budget = 0.0;
  bool corrupted = false;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double step = 1e-3, tol = 1e-4;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic rotor dataset with a manifest");
  gen->add_option("--spec", spec_file, "Synthetic spec JSON (default: built-in rotor spec)");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", seed, "Generator seed");

  auto* pre = app.add_subcommand("pretrain", "Self-supervised pretraining");
  pre->add_option("--config", config_file, "Run config JSON")->required()->check(CLI::ExistingFile);

  auto* fine = app.add_subcommand("finetune", "Meta fine-tuning on a labeled budget");
  fine->add_option("--config", config_file, "Run config JSON")->required()->check(CLI::ExistingFile);
  fine->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
  fine->add_option("--label-budget", budget, "Labeled fraction of the training split");

  auto* ev = app.add_subcommand("eval", "Evaluate a fine-tuned checkpoint");
  ev->add_option("--config", config_file, "Run config JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", checkpoint, "Fine-tuned checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_flag("--corrupt", corrupted, "Also evaluate on corrupted test windows");

  auto* run = app.add_subcommand("run", "Pretrain, fine-tune and evaluate in one go");
  run->add_option("--config", config_file, "Run config JSON")->required()->check(CLI::ExistingFile);
  run->add_flag("--corrupt", corrupted, "Also evaluate on corrupted test windows");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gc->add_option("--seeds", seeds, "Seeds to run");
  gc->add_option("--step", step, "Central-difference step");
  gc->add_option("--tol", tol, "Relative error tolerance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(spec_file, out_dir, seed);
    if (*gc) return cmd_gradcheck(seeds, step, tol);
    const RunConfig cfg = load_config(config_file);
    if (*pre) return cmd_pretrain(cfg);
    if (*fine) return cmd_finetune(cfg, checkpoint, budget);
    if (*ev) return cmd_eval(cfg, checkpoint, corrupted);
    if (*run) return cmd_run(cfg, corrupted);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << '\n';
    return kCapacity;
  } catch (const ContractError& e) {
    std::cerr << "precondition failed: " << e.what() << '\n';
    return kCapacity;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
