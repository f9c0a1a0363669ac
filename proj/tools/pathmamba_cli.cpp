// Command-line front end: generate | train | evaluate | gradcheck | ablate.
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pathmamba/pathmamba.hpp"

namespace fs = std::filesystem;
using namespace pathmamba;

namespace {

constexpr int kValidationError = 1;
constexpr int kRuntimeError = 2;

RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path)); }

int cmd_generate(const std::string& config, std::size_t count, const std::string& out) {
  const json j = read_json_file(config);
  SceneConfig sc;
  try {
    // accepts a bare SceneConfig or a run config with data.scene
    if (j.contains("data") && j.at("data").contains("scene"))
      sc = j.at("data").at("scene").get<SceneConfig>();
    else
      sc = j.get<SceneConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene config: ") + e.what());
  }
  sc.validate();
  const Manifest m = generate_dataset(sc, count, out);
  std::cout << "wrote " << m.items.size() << " scenes to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& out, const std::optional<std::string>& resume,
              const std::optional<std::int64_t>& stop_after, bool verbose) {
  RunConfig rc = load_run_config(config);
  rc.output_dir = out;
  rc.validate();
  TrainOptions opts;
  opts.resume = resume;
  opts.stop_after = stop_after;
  opts.quiet = !verbose;
  const TrainReport rep = train(rc, opts);
  std::cout << to_json_value(rep).dump(2) << "\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpt, const std::string& data, const std::string& out, bool symmetric) {
  const LoadedCheckpoint lc = load_training_checkpoint(ckpt);
  Model<float> model = Model<float>::init(lc.config.backbone, lc.config.seed);
  NamedParams<float> params = model.parameters();
  restore_parameters(params, lc);
  APLSOptions opt = lc.config.apls;
  opt.symmetric = symmetric;
  const EvalReport rep = evaluate(model, load_dataset(data), opt);
  json j = to_json_value(rep);
  j["checkpoint"] = ckpt;
  j["data"] = data;
  j["threshold"] = 0.5;
  j["symmetric_apls"] = symmetric;
  write_json_file(out, j);
  std::cout << j["mean"].dump() << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& module) {
  bool ok = true;
  for (const auto& r : run_gradcheck(module)) {
    std::printf("%-12s %-32s rel_err=%.3e tol=%.0e %s\n", r.module.c_str(), r.name.c_str(), r.error, r.tolerance,
                r.pass() ? "PASS" : "FAIL");
    ok = ok && r.pass();
  }
  return ok ? 0 : kRuntimeError;
}

int cmd_ablate(const std::string& config, const std::string& suite, const std::string& out, bool verbose) {
  RunConfig rc = load_run_config(config);
  rc.validate();
  ablation_suite(suite, rc.backbone);  // rejects unknown suites before any work
  if (rc.output_dir.empty() || rc.output_dir == "run") rc.output_dir = (fs::path(out).parent_path() / ("ablate_" + suite)).string();
  const auto rows = ablate(rc, suite, !verbose);
  const json table = ablation_table(suite, rows);
  write_json_file(out, table);
  std::printf("%-16s %8s %8s %8s\n", "variant", "IoU", "F1", "APLS");
  for (const auto& r : rows)
    std::printf("%-16s %8.2f %8.2f %8.2f\n", r.variant.c_str(), 100 * r.metrics.iou, 100 * r.metrics.f1,
                100 * r.metrics.apls);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid Mamba/attention road segmentation toolkit"};
  app.require_subcommand(1);

  std::string config, out, data, ckpt, suite, module = "all";
  std::size_t count = 0;
  std::optional<std::string> resume;
  std::optional<std::int64_t> stop_after;
  bool symmetric = false, verbose = false;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
  gen->add_option("--config", config, "scene or run config (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--count", count, "number of scenes")->required();
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "output directory")->required();
  tr->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  tr->add_option("--stop-after", stop_after, "stop (and checkpoint) after this many iterations");
  tr->add_flag("-v,--verbose", verbose, "print each metrics line");

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", out, "report JSON")->required();
  ev->add_flag("--symmetric-apls", symmetric, "average both APLS directions");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--module", module, "all|ops|ssm|scan2d|backbone|supervision");

  auto* ab = app.add_subcommand("ablate", "train and compare variants");
  ab->add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  ab->add_option("--suite", suite, "layouts|ssm-removal|scans|stages")->required();
  ab->add_option("--out", out, "table JSON")->required();
  ab->add_flag("-v,--verbose", verbose, "print each metrics line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kValidationError;
  }

  try {
    if (*gen) return cmd_generate(config, count, out);
    if (*tr) return cmd_train(config, out, resume, stop_after, verbose);
    if (*ev) return cmd_evaluate(ckpt, data, out, symmetric);
    if (*gc) return cmd_gradcheck(module);
    if (*ab) return cmd_ablate(config, suite, out, verbose);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kValidationError;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kValidationError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
