// Command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cgfusion/cgfusion.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitInternal = 2;

int exit_code(cgf_status s) {
  if (s == CGF_OK) return kExitOk;
  return s == CGF_ERR_INTERNAL ? kExitInternal : kExitInput;
}

void print_line(const char* line, void*) {
  std::printf("%s\n", line);
  std::fflush(stdout);
}

using ConfigPtr = std::unique_ptr<cgf_config, decltype(&cgf_config_destroy)>;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised damage segmentation with CG-fusion CAM"};
  app.require_subcommand(1);

  std::string config_file;
  app.add_option("--config", config_file, "key = value config file, applied before flags")
      ->check(CLI::ExistingFile);

  // One flag per config key; values are forwarded verbatim and validated by the library.
  std::map<std::string, std::string> overrides;
  const size_t nkeys = cgf_config_key_count();
  for (size_t i = 0; i < nkeys; ++i) {
    const std::string name = cgf_config_key_name(i);
    const std::string help = std::string(cgf_config_key_help(i)) + " [default: " + cgf_config_key_default(i) + "]";
    app.add_option_function<std::string>(
        "--" + name, [&overrides, name](const std::string& v) { overrides[name] = v; }, help);
  }

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  auto* train = app.add_subcommand("train", "train the classifier");
  auto* infer = app.add_subcommand("infer", "heatmaps, fusion bundles, masks and overlays");
  auto* evaluate = app.add_subcommand("evaluate", "score predicted masks against ground truth");
  auto* ablate = app.add_subcommand("ablate", "LayerCAM / CG-CAM / CG-CAM+NM-Fusion table on the test split");
  for (auto* sub : {gen, train, infer, evaluate, ablate}) sub->fallthrough();

  std::string input, pred_dir, gt_dir;
  infer->add_option("input", input, "image file or directory");
  evaluate->add_option("pred_dir", pred_dir, "directory of predicted masks");
  evaluate->add_option("gt_dir", gt_dir, "directory of ground-truth masks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  cgf_config* raw = nullptr;
  if (cgf_config_create(&raw) != CGF_OK) {
    std::fprintf(stderr, "error: %s\n", cgf_last_error());
    return kExitInternal;
  }
  ConfigPtr cfg(raw, &cgf_config_destroy);

  auto fail = [](cgf_status s) {
    std::fprintf(stderr, "error: %s\n", cgf_last_error());
    return exit_code(s);
  };
  if (!config_file.empty()) {
    if (auto s = cgf_config_load_file(cfg.get(), config_file.c_str()); s != CGF_OK) return fail(s);
  }
  if (!input.empty()) overrides["input"] = input;
  if (!pred_dir.empty()) overrides["pred_dir"] = pred_dir;
  if (!gt_dir.empty()) overrides["gt_dir"] = gt_dir;
  for (const auto& [k, v] : overrides) {
    if (auto s = cgf_config_set(cfg.get(), k.c_str(), v.c_str()); s != CGF_OK) return fail(s);
  }

  cgf_status s = CGF_OK;
  if (gen->parsed()) s = cgf_gen_data(cfg.get(), print_line, nullptr);
  else if (train->parsed()) s = cgf_train(cfg.get(), print_line, nullptr);
  else if (infer->parsed()) s = cgf_infer(cfg.get(), print_line, nullptr);
  else if (evaluate->parsed()) s = cgf_evaluate(cfg.get(), print_line, nullptr);
  else if (ablate->parsed()) s = cgf_ablate(cfg.get(), print_line, nullptr);
  return s == CGF_OK ? kExitOk : fail(s);
}
