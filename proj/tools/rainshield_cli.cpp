// Command-line entry point. Dotted flags (--train.at.epochs=2) override config keys.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rainshield/runner.hpp"

namespace fs = std::filesystem;
using namespace rainshield;

namespace {

// Pulls --a.b=value arguments out of argv; CLI11 sees the rest.
std::vector<std::string> split_overrides(int argc, char** argv, std::vector<std::string>& rest) {
  std::vector<std::string> overrides;
  rest.push_back(argv[0]);
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    const auto eq = a.find('=');
    const auto key = a.substr(0, eq);
    if (a.rfind("--", 0) == 0 && key.find('.') != std::string::npos) {
      if (eq == std::string::npos) {
        if (i + 1 >= argc) throw ConfigError("override " + a + " needs a value");
        overrides.push_back(key.substr(2) + "=" + argv[++i]);
      } else {
        overrides.push_back(a.substr(2));
      }
    } else {
      rest.push_back(a);
    }
  }
  return overrides;
}

int fail(const std::exception& e) {
  const auto [code, line] = classify_error(e);
  std::cerr << line << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args;
  std::vector<std::string> overrides;
  try {
    overrides = split_overrides(argc, argv, args);
  } catch (const std::exception& e) {
    return fail(e);
  }

  CLI::App app{"rainshield: joint rain and adversarial defense workbench for semantic segmentation"};
  app.require_subcommand(1);
  std::string config_file;
  std::string run_dir;
  bool overwrite = false;
  bool quiet = false;
  std::vector<std::string> sets;
  app.add_option("-c,--config", config_file, "JSON config file (merged over built-in defaults)");
  app.add_option("-r,--run-dir", run_dir, "Run directory (default <output_root>/<run_name>)");
  app.add_flag("--overwrite", overwrite, "Allow replacing outputs of an earlier run");
  app.add_flag("-q,--quiet", quiet, "Log to files only");
  app.add_option("--set", sets, "Config override key=value (repeatable); same as --key=value");

  auto* synth = app.add_subcommand("synth", "Generate and store the train/val/test corpora");
  std::string kind;
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain a model on the stored corpus");
  pretrain->add_option("--kind", kind, "seg, derain, or alt-seg")->required()->check(
      CLI::IsMember({"seg", "derain", "alt-seg"}));
  std::string regime;
  auto* train = app.add_subcommand("train", "Defense training regimes");
  train->add_option("--regime", regime, "at, nat, pearl, or pearl-ama")->required()->check(
      CLI::IsMember({"at", "nat", "pearl", "pearl-ama"}));
  auto* eval = app.add_subcommand("eval", "Evaluate the configured pipelines over the attack grid");
  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Merge eval results of run directories, render table and plots");
  report->add_option("runs", report_dirs, "Run directories")->required();
  report->add_option("-o,--out", report_out, "Output directory (default <first run>/report)");
  std::string demo_image;
  std::size_t demo_sample = 0;
  auto* demo = app.add_subcommand("attack-demo", "Visualize the attack and mirror perturbations on one image");
  demo->add_option("--image", demo_image, "RGB PNG (default: a stored test sample)");
  demo->add_option("--sample", demo_sample, "Test sample index");
  int cal_samples = 200;
  double cal_target = 17.45;
  auto* calibrate = app.add_subcommand("calibrate-rain", "Tune rain intensity to a target rainy PSNR");
  calibrate->add_option("--samples", cal_samples, "Scenes to average over")->check(CLI::PositiveNumber);
  calibrate->add_option("--target", cal_target, "Target PSNR in dB");
  auto* all = app.add_subcommand("all", "synth, pretrain, train all regimes, eval, report");
  auto* show = app.add_subcommand("print-config", "Print the merged config and exit");

  std::vector<char*> cargs;
  for (auto& a : args) cargs.push_back(a.data());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error code=" << kExitConfig << " kind=usage message=\"" << e.what() << "\"" << std::endl;
    return kExitConfig;
  }

  try {
    if (report->parsed()) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      const fs::path out = report_out.empty() ? dirs.front() / "report" : fs::path(report_out);
      const auto merged = cmd_report(dirs, out, overwrite);
      if (!quiet) std::cout << format_summary_table(merged);
      return kExitOk;
    }

    overrides.insert(overrides.begin(), sets.begin(), sets.end());
    const fs::path cfg_path(config_file);
    const Json cfg = resolve_config(config_file.empty() ? nullptr : &cfg_path, overrides);
    if (show->parsed()) {
      std::cout << cfg.dump(2) << std::endl;
      return kExitOk;
    }
    Run run = Run::open(cfg, run_dir.empty() ? std::nullopt : std::optional<fs::path>(run_dir), overwrite);
    run.set_quiet(quiet);

    if (synth->parsed()) cmd_synth(run);
    if (pretrain->parsed()) cmd_pretrain(run, kind);
    if (train->parsed()) cmd_train(run, parse_regime(regime));
    if (eval->parsed()) {
      const auto rep = cmd_eval(run);
      if (!quiet) std::cout << format_summary_table(rep);
    }
    if (demo->parsed())
      for (const auto& p : cmd_attack_demo(run, demo_image.empty() ? std::nullopt : std::optional<fs::path>(demo_image),
                                           demo_sample))
        std::cout << p.string() << "\n";
    if (calibrate->parsed()) {
      const auto c = cmd_calibrate_rain(run, cal_samples, cal_target);
      std::printf("data.rain.intensity=%.6f psnr=%.3f ssim=%.4f\n", c.rain.intensity, c.psnr, c.ssim);
    }
    if (all->parsed()) cmd_all(run);
  } catch (const std::exception& e) {
    return fail(e);
  }
  return kExitOk;
}
