// pcblab: synthesize long-tailed datasets, train the recurrent classifier
// with pairwise-class-balance regularization, and reproduce the calibration
// and sweep tables from single-file experiment specs.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pcb/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"pcblab: a desk-scale laboratory for pairwise-class-balanced "
               "long-tailed classification"};
  app.require_subcommand(1);

  std::string spec_path;
  std::string checkpoint;
  std::string sweep_param;
  std::vector<std::string> sweep_values;
  std::string report_dir;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  std::string out_override;
  int precision = 64;

  auto add_common = [&](CLI::App* cmd, bool needs_spec = true) {
    if (needs_spec) {
      cmd->add_option("--spec", spec_path, "experiment spec file (JSON)")
          ->required();
    }
    cmd->add_option_function<std::uint64_t>(
           "--seed",
           [&](std::uint64_t v) {
             seed_override = v;
             seed_set = true;
           },
           "override every seed in the spec");
    cmd->add_option("--out", out_override, "override the output directory");
    cmd->add_option("--precision", precision,
                    "64 (default) or 32 (float32 parameter storage)")
        ->check(CLI::IsMember({32, 64}));
  };

  auto* synth = app.add_subcommand("synth", "write a dataset snapshot");
  add_common(synth);
  auto* train = app.add_subcommand("train", "train and write checkpoint/logs");
  add_common(train);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "head checkpoint")->required();
  auto* calibrate =
      app.add_subcommand("calibrate", "post-hoc calibration comparison");
  add_common(calibrate);
  calibrate->add_option("--checkpoint", checkpoint, "head checkpoint")
      ->required();
  auto* sweep = app.add_subcommand("sweep", "train across parameter values");
  add_common(sweep);
  sweep->add_option("--param", sweep_param, "dotted spec path, e.g. loss.alpha")
      ->required();
  sweep->add_option("--values", sweep_values, "values to sweep")
      ->required()
      ->delimiter(',');
  auto* report = app.add_subcommand("report", "tabulate saved reports");
  report->add_option("--dir", report_dir, "directory of report files")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    pcb::cli::GlobalOptions opts;
    if (seed_set) opts.seed = seed_override;
    if (!out_override.empty()) opts.out_dir = out_override;
    opts.precision = precision;

    if (report->parsed()) return pcb::cli::cmd_report(report_dir);

    const pcb::cli::ExperimentSpec spec =
        pcb::cli::parse_spec_file(spec_path, opts);
    if (synth->parsed()) return pcb::cli::cmd_synth(spec);
    if (train->parsed()) return pcb::cli::cmd_train(spec);
    if (eval->parsed()) return pcb::cli::cmd_eval(spec, checkpoint);
    if (calibrate->parsed()) return pcb::cli::cmd_calibrate(spec, checkpoint);
    if (sweep->parsed()) {
      return pcb::cli::cmd_sweep(spec, sweep_param, sweep_values, opts);
    }
  } catch (const pcb::cli::SpecError& e) {
    std::cerr << "spec error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
