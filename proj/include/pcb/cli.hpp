#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcb/datagen.hpp"
#include "pcb/head.hpp"
#include "pcb/loss.hpp"
#include "pcb/report.hpp"
#include "pcb/trainer.hpp"

namespace pcb::cli {

// Invalid or unknown configuration; the message carries the field path.
class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OutputsConfig {
  std::string dir = "out";
};

// One experiment, parsed from a single spec file. The effective JSON (after
// CLI overrides) is kept so sweeps can patch parameters and the config hash
// stays canonical.
struct ExperimentSpec {
  bool use_synth = true;
  SynthConfig synth_cfg;
  std::string ingest_path;
  TabularSchema ingest_schema;
  HeadConfig head;  // input_dim / num_classes are filled from the dataset
  LossConfig loss;
  bool bsce_priors_from_counts = false;
  TrainConfig train;
  PosthocOptions posthoc;
  OutputsConfig outputs;
  std::string config_hash;
  nlohmann::json effective;
};

struct GlobalOptions {
  std::optional<std::uint64_t> seed;  // overrides every seed in the spec
  std::optional<std::string> out_dir;
  int precision = 64;  // 64 | 32 (float32 parameter storage)
};

ExperimentSpec parse_spec_json(nlohmann::json j, const GlobalOptions& opts);
ExperimentSpec parse_spec_file(const std::string& path,
                               const GlobalOptions& opts);

LongTailDataset build_dataset(const ExperimentSpec& spec);
HeadConfig head_config_for(const ExperimentSpec& spec,
                           const LongTailDataset& ds);
LossConfig loss_config_for(const ExperimentSpec& spec,
                           const LongTailDataset& ds);

// Command verbs. Each writes only under the spec's output directory and
// returns a process exit code; re-running an identical spec rewrites
// byte-identical files.
int cmd_synth(const ExperimentSpec& spec);
int cmd_train(const ExperimentSpec& spec);
int cmd_eval(const ExperimentSpec& spec, const std::string& checkpoint);
int cmd_calibrate(const ExperimentSpec& spec, const std::string& checkpoint);
int cmd_sweep(const ExperimentSpec& spec, const std::string& param,
              const std::vector<std::string>& values,
              const GlobalOptions& opts);
int cmd_report(const std::string& dir);

}  // namespace pcb::cli
