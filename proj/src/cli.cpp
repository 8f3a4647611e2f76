#include "pcb/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pcb/confmat.hpp"
#include "pcb/numio.hpp"

namespace fs = std::filesystem;

namespace pcb::cli {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hash_hex(const nlohmann::json& j) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

void check_keys(const nlohmann::json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) {
    throw SpecError(path + ": expected an object");
  }
  for (const auto& item : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) {
          return item.key() == k;
        }) == allowed.end()) {
      throw SpecError(path + "." + item.key() + ": unknown key");
    }
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback,
         const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SpecError(path + "." + key + ": wrong type");
  }
}

Eigen::VectorXd to_vector(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array()) throw SpecError(path + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw SpecError(path + ": expected numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Eigen::MatrixXd to_matrix(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw SpecError(path + ": expected rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != cols) {
      throw SpecError(path + ": ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

SplitThresholds parse_thresholds(const nlohmann::json& j,
                                 const std::string& path) {
  check_keys(j, path, {"rare_max", "common_max"});
  SplitThresholds t;
  t.rare_max = get_or<std::int64_t>(j, "rare_max", t.rare_max, path);
  t.common_max = get_or<std::int64_t>(j, "common_max", t.common_max, path);
  return t;
}

LossVariant variant_from_name(const std::string& name) {
  if (name == "ce") return LossVariant::kCe;
  if (name == "pcb_ce") return LossVariant::kPcbCe;
  if (name == "bce_pcb") return LossVariant::kBcePcb;
  if (name == "seesaw_pcb") return LossVariant::kSeesawPcb;
  if (name == "bsce") return LossVariant::kBsce;
  if (name == "label_smooth") return LossVariant::kLabelSmooth;
  throw SpecError("loss.variant: unknown variant `" + name + "`");
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

void stamp(MetricsReport& r, const ExperimentSpec& spec) {
  r.config_hash = spec.config_hash;
  r.seed = spec.train.seed;
}

}  // namespace

ExperimentSpec parse_spec_json(nlohmann::json j, const GlobalOptions& opts) {
  check_keys(j, "spec",
             {"dataset", "head", "loss", "train", "outputs", "calibrate"});
  if (!j.contains("dataset")) throw SpecError("dataset: block required");

  // CLI overrides land in the JSON itself so the hash covers them.
  if (opts.seed) {
    if (j["dataset"].contains("synth")) j["dataset"]["synth"]["seed"] = *opts.seed;
    if (j["dataset"].contains("ingest")) j["dataset"]["ingest"]["seed"] = *opts.seed;
    j["head"]["init_seed"] = *opts.seed;
    j["train"]["seed"] = *opts.seed;
  }
  if (opts.out_dir) j["outputs"]["dir"] = *opts.out_dir;
  if (opts.precision == 32) {
    j["train"]["fp32_params"] = true;
  } else if (opts.precision != 64) {
    throw SpecError("precision: must be 64 or 32");
  }

  ExperimentSpec spec;
  spec.effective = j;
  spec.config_hash = hash_hex(j);

  const auto& d = j.at("dataset");
  check_keys(d, "dataset", {"synth", "ingest", "thresholds"});
  if (d.contains("synth") == d.contains("ingest")) {
    throw SpecError("dataset: exactly one of synth/ingest required");
  }
  SplitThresholds thresholds;
  if (d.contains("thresholds")) {
    thresholds = parse_thresholds(d.at("thresholds"), "dataset.thresholds");
  }
  if (d.contains("synth")) {
    const auto& s = d.at("synth");
    check_keys(s, "dataset.synth",
               {"num_classes", "max_count", "imbalance", "feature_dim",
                "confusability", "val_per_class", "seed"});
    spec.use_synth = true;
    spec.synth_cfg.num_classes =
        get_or<int>(s, "num_classes", spec.synth_cfg.num_classes, "dataset.synth");
    spec.synth_cfg.max_count = get_or<std::int64_t>(
        s, "max_count", spec.synth_cfg.max_count, "dataset.synth");
    spec.synth_cfg.imbalance =
        get_or<double>(s, "imbalance", spec.synth_cfg.imbalance, "dataset.synth");
    spec.synth_cfg.feature_dim =
        get_or<int>(s, "feature_dim", spec.synth_cfg.feature_dim, "dataset.synth");
    spec.synth_cfg.confusability = get_or<double>(
        s, "confusability", spec.synth_cfg.confusability, "dataset.synth");
    spec.synth_cfg.val_per_class = get_or<int>(
        s, "val_per_class", spec.synth_cfg.val_per_class, "dataset.synth");
    spec.synth_cfg.seed =
        get_or<std::uint64_t>(s, "seed", spec.synth_cfg.seed, "dataset.synth");
    spec.synth_cfg.thresholds = thresholds;
  } else {
    const auto& g = d.at("ingest");
    check_keys(g, "dataset.ingest",
               {"path", "val_fraction", "seed", "expected_classes"});
    spec.use_synth = false;
    if (!g.contains("path")) throw SpecError("dataset.ingest.path: required");
    spec.ingest_path = g.at("path").get<std::string>();
    spec.ingest_schema.val_fraction = get_or<double>(
        g, "val_fraction", spec.ingest_schema.val_fraction, "dataset.ingest");
    spec.ingest_schema.seed = get_or<std::uint64_t>(
        g, "seed", spec.ingest_schema.seed, "dataset.ingest");
    spec.ingest_schema.expected_classes =
        get_or<int>(g, "expected_classes", 0, "dataset.ingest");
    spec.ingest_schema.thresholds = thresholds;
  }

  if (j.contains("head")) {
    const auto& h = j.at("head");
    check_keys(h, "head",
               {"backbone_hidden", "feature_dim", "proj_hidden", "steps",
                "step_weights", "layernorm_logits", "detach_refinement",
                "has_background", "init_seed"});
    spec.head.backbone_hidden =
        get_or<int>(h, "backbone_hidden", spec.head.backbone_hidden, "head");
    spec.head.feature_dim =
        get_or<int>(h, "feature_dim", spec.head.feature_dim, "head");
    spec.head.proj_hidden =
        get_or<int>(h, "proj_hidden", spec.head.proj_hidden, "head");
    spec.head.steps = get_or<int>(h, "steps", spec.head.steps, "head");
    spec.head.step_weights = get_or<std::vector<double>>(
        h, "step_weights", spec.head.step_weights, "head");
    spec.head.layernorm_logits = get_or<bool>(
        h, "layernorm_logits", spec.head.layernorm_logits, "head");
    spec.head.detach_refinement = get_or<bool>(
        h, "detach_refinement", spec.head.detach_refinement, "head");
    spec.head.has_background =
        get_or<bool>(h, "has_background", spec.head.has_background, "head");
    spec.head.init_seed =
        get_or<std::uint64_t>(h, "init_seed", spec.head.init_seed, "head");
  }

  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    check_keys(l, "loss",
               {"variant", "alpha", "smoothing", "target_mode",
                "class_weights", "seesaw_s", "class_priors",
                "bce_normalized_targets"});
    spec.loss.variant =
        variant_from_name(get_or<std::string>(l, "variant", "pcb_ce", "loss"));
    spec.loss.alpha = get_or<double>(l, "alpha", spec.loss.alpha, "loss");
    if (spec.loss.alpha < 0.0 || spec.loss.alpha > 1.0) {
      throw SpecError("loss.alpha: outside [0, 1]");
    }
    spec.loss.smoothing =
        get_or<double>(l, "smoothing", spec.loss.smoothing, "loss");
    const auto mode = get_or<std::string>(l, "target_mode", "pcb_column", "loss");
    if (mode == "pcb_column") {
      spec.loss.target_mode = TargetMode::kPcbColumn;
    } else if (mode == "row_ols") {
      spec.loss.target_mode = TargetMode::kRowOls;
    } else if (mode == "one_hot") {
      spec.loss.target_mode = TargetMode::kOneHot;
    } else {
      throw SpecError("loss.target_mode: unknown mode `" + mode + "`");
    }
    if (l.contains("class_weights")) {
      spec.loss.class_weights = to_vector(l.at("class_weights"), "loss.class_weights");
    }
    if (l.contains("seesaw_s")) {
      spec.loss.seesaw_s = to_matrix(l.at("seesaw_s"), "loss.seesaw_s");
    }
    if (l.contains("class_priors")) {
      const auto& p = l.at("class_priors");
      if (p.is_string() && p.get<std::string>() == "from_counts") {
        spec.bsce_priors_from_counts = true;
      } else {
        spec.loss.class_priors = to_vector(p, "loss.class_priors");
      }
    }
    spec.loss.bce_normalized_targets = get_or<bool>(
        l, "bce_normalized_targets", spec.loss.bce_normalized_targets, "loss");
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train",
               {"epochs", "batch_size", "lr", "momentum", "weight_decay",
                "warmup_epochs", "decay_epochs", "decay_factor", "sampler",
                "rf_threshold", "pcb_start_epoch", "decoupled", "gamma",
                "ema_from_first_step", "seed", "warmup_per_iteration",
                "fp32_params"});
    spec.train.epochs = get_or<int>(t, "epochs", spec.train.epochs, "train");
    spec.train.batch_size =
        get_or<int>(t, "batch_size", spec.train.batch_size, "train");
    spec.train.lr = get_or<double>(t, "lr", spec.train.lr, "train");
    spec.train.momentum =
        get_or<double>(t, "momentum", spec.train.momentum, "train");
    spec.train.weight_decay =
        get_or<double>(t, "weight_decay", spec.train.weight_decay, "train");
    spec.train.warmup_epochs =
        get_or<int>(t, "warmup_epochs", spec.train.warmup_epochs, "train");
    spec.train.decay_epochs = get_or<std::vector<int>>(
        t, "decay_epochs", spec.train.decay_epochs, "train");
    spec.train.decay_factor =
        get_or<double>(t, "decay_factor", spec.train.decay_factor, "train");
    const auto sampler = get_or<std::string>(t, "sampler", "random", "train");
    if (sampler == "random") {
      spec.train.sampler = SamplerKind::kRandom;
    } else if (sampler == "repeat_factor") {
      spec.train.sampler = SamplerKind::kRepeatFactor;
    } else {
      throw SpecError("train.sampler: unknown sampler `" + sampler + "`");
    }
    spec.train.rf_threshold =
        get_or<double>(t, "rf_threshold", spec.train.rf_threshold, "train");
    spec.train.pcb_start_epoch =
        get_or<int>(t, "pcb_start_epoch", spec.train.pcb_start_epoch, "train");
    spec.train.decoupled =
        get_or<bool>(t, "decoupled", spec.train.decoupled, "train");
    spec.train.gamma = get_or<double>(t, "gamma", spec.train.gamma, "train");
    spec.train.ema_from_first_step = get_or<bool>(
        t, "ema_from_first_step", spec.train.ema_from_first_step, "train");
    if (!(spec.train.gamma > 0.0 && spec.train.gamma < 1.0)) {
      throw SpecError("train.gamma: outside (0, 1)");
    }
    spec.train.seed =
        get_or<std::uint64_t>(t, "seed", spec.train.seed, "train");
    spec.train.warmup_per_iteration = get_or<bool>(
        t, "warmup_per_iteration", spec.train.warmup_per_iteration, "train");
    spec.train.fp32_params =
        get_or<bool>(t, "fp32_params", spec.train.fp32_params, "train");
  }

  if (j.contains("calibrate")) {
    const auto& c = j.at("calibrate");
    check_keys(c, "calibrate", {"ms_variant", "suppress_threshold"});
    const auto v = get_or<std::string>(c, "ms_variant", "modified", "calibrate");
    if (v == "original") {
      spec.posthoc.ms_variant = MsVariant::kOriginal;
    } else if (v == "modified") {
      spec.posthoc.ms_variant = MsVariant::kModified;
    } else {
      throw SpecError("calibrate.ms_variant: unknown variant `" + v + "`");
    }
    spec.posthoc.suppress_threshold = get_or<double>(
        c, "suppress_threshold", spec.posthoc.suppress_threshold, "calibrate");
  }

  if (j.contains("outputs")) {
    const auto& o = j.at("outputs");
    check_keys(o, "outputs", {"dir"});
    spec.outputs.dir = get_or<std::string>(o, "dir", spec.outputs.dir, "outputs");
  }
  return spec;
}

ExperimentSpec parse_spec_file(const std::string& path,
                               const GlobalOptions& opts) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot read spec file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(path + ": " + e.what());
  }
  return parse_spec_json(std::move(j), opts);
}

LongTailDataset build_dataset(const ExperimentSpec& spec) {
  return spec.use_synth ? synth(spec.synth_cfg)
                        : ingest_tabular(spec.ingest_path, spec.ingest_schema);
}

HeadConfig head_config_for(const ExperimentSpec& spec,
                           const LongTailDataset& ds) {
  HeadConfig cfg = spec.head;
  cfg.input_dim = ds.feature_dim();
  cfg.num_classes = ds.num_classes();
  return cfg;
}

LossConfig loss_config_for(const ExperimentSpec& spec,
                           const LongTailDataset& ds) {
  LossConfig cfg = spec.loss;
  if (cfg.variant == LossVariant::kBsce &&
      (spec.bsce_priors_from_counts || !cfg.class_priors)) {
    Eigen::VectorXd n(ds.num_classes());
    for (int c = 0; c < ds.num_classes(); ++c) {
      n[c] = static_cast<double>(ds.class_counts[static_cast<std::size_t>(c)]);
    }
    cfg.class_priors = n;
  }
  return cfg;
}

int cmd_synth(const ExperimentSpec& spec) {
  fs::create_directories(spec.outputs.dir);
  const LongTailDataset ds = build_dataset(spec);
  const std::string path = spec.outputs.dir + "/dataset.json";
  save_dataset(ds, path);
  std::cout << path << "\n";
  return 0;
}

int cmd_train(const ExperimentSpec& spec) {
  fs::create_directories(spec.outputs.dir);
  const LongTailDataset ds = build_dataset(spec);
  RecurrentHead head(head_config_for(spec, ds));
  const LossConfig loss_cfg = loss_config_for(spec, ds);
  TrainResult result = run_training(ds, std::move(head), loss_cfg, spec.train);

  std::string log = epoch_csv_header() + "\n";
  for (const auto& e : result.epochs) log += epoch_csv_row(e) + "\n";
  write_text(spec.outputs.dir + "/epochs.csv", log);

  result.head.save(spec.outputs.dir + "/checkpoint.json", spec.config_hash);
  save_confmat(result.cm, spec.outputs.dir + "/confmat.json");

  MetricsReport final_report = result.epochs.back().val;
  stamp(final_report, spec);
  save_report(final_report, spec.outputs.dir + "/final_report.json");
  write_text(spec.outputs.dir + "/final_report.csv",
             report_csv_header() + "\n" +
                 report_csv_row(final_report, "final") + "\n");
  std::cout << spec.outputs.dir << "/checkpoint.json\n";
  return 0;
}

int cmd_eval(const ExperimentSpec& spec, const std::string& checkpoint) {
  fs::create_directories(spec.outputs.dir);
  const LongTailDataset ds = build_dataset(spec);
  const RecurrentHead head = RecurrentHead::load(checkpoint);
  if (head.config().num_classes != ds.num_classes()) {
    throw SpecError("checkpoint class count does not match the dataset");
  }

  MetricsReport report = evaluate(head, ds, Partition::kVal);
  stamp(report, spec);
  save_report(report, spec.outputs.dir + "/report.json");

  std::string csv = report_csv_header() + "\n";
  csv += report_csv_row(report, "val") + "\n";
  const auto steps = per_step_eval(head, ds);
  for (std::size_t r = 0; r < steps.size(); ++r) {
    MetricsReport s = steps[r];
    stamp(s, spec);
    csv += report_csv_row(s, "step" + std::to_string(r + 1)) + "\n";
  }
  write_text(spec.outputs.dir + "/report.csv", csv);
  heatmap_svg(report.cm_snapshot.m, spec.outputs.dir + "/confusion.svg");
  std::cout << spec.outputs.dir << "/report.csv\n";
  return 0;
}

int cmd_calibrate(const ExperimentSpec& spec, const std::string& checkpoint) {
  fs::create_directories(spec.outputs.dir);
  const LongTailDataset ds = build_dataset(spec);
  const RecurrentHead head = RecurrentHead::load(checkpoint);
  if (head.config().num_classes != ds.num_classes()) {
    throw SpecError("checkpoint class count does not match the dataset");
  }

  struct Row {
    const char* tag;
    std::optional<TransformSource> source;
  };
  const Row rows[] = {
      {"none", std::nullopt},
      {"ms_train", TransformSource::kTrainMs},
      {"ms_oracle", TransformSource::kValOracleMs},
      {"cm_train", TransformSource::kTrainCm},
      {"cm_oracle", TransformSource::kValOracleCm},
  };
  std::string csv = report_csv_header() + "\n";
  nlohmann::json detail = nlohmann::json::array();
  for (const auto& row : rows) {
    MetricsReport r = row.source
                          ? posthoc_eval(head, ds, *row.source, spec.posthoc)
                          : evaluate(head, ds, Partition::kVal);
    stamp(r, spec);
    csv += report_csv_row(r, row.tag) + "\n";
    detail.push_back({{"tag", row.tag},
                      {"acc_overall", r.acc_overall},
                      {"acc_rare", r.acc_rare},
                      {"acc_common", r.acc_common},
                      {"acc_frequent", r.acc_frequent},
                      {"pwb", r.pwb}});
  }
  write_text(spec.outputs.dir + "/calibrate.csv", csv);
  write_text(spec.outputs.dir + "/calibrate.json", detail.dump(2) + "\n");
  std::cout << spec.outputs.dir << "/calibrate.csv\n";
  return 0;
}

int cmd_sweep(const ExperimentSpec& spec, const std::string& param,
              const std::vector<std::string>& values,
              const GlobalOptions& opts) {
  if (values.empty()) throw SpecError("sweep: no values given");
  // Dotted path into the spec JSON, e.g. loss.alpha or train.gamma.
  std::vector<std::string> parts;
  std::string cur;
  for (char c : param) {
    if (c == '.') {
      if (cur.empty()) throw SpecError("sweep: bad parameter path");
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (cur.empty()) throw SpecError("sweep: bad parameter path");
  parts.push_back(cur);

  fs::create_directories(spec.outputs.dir);
  std::string csv = "param,value," + report_csv_header() + "\n";
  for (const auto& value : values) {
    nlohmann::json patched = spec.effective;
    nlohmann::json* node = &patched;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      node = &(*node)[parts[i]];
    }
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
      parsed = value;  // plain string value
    }
    (*node)[parts.back()] = parsed;

    const ExperimentSpec run_spec = parse_spec_json(patched, GlobalOptions{});
    const LongTailDataset ds = build_dataset(run_spec);
    RecurrentHead head(head_config_for(run_spec, ds));
    const TrainResult result = run_training(
        ds, std::move(head), loss_config_for(run_spec, ds), run_spec.train);
    MetricsReport r = result.epochs.back().val;
    stamp(r, run_spec);
    csv += param + "," + value + "," + report_csv_row(r, "sweep") + "\n";
  }
  (void)opts;
  write_text(spec.outputs.dir + "/sweep.csv", csv);
  std::cout << spec.outputs.dir << "/sweep.csv\n";
  return 0;
}

int cmd_report(const std::string& dir) {
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  std::cout << report_csv_header() << "\n";
  int found = 0;
  for (const auto& p : paths) {
    try {
      const MetricsReport r = load_report(p.string());
      std::cout << report_csv_row(r, p.stem().string()) << "\n";
      ++found;
    } catch (const std::exception&) {
      // not a report file; skip
    }
  }
  return found > 0 ? 0 : 1;
}

}  // namespace pcb::cli
