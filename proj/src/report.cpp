#include "pcb/report.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "pcb/numio.hpp"

namespace pcb {

namespace {

int argmax(const Eigen::VectorXd& v) {
  Eigen::Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

MetricsReport metrics_from_predictions(const std::vector<int>& preds,
                                       const std::vector<int>& labels,
                                       const LongTailDataset& ds) {
  const int num_classes = ds.num_classes();
  MetricsReport r;
  r.cm_snapshot = accumulate_hard(preds, labels, num_classes);

  std::vector<std::int64_t> total(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::int64_t> correct(static_cast<std::size_t>(num_classes), 0);
  std::int64_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    total[static_cast<std::size_t>(labels[i])] += 1;
    if (preds[i] == labels[i]) {
      correct[static_cast<std::size_t>(labels[i])] += 1;
      ++hit;
    }
  }
  r.acc_overall = static_cast<double>(hit) / static_cast<double>(preds.size());
  r.per_class_acc.resize(static_cast<std::size_t>(num_classes));
  double split_sum[3] = {0.0, 0.0, 0.0};
  int split_n[3] = {0, 0, 0};
  for (int c = 0; c < num_classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    r.per_class_acc[ci] =
        total[ci] > 0 ? static_cast<double>(correct[ci]) / static_cast<double>(total[ci])
                      : std::numeric_limits<double>::quiet_NaN();
    if (total[ci] == 0) continue;
    const int s = static_cast<int>(ds.split_of[ci]);
    split_sum[s] += r.per_class_acc[ci];
    split_n[s] += 1;
  }
  auto split_acc = [&](Split s) {
    const int i = static_cast<int>(s);
    return split_n[i] > 0 ? split_sum[i] / split_n[i]
                          : std::numeric_limits<double>::quiet_NaN();
  };
  r.acc_frequent = split_acc(Split::kFrequent);
  r.acc_common = split_acc(Split::kCommon);
  r.acc_rare = split_acc(Split::kRare);
  r.pwb = pairwise_bias_norm(r.cm_snapshot.m);
  r.seed = ds.seed;
  return r;
}

}  // namespace

MetricsReport evaluate(const RecurrentHead& head, const LongTailDataset& ds,
                       Partition partition) {
  const auto idx = ds.indices_of(partition);
  if (idx.empty()) throw std::invalid_argument("evaluate: empty partition");
  std::vector<int> preds, labels;
  preds.reserve(idx.size());
  labels.reserve(idx.size());
  for (auto i : idx) {
    preds.push_back(argmax(head.predict(ds.features.row(i).transpose())));
    labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
  }
  return metrics_from_predictions(preds, labels, ds);
}

ConfusionMatrix model_soft_cm(const RecurrentHead& head,
                              const LongTailDataset& ds, Partition partition) {
  const auto idx = ds.indices_of(partition);
  if (idx.empty()) throw std::invalid_argument("model_soft_cm: empty partition");
  Eigen::MatrixXd probs(static_cast<Eigen::Index>(idx.size()), ds.num_classes());
  std::vector<int> labels;
  labels.reserve(idx.size());
  for (std::size_t n = 0; n < idx.size(); ++n) {
    probs.row(static_cast<Eigen::Index>(n)) =
        head.predict(ds.features.row(idx[n]).transpose()).transpose();
    labels.push_back(ds.labels[static_cast<std::size_t>(idx[n])]);
  }
  return accumulate(probs, labels, CmMode::kSoft);
}

MetricsReport posthoc_eval(const RecurrentHead& head,
                           const LongTailDataset& ds, TransformSource source,
                           const PosthocOptions& opts) {
  const bool oracle = source == TransformSource::kValOracleCm ||
                      source == TransformSource::kValOracleMs;
  const ConfusionMatrix stats =
      model_soft_cm(head, ds, oracle ? Partition::kVal : Partition::kTrain);

  CalibrationTransform transform;
  if (source == TransformSource::kTrainCm ||
      source == TransformSource::kValOracleCm) {
    transform = CalibrationTransform::from_cm(stats.m, false);
  } else {
    const auto kind = opts.ms_variant == MsVariant::kModified
                          ? CalibKind::kMsModified
                          : CalibKind::kMsOriginal;
    transform = CalibrationTransform::from_scores(
        mean_scores(stats, opts.ms_variant), kind, false,
        opts.suppress_threshold);
  }

  return calibrated_eval(head, ds, transform);
}

MetricsReport calibrated_eval(const RecurrentHead& head,
                              const LongTailDataset& ds,
                              const CalibrationTransform& transform) {
  const auto idx = ds.indices_of(Partition::kVal);
  if (idx.empty()) throw std::invalid_argument("calibrated_eval: empty validation");
  std::vector<int> preds, labels;
  preds.reserve(idx.size());
  labels.reserve(idx.size());
  for (auto i : idx) {
    const Eigen::VectorXd p = head.predict(ds.features.row(i).transpose());
    const Eigen::VectorXd q = transform.kind == CalibKind::kCm
                                  ? cm_calibrate(p, transform)
                                  : ms_calibrate(p, transform);
    preds.push_back(argmax(q));
    labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
  }
  return metrics_from_predictions(preds, labels, ds);
}

std::vector<MetricsReport> per_step_eval(const RecurrentHead& head,
                                         const LongTailDataset& ds,
                                         Partition partition) {
  const auto idx = ds.indices_of(partition);
  if (idx.empty()) throw std::invalid_argument("per_step_eval: empty partition");
  const int steps = head.config().steps;
  std::vector<std::vector<int>> preds(static_cast<std::size_t>(steps));
  std::vector<int> labels;
  labels.reserve(idx.size());
  for (auto i : idx) {
    const auto step_probs = head.predict_steps(ds.features.row(i).transpose());
    for (int r = 0; r < steps; ++r) {
      preds[static_cast<std::size_t>(r)].push_back(
          argmax(step_probs[static_cast<std::size_t>(r)]));
    }
    labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
  }
  std::vector<MetricsReport> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (int r = 0; r < steps; ++r) {
    out.push_back(metrics_from_predictions(preds[static_cast<std::size_t>(r)],
                                           labels, ds));
  }
  return out;
}

void heatmap_svg(const Eigen::MatrixXd& cm, const std::string& path) {
  if ((cm.array() < 0.0).any() || (cm.array() > 1.0).any()) {
    throw std::invalid_argument("heatmap_svg: entries must lie in [0, 1]");
  }
  constexpr double kFloor = 1e-6;
  constexpr int kCell = 16;
  const double lo = std::log2(kFloor);
  const int rows = static_cast<int>(cm.rows());
  const int cols = static_cast<int>(cm.cols());

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
      << cols * kCell << "\" height=\"" << rows * kCell << "\">\n";
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double v = std::max(cm(i, j), kFloor);
      const double t = 1.0 - std::log2(v) / lo;  // 0 at floor, 1 at prob 1
      const int g = static_cast<int>(std::lround(255.0 * t));
      out << "  <rect x=\"" << j * kCell << "\" y=\"" << i * kCell
          << "\" width=\"" << kCell << "\" height=\"" << kCell
          << "\" fill=\"rgb(" << g << "," << g << "," << g << ")\"/>\n";
    }
  }
  out << "</svg>\n";
}

std::string report_csv_header() {
  return "tag,acc_overall,acc_rare,acc_common,acc_frequent,pwb,seed,config_hash";
}

std::string report_csv_row(const MetricsReport& r, const std::string& tag) {
  std::string row = tag;
  row += "," + fmt_metric(r.acc_overall);
  row += "," + fmt_metric(r.acc_rare);
  row += "," + fmt_metric(r.acc_common);
  row += "," + fmt_metric(r.acc_frequent);
  row += "," + fmt_metric(r.pwb);
  row += "," + std::to_string(r.seed);
  row += "," + r.config_hash;
  return row;
}

void save_report(const MetricsReport& r, const std::string& path) {
  nlohmann::json j;
  j["format"] = "pcblab.report.v1";
  j["acc_overall"] = r.acc_overall;
  j["acc_frequent"] = r.acc_frequent;
  j["acc_common"] = r.acc_common;
  j["acc_rare"] = r.acc_rare;
  j["pwb"] = r.pwb;
  j["per_class_acc"] = r.per_class_acc;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["cm"]["num_classes"] = r.cm_snapshot.num_classes();
  j["cm"]["counts"] = r.cm_snapshot.counts;
  std::vector<double> rows;
  for (Eigen::Index i = 0; i < r.cm_snapshot.m.rows(); ++i) {
    for (Eigen::Index k = 0; k < r.cm_snapshot.m.cols(); ++k) {
      rows.push_back(r.cm_snapshot.m(i, k));
    }
  }
  j["cm"]["rows"] = rows;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

MetricsReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "pcblab.report.v1") {
    throw std::runtime_error(path + ": not a metrics report");
  }
  // NaN round-trips as null in JSON.
  auto as_double = [](const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                       : v.get<double>();
  };
  MetricsReport r;
  r.acc_overall = as_double(j.at("acc_overall"));
  r.acc_frequent = as_double(j.at("acc_frequent"));
  r.acc_common = as_double(j.at("acc_common"));
  r.acc_rare = as_double(j.at("acc_rare"));
  r.pwb = as_double(j.at("pwb"));
  for (const auto& v : j.at("per_class_acc")) {
    r.per_class_acc.push_back(as_double(v));
  }
  r.config_hash = j.at("config_hash").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  const int n = j.at("cm").at("num_classes").get<int>();
  r.cm_snapshot.mode = CmMode::kHard;
  r.cm_snapshot.counts = j.at("cm").at("counts").get<std::vector<std::int64_t>>();
  const auto rows = j.at("cm").at("rows").get<std::vector<double>>();
  r.cm_snapshot.m.resize(n, n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      r.cm_snapshot.m(i, k) = rows[static_cast<std::size_t>(i) * n + k];
    }
  }
  return r;
}

}  // namespace pcb
