#pragma once

#include <string>
#include <vector>

#include "pcb/calib.hpp"
#include "pcb/confmat.hpp"
#include "pcb/datagen.hpp"
#include "pcb/head.hpp"

namespace pcb {

// Evaluation summary over one partition. Split accuracies are unweighted
// means over their member classes; an empty split reports NaN.
struct MetricsReport {
  double acc_overall = 0.0;
  double acc_frequent = 0.0;
  double acc_common = 0.0;
  double acc_rare = 0.0;
  double pwb = 0.0;
  std::vector<double> per_class_acc;
  ConfusionMatrix cm_snapshot;  // hard confusion matrix of the evaluation
  std::string config_hash;
  std::uint64_t seed = 0;
};

// Last-step predictions over the partition: accuracy metrics, hard
// confusion matrix, pairwise-bias norm.
MetricsReport evaluate(const RecurrentHead& head, const LongTailDataset& ds,
                       Partition partition);

enum class TransformSource { kTrainCm, kValOracleCm, kTrainMs, kValOracleMs };

struct PosthocOptions {
  MsVariant ms_variant = MsVariant::kModified;
  double suppress_threshold = 1e-3;
};

// Builds a calibration transform from the named statistics source (oracle
// sources read validation labels), calibrates every validation prediction
// and reports the resulting metrics.
MetricsReport posthoc_eval(const RecurrentHead& head,
                           const LongTailDataset& ds, TransformSource source,
                           const PosthocOptions& opts = {});

// Validation metrics after calibrating every prediction with an explicit
// transform; the identity transform reproduces evaluate() exactly.
MetricsReport calibrated_eval(const RecurrentHead& head,
                              const LongTailDataset& ds,
                              const CalibrationTransform& transform);

// Soft confusion matrix of the model over a partition (true labels against
// mean predicted probabilities); the statistics source for post-hoc
// calibration.
ConfusionMatrix model_soft_cm(const RecurrentHead& head,
                              const LongTailDataset& ds, Partition partition);

// One report per recurrent step, from that step's logits.
std::vector<MetricsReport> per_step_eval(const RecurrentHead& head,
                                         const LongTailDataset& ds,
                                         Partition partition = Partition::kVal);

// Grid heatmap of a confusion matrix. Cell lightness is linear in
// log2(max(entry, 1e-6)), lighter meaning higher probability.
void heatmap_svg(const Eigen::MatrixXd& cm, const std::string& path);

// One-row delimited summary and full-precision structured detail.
std::string report_csv_header();
std::string report_csv_row(const MetricsReport& r, const std::string& tag);
void save_report(const MetricsReport& r, const std::string& path);
MetricsReport load_report(const std::string& path);

}  // namespace pcb
