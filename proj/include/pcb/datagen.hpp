#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace pcb {

enum class Split { kFrequent, kCommon, kRare };
enum class Partition { kTrain, kVal };

// Frequency-split boundaries on train counts: rare is [1, rare_max], common
// is (rare_max, common_max], frequent is above.
struct SplitThresholds {
  std::int64_t rare_max = 10;
  std::int64_t common_max = 100;
};

struct LongTailDataset {
  Eigen::MatrixXd features;             // N x D, one sample per row
  std::vector<int> labels;              // 0-based class ids
  std::vector<std::int64_t> class_counts;  // train samples per class
  std::vector<Split> split_of;
  std::vector<Partition> partition;
  std::uint64_t seed = 0;
  SplitThresholds thresholds;

  int num_classes() const { return static_cast<int>(class_counts.size()); }
  int feature_dim() const { return static_cast<int>(features.cols()); }
  std::int64_t size() const { return features.rows(); }
  std::vector<std::int64_t> indices_of(Partition p) const;
};

Split split_for_count(std::int64_t train_count, const SplitThresholds& t);

struct SynthConfig {
  int num_classes = 30;
  std::int64_t max_count = 1000;   // head-class train count
  double imbalance = 100.0;        // head/tail count ratio
  int feature_dim = 16;
  double confusability = 0.1;      // cluster noise scale
  int val_per_class = 50;
  std::uint64_t seed = 0;
  SplitThresholds thresholds;
};

// Angular placement order for synthetic class means: head and tail classes
// interleave around the circle (0, C-1, 1, C-2, ...) so every pair of
// neighbouring clusters is strongly imbalanced, not just the head/tail seam.
std::vector<int> synth_angle_order(int num_classes);

// Geometric long-tail profile: class c (0-based) receives
// max(1, round(max_count * imbalance^(-c / (C-1)))) train samples. Class
// means sit evenly rotated on the unit circle of the first two feature
// dimensions, interleaved per synth_angle_order, so neighbouring classes
// confuse far more than distant ones and each confusable pair is
// imbalanced; all dimensions carry isotropic Gaussian noise of the given
// scale. The validation partition is class-balanced. Same seed, same bits.
LongTailDataset synth(const SynthConfig& cfg);

struct TabularSchema {
  double val_fraction = 0.0;  // per-sample validation probability
  std::uint64_t seed = 0;
  SplitThresholds thresholds;
  int expected_classes = 0;   // 0 infers C from the largest label
};

// Comma-delimited ingestion: header row, feature columns first, an integer
// `label` column (1-based classes) last. Partition assignment hashes
// (seed, row) so identical inputs partition identically; when a validation
// fraction is set every class keeps at least one validation sample.
LongTailDataset ingest_tabular(const std::string& path,
                               const TabularSchema& schema);

// Self-contained snapshot (counts, splits, seed, partition and data).
void save_dataset(const LongTailDataset& ds, const std::string& path);
LongTailDataset load_dataset(const std::string& path);

}  // namespace pcb
