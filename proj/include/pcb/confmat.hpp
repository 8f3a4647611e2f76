#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace pcb {

enum class CmMode { kHard, kSoft, kEma };

// Trade-off target mode for soft-label generation.
enum class TargetMode { kPcbColumn, kRowOls, kOneHot };

// C x C label-to-prediction statistics. Row i holds the prediction
// distribution of samples whose true class is i. In hard/soft batch mode
// rows with zero observations stay all-zero; in EMA mode rows start at
// one-hot (identity matrix) and remain probability vectors because every
// update is a convex combination.
struct ConfusionMatrix {
  Eigen::MatrixXd m;
  CmMode mode = CmMode::kHard;
  double momentum = 0.99;
  std::vector<std::int64_t> counts;  // per-row observations (hard/soft modes)

  int num_classes() const { return static_cast<int>(m.rows()); }

  // EMA matrices warm-start at the identity: column normalization of the
  // identity yields one-hot targets, so regularization against it is plain
  // cross-entropy until real statistics accumulate.
  static ConfusionMatrix ema_identity(int num_classes, double momentum);
};

// Per-sample soft target. pcb_column and one_hot targets are probability
// vectors; row_ols targets are non-negative but may sum below 1 when the
// source row is unobserved.
struct SoftTarget {
  Eigen::VectorXd t;
  int source_class = 0;
  TargetMode mode = TargetMode::kPcbColumn;
};

// Numerically stable softmax (max subtraction, index-order summation).
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

// Probability over the C foreground classes. With a background logit the
// final entry is excluded before the softmax; without one this is a plain
// C-way softmax. Throws on non-finite logits.
Eigen::VectorXd fg_renormalize(const Eigen::VectorXd& logits,
                               bool has_background);

// Batch statistics. `probs` is N x C foreground probabilities, `labels` are
// 0-based true classes. Hard mode bins argmax votes (ties break to the
// lowest index); soft mode averages the probability vectors per true class.
ConfusionMatrix accumulate(const Eigen::MatrixXd& probs,
                           const std::vector<int>& labels, CmMode mode);

// Hard accumulation from precomputed argmax predictions.
ConfusionMatrix accumulate_hard(const std::vector<int>& preds,
                                const std::vector<int>& labels,
                                int num_classes);

// In-place EMA update: for every class y present in the batch,
// row_y <- momentum * row_y + (1 - momentum) * mean(probs of class y).
// Rows of absent classes are untouched. Throws if a probability vector does
// not sum to 1 within 1e-6.
void ema_update(ConfusionMatrix& cm, const Eigen::MatrixXd& batch_probs,
                const std::vector<int>& batch_labels);

// Divides each column by its sum, making columns sum to 1. A column whose
// sum falls below eps falls back to one-hot at the diagonal ("trust the
// prediction").
Eigen::MatrixXd column_normalize(const Eigen::MatrixXd& m,
                                 double eps = 1e-12);

// Soft target for true class y: pcb_column takes column y of the
// column-normalized matrix, row_ols takes row y as-is, one_hot the
// indicator of y.
SoftTarget soft_target(const ConfusionMatrix& cm, int y, TargetMode mode);

// Frobenius norm of M - M^T; zero iff the pairwise statistics are symmetric.
double pairwise_bias_norm(const Eigen::MatrixXd& m);

// Snapshot round trip: structured text with size, mode, momentum, counts
// and full-precision row-major entries.
void save_confmat(const ConfusionMatrix& cm, const std::string& path);
ConfusionMatrix load_confmat(const std::string& path);

}  // namespace pcb
