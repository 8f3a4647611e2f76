#pragma once

#include <Eigen/Dense>
#include <optional>

#include "pcb/confmat.hpp"

namespace pcb {

enum class LossVariant { kCe, kPcbCe, kBcePcb, kSeesawPcb, kBsce, kLabelSmooth };

struct LossConfig {
  LossVariant variant = LossVariant::kPcbCe;
  double alpha = 0.4;      // regularizer/base trade-off
  double smoothing = 0.0;  // label_smooth only
  TargetMode target_mode = TargetMode::kPcbColumn;
  std::optional<Eigen::VectorXd> class_weights;  // BCE form, defaults to ones
  std::optional<Eigen::MatrixXd> seesaw_s;       // external S, defaults to ones
  std::optional<Eigen::VectorXd> class_priors;   // BSCE
  // Appendix-form switch: column-normalize the targets fed to the BCE
  // regularizer instead of using raw matrix columns.
  bool bce_normalized_targets = false;
};

// Loss value plus exact gradient w.r.t. the logits that produced it.
struct LossValue {
  double value = 0.0;
  Eigen::VectorXd dlogits;
};

// Plain cross-entropy over the full logit vector (background included when
// present). Gradient is softmax minus one-hot.
LossValue ce(const Eigen::VectorXd& logits, int y, bool has_background);

// Cross-entropy of the foreground-renormalized probabilities against a
// constant soft target. The gradient flows only through foreground logits.
LossValue pcb_ce(const Eigen::VectorXd& logits, const SoftTarget& target,
                 bool has_background);

// Per-sample trade-off: alpha * L_reg + (1 - alpha) * L_ce for foreground
// samples, plain cross-entropy for background samples. Computed as
// L_ce + alpha * (L_reg - L_ce) so the regularizer path degenerates
// bit-exactly when its target is one-hot.
LossValue combined_cls(const Eigen::VectorXd& logits, int y,
                       const ConfusionMatrix& cm, const LossConfig& config,
                       double alpha_eff, bool has_background);

// Sigmoid binary cross-entropy over the C foreground classes with optional
// per-class weights. The regularizer swaps the one-hot targets for column y
// of the confusion matrix (raw by default). y == C marks a background
// sample: all-zero targets, no regularizer.
LossValue bce_pcb(const Eigen::VectorXd& logits, int y,
                  const ConfusionMatrix& cm, const LossConfig& config,
                  double alpha_eff);

// Seesaw-activation form: p_i = exp(z_i) / (sum_{j != i} S_ij exp(z_j)
// + exp(z_i)), base term -log p_y, regularizer against soft targets over
// the same activations. An all-ones S is exactly the softmax case and takes
// that code path.
LossValue seesaw_pcb(const Eigen::VectorXd& logits, int y,
                     const ConfusionMatrix& cm, const LossConfig& config,
                     double alpha_eff);

// Balanced-softmax baseline: cross-entropy on foreground logits shifted by
// the log class priors.
LossValue bsce(const Eigen::VectorXd& logits, int y, const LossConfig& config,
               bool has_background);

// Label-smoothing baseline over the given logit vector.
LossValue label_smooth(const Eigen::VectorXd& logits, int y, double smoothing);

// Variant dispatch used by the training loop. alpha_eff is the already
// scheduled coefficient (0 disables the regularizer bit-exactly).
LossValue evaluate_loss(const Eigen::VectorXd& logits, int y,
                        const ConfusionMatrix& cm, const LossConfig& config,
                        double alpha_eff, bool has_background);

}  // namespace pcb
