#pragma once

#include <Eigen/Dense>
#include <string>

#include "pcb/confmat.hpp"

namespace pcb {

enum class CalibKind { kCm, kMsOriginal, kMsModified };

// Immutable post-hoc calibration transform. Exactly one of m_hat / s is
// meaningful, selected by kind. m_hat is column-stochastic.
struct CalibrationTransform {
  CalibKind kind = CalibKind::kCm;
  Eigen::MatrixXd m_hat;      // kind == kCm
  Eigen::VectorXd s;          // kind == kMs*
  double suppress_threshold = 1e-3;
  bool has_background = false;

  int num_classes() const {
    return kind == CalibKind::kCm ? static_cast<int>(m_hat.rows())
                                  : static_cast<int>(s.size());
  }

  static CalibrationTransform from_cm(const Eigen::MatrixXd& m,
                                      bool has_background = false);
  static CalibrationTransform from_scores(const Eigen::VectorXd& s,
                                          CalibKind kind,
                                          bool has_background = false,
                                          double suppress_threshold = 1e-3);
};

// Applies p~_i = sum_j m_hat(i,j) p_j over the foreground entries. When the
// transform carries a background flag, the input has the background
// probability appended; the foreground output is renormalized to 1 and then
// rescaled by delta = 1 - p_bg while the background entry passes through.
Eigen::VectorXd cm_calibrate(const Eigen::VectorXd& p_hat,
                             const CalibrationTransform& t);

enum class MsVariant { kOriginal, kModified };

// Per-class mean score statistic: original reads the diagonal of the soft
// confusion matrix, modified uses the column sums (softened variant).
Eigen::VectorXd mean_scores(const ConfusionMatrix& cm, MsVariant variant);

// Mean-score calibration: p~_i proportional to p_i / s_i over foreground.
// Under the modified kind, classes whose score falls below the suppression
// threshold are zeroed before renormalization; throws if that suppresses
// every class. Background handling matches cm_calibrate.
Eigen::VectorXd ms_calibrate(const Eigen::VectorXd& p_hat,
                             const CalibrationTransform& t);

void save_transform(const CalibrationTransform& t, const std::string& path);
CalibrationTransform load_transform(const std::string& path);

}  // namespace pcb
