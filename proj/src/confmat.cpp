#include "pcb/confmat.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "pcb/numio.hpp"

namespace pcb {

namespace {

const char* mode_name(CmMode mode) {
  switch (mode) {
    case CmMode::kHard: return "hard";
    case CmMode::kSoft: return "soft";
    case CmMode::kEma: return "ema";
  }
  return "hard";
}

CmMode mode_from_name(const std::string& name) {
  if (name == "hard") return CmMode::kHard;
  if (name == "soft") return CmMode::kSoft;
  if (name == "ema") return CmMode::kEma;
  throw std::invalid_argument("unknown confusion matrix mode: " + name);
}

void check_label(int y, int num_classes) {
  if (y < 0 || y >= num_classes) {
    throw std::out_of_range("class label " + std::to_string(y) +
                            " outside [0, " + std::to_string(num_classes) +
                            ")");
  }
}

}  // namespace

ConfusionMatrix ConfusionMatrix::ema_identity(int num_classes,
                                              double momentum) {
  if (num_classes < 1) throw std::invalid_argument("need at least one class");
  if (!(momentum > 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in (0, 1)");
  }
  ConfusionMatrix cm;
  cm.m = Eigen::MatrixXd::Identity(num_classes, num_classes);
  cm.mode = CmMode::kEma;
  cm.momentum = momentum;
  cm.counts.assign(static_cast<std::size_t>(num_classes), 0);
  return cm;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd p(logits.size());
  double denom = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    denom += p[i];
  }
  p /= denom;
  return p;
}

Eigen::VectorXd fg_renormalize(const Eigen::VectorXd& logits,
                               bool has_background) {
  if (!logits.allFinite()) {
    throw std::invalid_argument("fg_renormalize: non-finite logit");
  }
  if (has_background) {
    if (logits.size() < 2) {
      throw std::invalid_argument(
          "fg_renormalize: need at least one foreground logit");
    }
    return softmax(logits.head(logits.size() - 1));
  }
  return softmax(logits);
}

ConfusionMatrix accumulate(const Eigen::MatrixXd& probs,
                           const std::vector<int>& labels, CmMode mode) {
  if (mode == CmMode::kEma) {
    throw std::invalid_argument(
        "accumulate: EMA matrices are built with ema_update");
  }
  const int num_classes = static_cast<int>(probs.cols());
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw std::invalid_argument("accumulate: probs/labels size mismatch");
  }
  ConfusionMatrix cm;
  cm.m = Eigen::MatrixXd::Zero(num_classes, num_classes);
  cm.mode = mode;
  cm.counts.assign(static_cast<std::size_t>(num_classes), 0);

  for (Eigen::Index n = 0; n < probs.rows(); ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    check_label(y, num_classes);
    if (mode == CmMode::kHard) {
      Eigen::Index j = 0;
      probs.row(n).maxCoeff(&j);  // first maximum wins: lowest-index tie-break
      cm.m(y, j) += 1.0;
    } else {
      cm.m.row(y) += probs.row(n);
    }
    cm.counts[static_cast<std::size_t>(y)] += 1;
  }
  for (int i = 0; i < num_classes; ++i) {
    if (cm.counts[static_cast<std::size_t>(i)] > 0) {
      cm.m.row(i) /= static_cast<double>(cm.counts[static_cast<std::size_t>(i)]);
    }
  }
  return cm;
}

ConfusionMatrix accumulate_hard(const std::vector<int>& preds,
                                const std::vector<int>& labels,
                                int num_classes) {
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("accumulate_hard: preds/labels size mismatch");
  }
  ConfusionMatrix cm;
  cm.m = Eigen::MatrixXd::Zero(num_classes, num_classes);
  cm.mode = CmMode::kHard;
  cm.counts.assign(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t n = 0; n < preds.size(); ++n) {
    check_label(labels[n], num_classes);
    check_label(preds[n], num_classes);
    cm.m(labels[n], preds[n]) += 1.0;
    cm.counts[static_cast<std::size_t>(labels[n])] += 1;
  }
  for (int i = 0; i < num_classes; ++i) {
    if (cm.counts[static_cast<std::size_t>(i)] > 0) {
      cm.m.row(i) /= static_cast<double>(cm.counts[static_cast<std::size_t>(i)]);
    }
  }
  return cm;
}

void ema_update(ConfusionMatrix& cm, const Eigen::MatrixXd& batch_probs,
                const std::vector<int>& batch_labels) {
  if (cm.mode != CmMode::kEma) {
    throw std::invalid_argument("ema_update: matrix mode is not ema");
  }
  const int num_classes = cm.num_classes();
  if (batch_probs.cols() != num_classes) {
    throw std::invalid_argument("ema_update: probability width mismatch");
  }
  if (static_cast<std::size_t>(batch_probs.rows()) != batch_labels.size()) {
    throw std::invalid_argument("ema_update: probs/labels size mismatch");
  }
  for (Eigen::Index n = 0; n < batch_probs.rows(); ++n) {
    const double s = batch_probs.row(n).sum();
    if (std::abs(s - 1.0) > 1e-6) {
      throw std::invalid_argument(
          "ema_update: probability vector sums to " + fmt_sci(s));
    }
  }

  // Mean prediction per class present in the batch, in one pass.
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(num_classes, num_classes);
  std::vector<std::int64_t> seen(static_cast<std::size_t>(num_classes), 0);
  for (Eigen::Index n = 0; n < batch_probs.rows(); ++n) {
    const int y = batch_labels[static_cast<std::size_t>(n)];
    check_label(y, num_classes);
    sums.row(y) += batch_probs.row(n);
    seen[static_cast<std::size_t>(y)] += 1;
  }
  const double g = cm.momentum;
  for (int y = 0; y < num_classes; ++y) {
    const std::int64_t c = seen[static_cast<std::size_t>(y)];
    if (c == 0) continue;  // absent classes are skipped, bit-exactly
    const Eigen::RowVectorXd mean = sums.row(y) / static_cast<double>(c);
    cm.m.row(y) = g * cm.m.row(y) + (1.0 - g) * mean;
    cm.counts[static_cast<std::size_t>(y)] += c;
  }
}

Eigen::MatrixXd column_normalize(const Eigen::MatrixXd& m, double eps) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("column_normalize: matrix must be square");
  }
  if ((m.array() < 0.0).any()) {
    throw std::invalid_argument("column_normalize: negative entry");
  }
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double s = m.col(j).sum();
    if (s < eps) {
      out.col(j).setZero();
      out(j, j) = 1.0;
    } else {
      out.col(j) = m.col(j) / s;
    }
  }
  return out;
}

SoftTarget soft_target(const ConfusionMatrix& cm, int y, TargetMode mode) {
  const int num_classes = cm.num_classes();
  check_label(y, num_classes);
  SoftTarget st;
  st.source_class = y;
  st.mode = mode;
  switch (mode) {
    case TargetMode::kPcbColumn: {
      // Column y of the column-normalized matrix; only that column is needed.
      const double s = cm.m.col(y).sum();
      if (s < 1e-12) {
        st.t = Eigen::VectorXd::Zero(num_classes);
        st.t[y] = 1.0;
      } else {
        st.t = cm.m.col(y) / s;
      }
      break;
    }
    case TargetMode::kRowOls:
      st.t = cm.m.row(y).transpose();
      break;
    case TargetMode::kOneHot:
      st.t = Eigen::VectorXd::Zero(num_classes);
      st.t[y] = 1.0;
      break;
  }
  return st;
}

double pairwise_bias_norm(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument("pairwise_bias_norm: matrix must be square");
  }
  return (m - m.transpose()).norm();
}

void save_confmat(const ConfusionMatrix& cm, const std::string& path) {
  nlohmann::json j;
  j["format"] = "pcblab.confmat.v1";
  j["num_classes"] = cm.num_classes();
  j["mode"] = mode_name(cm.mode);
  j["momentum"] = cm.momentum;
  j["counts"] = cm.counts;
  std::vector<double> rows;
  rows.reserve(static_cast<std::size_t>(cm.m.size()));
  for (Eigen::Index i = 0; i < cm.m.rows(); ++i) {
    for (Eigen::Index k = 0; k < cm.m.cols(); ++k) {
      rows.push_back(cm.m(i, k));
    }
  }
  j["rows"] = rows;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

ConfusionMatrix load_confmat(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "pcblab.confmat.v1") {
    throw std::runtime_error(path + ": not a confusion matrix snapshot");
  }
  ConfusionMatrix cm;
  const int n = j.at("num_classes").get<int>();
  cm.mode = mode_from_name(j.at("mode").get<std::string>());
  cm.momentum = j.at("momentum").get<double>();
  cm.counts = j.at("counts").get<std::vector<std::int64_t>>();
  const auto rows = j.at("rows").get<std::vector<double>>();
  if (rows.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n)) {
    throw std::runtime_error(path + ": entry count mismatch");
  }
  cm.m.resize(n, n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      cm.m(i, k) = rows[static_cast<std::size_t>(i) * n + k];
    }
  }
  return cm;
}

}  // namespace pcb
