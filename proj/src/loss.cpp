#include "pcb/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace pcb {

namespace {

// -sum_i t_i log p_i, skipping zero-target terms so one-hot targets reduce
// to a single log and 0 * log(0) never produces a NaN.
double ce_against(const Eigen::VectorXd& probs, const Eigen::VectorXd& t) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (t[i] != 0.0) acc += t[i] * std::log(probs[i]);
  }
  return -acc;
}

// base + alpha * (reg - base); exact at alpha == 0 and whenever the two
// terms are bitwise equal.
LossValue lerp_combine(const LossValue& base, const LossValue& reg,
                       double alpha) {
  LossValue out;
  out.value = base.value + alpha * (reg.value - base.value);
  out.dlogits = base.dlogits + alpha * (reg.dlogits - base.dlogits);
  return out;
}

double log_sigmoid(double z) {
  // -softplus(-z), split to avoid exp overflow.
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}

// Weighted BCE against an arbitrary per-class target vector.
LossValue bce_against(const Eigen::VectorXd& logits, const Eigen::VectorXd& t,
                      const Eigen::VectorXd& w) {
  LossValue out;
  out.dlogits.resize(logits.size());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    acc -= w[i] * (t[i] * log_sigmoid(z) + (1.0 - t[i]) * log_sigmoid(-z));
    out.dlogits[i] = w[i] * (sigmoid(z) - t[i]);
  }
  out.value = acc;
  return out;
}

void check_foreground(int y, int num_classes, const char* who) {
  if (y < 0 || y >= num_classes) {
    throw std::out_of_range(std::string(who) + ": foreground label " +
                            std::to_string(y) + " outside [0, " +
                            std::to_string(num_classes) + ")");
  }
}

}  // namespace

LossValue ce(const Eigen::VectorXd& logits, int y, bool has_background) {
  (void)has_background;  // background is simply the last logit when present
  if (y < 0 || y >= logits.size()) {
    throw std::out_of_range("ce: label outside logit range");
  }
  const Eigen::VectorXd p = softmax(logits);
  LossValue out;
  out.value = -std::log(p[y]);
  out.dlogits = p;
  out.dlogits[y] -= 1.0;
  return out;
}

LossValue pcb_ce(const Eigen::VectorXd& logits, const SoftTarget& target,
                 bool has_background) {
  const Eigen::Index num_fg = logits.size() - (has_background ? 1 : 0);
  if (target.t.size() != num_fg) {
    throw std::invalid_argument("pcb_ce: target length mismatch");
  }
  const Eigen::VectorXd p = fg_renormalize(logits, has_background);
  const double mass = target.t.sum();
  LossValue out;
  out.value = ce_against(p, target.t);
  out.dlogits = Eigen::VectorXd::Zero(logits.size());
  out.dlogits.head(num_fg) = p * mass - target.t;
  return out;
}

LossValue combined_cls(const Eigen::VectorXd& logits, int y,
                       const ConfusionMatrix& cm, const LossConfig& config,
                       double alpha_eff, bool has_background) {
  const int num_classes = cm.num_classes();
  const Eigen::Index expect = num_classes + (has_background ? 1 : 0);
  if (logits.size() != expect) {
    throw std::invalid_argument("combined_cls: logit length mismatch");
  }
  if (alpha_eff < 0.0 || alpha_eff > 1.0) {
    throw std::invalid_argument("combined_cls: alpha outside [0, 1]");
  }
  const bool background_sample = has_background && y == num_classes;
  LossValue base = ce(logits, y, has_background);
  if (background_sample || alpha_eff == 0.0) {
    return base;
  }
  check_foreground(y, num_classes, "combined_cls");
  const LossValue reg =
      pcb_ce(logits, soft_target(cm, y, config.target_mode), has_background);
  return lerp_combine(base, reg, alpha_eff);
}

LossValue bce_pcb(const Eigen::VectorXd& logits, int y,
                  const ConfusionMatrix& cm, const LossConfig& config,
                  double alpha_eff) {
  const int num_classes = cm.num_classes();
  if (logits.size() != num_classes) {
    throw std::invalid_argument("bce_pcb: expected one logit per class");
  }
  Eigen::VectorXd w = config.class_weights
                          ? *config.class_weights
                          : Eigen::VectorXd::Ones(num_classes);
  if (w.size() != num_classes || (w.array() <= 0.0).any()) {
    throw std::invalid_argument("bce_pcb: weights must be positive, length C");
  }
  const bool background_sample = y == num_classes;
  if (!background_sample) check_foreground(y, num_classes, "bce_pcb");

  Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(num_classes);
  if (!background_sample) one_hot[y] = 1.0;
  LossValue base = bce_against(logits, one_hot, w);
  if (background_sample || alpha_eff == 0.0) {
    return base;
  }
  // Raw matrix column by default; the normalized form is the appendix
  // variant behind a flag.
  Eigen::VectorXd t = config.bce_normalized_targets
                          ? soft_target(cm, y, TargetMode::kPcbColumn).t
                          : Eigen::VectorXd(cm.m.col(y));
  const LossValue reg = bce_against(logits, t, w);
  return lerp_combine(base, reg, alpha_eff);
}

LossValue seesaw_pcb(const Eigen::VectorXd& logits, int y,
                     const ConfusionMatrix& cm, const LossConfig& config,
                     double alpha_eff) {
  const int num_classes = cm.num_classes();
  if (logits.size() != num_classes) {
    throw std::invalid_argument("seesaw_pcb: expected one logit per class");
  }
  check_foreground(y, num_classes, "seesaw_pcb");
  const bool plain =
      !config.seesaw_s || (config.seesaw_s->array() == 1.0).all();
  if (plain) {
    // The denominator reduces exactly to the softmax one.
    LossValue base = ce(logits, y, false);
    if (alpha_eff == 0.0) return base;
    const LossValue reg =
        pcb_ce(logits, soft_target(cm, y, config.target_mode), false);
    return lerp_combine(base, reg, alpha_eff);
  }

  const Eigen::MatrixXd& s = *config.seesaw_s;
  if (s.rows() != num_classes || s.cols() != num_classes) {
    throw std::invalid_argument("seesaw_pcb: S must be C x C");
  }
  if ((s.array() <= 0.0).any()) {
    throw std::invalid_argument("seesaw_pcb: S entries must be positive");
  }

  const double m = logits.maxCoeff();
  const Eigen::VectorXd e = (logits.array() - m).exp();
  Eigen::VectorXd denom(num_classes);
  for (int i = 0; i < num_classes; ++i) {
    double d = 0.0;
    for (int j = 0; j < num_classes; ++j) {
      d += (i == j ? 1.0 : s(i, j)) * e[j];
    }
    denom[i] = d;
  }
  const Eigen::VectorXd p = e.array() / denom.array();

  auto seesaw_term = [&](const Eigen::VectorXd& t) {
    LossValue lv;
    lv.value = ce_against(p, t);
    lv.dlogits.resize(num_classes);
    for (int k = 0; k < num_classes; ++k) {
      double q = 0.0;
      for (int i = 0; i < num_classes; ++i) {
        if (t[i] == 0.0) continue;
        q += t[i] * (i == k ? 1.0 : s(i, k)) / denom[i];
      }
      lv.dlogits[k] = e[k] * q - t[k];
    }
    return lv;
  };

  Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(num_classes);
  one_hot[y] = 1.0;
  LossValue base = seesaw_term(one_hot);
  if (alpha_eff == 0.0) return base;
  const LossValue reg =
      seesaw_term(soft_target(cm, y, config.target_mode).t);
  return lerp_combine(base, reg, alpha_eff);
}

LossValue bsce(const Eigen::VectorXd& logits, int y, const LossConfig& config,
               bool has_background) {
  if (!config.class_priors) {
    throw std::invalid_argument("bsce: class priors missing");
  }
  const Eigen::Index num_fg = logits.size() - (has_background ? 1 : 0);
  const Eigen::VectorXd& n = *config.class_priors;
  if (n.size() != num_fg) {
    throw std::invalid_argument("bsce: priors length mismatch");
  }
  if ((n.array() <= 0.0).any()) {
    throw std::invalid_argument("bsce: priors must be positive");
  }
  Eigen::VectorXd shifted = logits;
  shifted.head(num_fg) += n.array().log().matrix();
  return ce(shifted, y, has_background);
}

LossValue label_smooth(const Eigen::VectorXd& logits, int y,
                       double smoothing) {
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw std::invalid_argument("label_smooth: smoothing outside [0, 1)");
  }
  if (y < 0 || y >= logits.size()) {
    throw std::out_of_range("label_smooth: label outside logit range");
  }
  const Eigen::Index n = logits.size();
  const Eigen::VectorXd p = softmax(logits);
  Eigen::VectorXd t =
      Eigen::VectorXd::Constant(n, smoothing / static_cast<double>(n));
  t[y] += 1.0 - smoothing;
  LossValue out;
  out.value = ce_against(p, t);
  out.dlogits = p - t;
  return out;
}

LossValue evaluate_loss(const Eigen::VectorXd& logits, int y,
                        const ConfusionMatrix& cm, const LossConfig& config,
                        double alpha_eff, bool has_background) {
  switch (config.variant) {
    case LossVariant::kCe:
      return ce(logits, y, has_background);
    case LossVariant::kPcbCe:
      return combined_cls(logits, y, cm, config, alpha_eff, has_background);
    case LossVariant::kBcePcb:
      return bce_pcb(logits, y, cm, config, alpha_eff);
    case LossVariant::kSeesawPcb:
      return seesaw_pcb(logits, y, cm, config, alpha_eff);
    case LossVariant::kBsce:
      return bsce(logits, y, config, has_background);
    case LossVariant::kLabelSmooth:
      return label_smooth(logits, y, config.smoothing);
  }
  throw std::logic_error("evaluate_loss: unknown variant");
}

}  // namespace pcb
