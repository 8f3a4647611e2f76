#include "pcb/calib.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace pcb {

namespace {

const char* kind_name(CalibKind kind) {
  switch (kind) {
    case CalibKind::kCm: return "cm";
    case CalibKind::kMsOriginal: return "ms_original";
    case CalibKind::kMsModified: return "ms_modified";
  }
  return "cm";
}

CalibKind kind_from_name(const std::string& name) {
  if (name == "cm") return CalibKind::kCm;
  if (name == "ms_original") return CalibKind::kMsOriginal;
  if (name == "ms_modified") return CalibKind::kMsModified;
  throw std::invalid_argument("unknown calibration kind: " + name);
}

// Foreground renormalization followed by the background rescale, in the
// stated two-step order: divide by the foreground sum, then multiply by
// delta = 1 - p_bg.
Eigen::VectorXd finish_with_background(Eigen::VectorXd fg, double p_bg) {
  const double s = fg.sum();
  if (s > 0.0) fg /= s;
  const double delta = 1.0 - p_bg;
  Eigen::VectorXd out(fg.size() + 1);
  out.head(fg.size()) = fg * delta;
  out[fg.size()] = p_bg;
  return out;
}

void check_input(const Eigen::VectorXd& p_hat,
                 const CalibrationTransform& t) {
  const Eigen::Index expect =
      t.num_classes() + (t.has_background ? 1 : 0);
  if (p_hat.size() != expect) {
    throw std::invalid_argument("calibrate: expected probability vector of "
                                "length " + std::to_string(expect));
  }
  if ((p_hat.array() < 0.0).any()) {
    throw std::invalid_argument("calibrate: negative probability");
  }
}

}  // namespace

CalibrationTransform CalibrationTransform::from_cm(const Eigen::MatrixXd& m,
                                                   bool has_background) {
  CalibrationTransform t;
  t.kind = CalibKind::kCm;
  t.m_hat = column_normalize(m);
  t.has_background = has_background;
  return t;
}

CalibrationTransform CalibrationTransform::from_scores(
    const Eigen::VectorXd& s, CalibKind kind, bool has_background,
    double suppress_threshold) {
  if (kind == CalibKind::kCm) {
    throw std::invalid_argument("from_scores: kind must be a mean-score kind");
  }
  if ((s.array() < 0.0).any()) {
    throw std::invalid_argument("from_scores: negative score");
  }
  CalibrationTransform t;
  t.kind = kind;
  t.s = s;
  t.has_background = has_background;
  t.suppress_threshold = suppress_threshold;
  return t;
}

Eigen::VectorXd cm_calibrate(const Eigen::VectorXd& p_hat,
                             const CalibrationTransform& t) {
  if (t.kind != CalibKind::kCm) {
    throw std::invalid_argument("cm_calibrate: transform kind is not cm");
  }
  check_input(p_hat, t);
  const int num_classes = t.num_classes();
  if (!t.has_background) {
    return t.m_hat * p_hat;
  }
  Eigen::VectorXd fg = t.m_hat * p_hat.head(num_classes);
  return finish_with_background(std::move(fg), p_hat[num_classes]);
}

Eigen::VectorXd mean_scores(const ConfusionMatrix& cm, MsVariant variant) {
  if (variant == MsVariant::kOriginal) {
    return cm.m.diagonal();
  }
  return cm.m.colwise().sum().transpose();
}

Eigen::VectorXd ms_calibrate(const Eigen::VectorXd& p_hat,
                             const CalibrationTransform& t) {
  if (t.kind == CalibKind::kCm) {
    throw std::invalid_argument("ms_calibrate: transform kind is not ms");
  }
  check_input(p_hat, t);
  const int num_classes = t.num_classes();

  Eigen::VectorXd ratio(num_classes);
  int alive = 0;
  for (int i = 0; i < num_classes; ++i) {
    if (t.kind == CalibKind::kMsModified &&
        t.s[i] < t.suppress_threshold) {
      ratio[i] = 0.0;  // "do not predict class i"
      continue;
    }
    const double denom = std::max(t.s[i], std::numeric_limits<double>::min());
    ratio[i] = p_hat[i] / denom;
    ++alive;
  }
  if (alive == 0) {
    throw std::domain_error("ms_calibrate: every class suppressed");
  }

  if (!t.has_background) {
    const double sum = ratio.sum();
    if (sum <= 0.0) {
      throw std::domain_error("ms_calibrate: no probability mass left");
    }
    return ratio / sum;
  }
  return finish_with_background(std::move(ratio), p_hat[num_classes]);
}

void save_transform(const CalibrationTransform& t, const std::string& path) {
  nlohmann::json j;
  j["format"] = "pcblab.calib.v1";
  j["kind"] = kind_name(t.kind);
  j["has_background"] = t.has_background;
  j["suppress_threshold"] = t.suppress_threshold;
  if (t.kind == CalibKind::kCm) {
    j["num_classes"] = static_cast<int>(t.m_hat.rows());
    std::vector<double> rows;
    for (Eigen::Index i = 0; i < t.m_hat.rows(); ++i) {
      for (Eigen::Index k = 0; k < t.m_hat.cols(); ++k) {
        rows.push_back(t.m_hat(i, k));
      }
    }
    j["rows"] = rows;
  } else {
    j["num_classes"] = static_cast<int>(t.s.size());
    j["scores"] = std::vector<double>(t.s.data(), t.s.data() + t.s.size());
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

CalibrationTransform load_transform(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "pcblab.calib.v1") {
    throw std::runtime_error(path + ": not a calibration transform");
  }
  CalibrationTransform t;
  t.kind = kind_from_name(j.at("kind").get<std::string>());
  t.has_background = j.at("has_background").get<bool>();
  t.suppress_threshold = j.at("suppress_threshold").get<double>();
  const int n = j.at("num_classes").get<int>();
  if (t.kind == CalibKind::kCm) {
    const auto rows = j.at("rows").get<std::vector<double>>();
    t.m_hat.resize(n, n);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < n; ++k) {
        t.m_hat(i, k) = rows[static_cast<std::size_t>(i) * n + k];
      }
    }
  } else {
    const auto scores = j.at("scores").get<std::vector<double>>();
    t.s = Eigen::Map<const Eigen::VectorXd>(scores.data(),
                                            static_cast<Eigen::Index>(n));
  }
  return t;
}

}  // namespace pcb
