#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>

#include "pcb/rng.hpp"

namespace testsup {

// Central finite differences of a scalar function. The error measure is
// |analytic - numeric| / max(1, |analytic|, |numeric|), the usual
// gradient-check normalization (absolute near zero, relative when large).
inline double max_grad_error(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, const Eigen::VectorXd& analytic,
    double h = 1e-5) {
  double worst = 0.0;
  Eigen::VectorXd p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double fp = f(p);
    p[i] = orig - h;
    const double fm = f(p);
    p[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom =
        std::max({1.0, std::abs(numeric), std::abs(analytic[i])});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

inline Eigen::VectorXd random_vector(pcb::Rng& rng, int n, double scale = 2.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * (rng.uniform01() - 0.5);
  return v;
}

// Random row-stochastic matrix with strictly positive entries.
inline Eigen::MatrixXd random_stochastic(pcb::Rng& rng, int n) {
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      m(i, j) = 0.05 + rng.uniform01();
      sum += m(i, j);
    }
    m.row(i) /= sum;
  }
  return m;
}

}  // namespace testsup
