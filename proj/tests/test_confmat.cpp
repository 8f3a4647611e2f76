#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "pcb/confmat.hpp"
#include "pcb/rng.hpp"
#include "support.hpp"

using pcb::CmMode;
using pcb::ConfusionMatrix;
using pcb::TargetMode;

TEST_CASE("foreground renormalization ignores the background logit") {
  Eigen::VectorXd z(3);
  z << 0.0, 0.0, 5.0;
  const Eigen::VectorXd p = pcb::fg_renormalize(z, true);
  REQUIRE(p.size() == 2);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("plain softmax on hand-computed logits") {
  Eigen::VectorXd z(2);
  z << std::log(2.0), std::log(1.0);
  const Eigen::VectorXd p = pcb::fg_renormalize(z, false);
  CHECK(std::abs(p[0] - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(p[1] - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("softmax survives huge logits") {
  Eigen::VectorXd z(2);
  z << 1000.0, 0.0;
  const Eigen::VectorXd p = pcb::fg_renormalize(z, false);
  CHECK(p.allFinite());
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(p[1] == doctest::Approx(0.0));
}

TEST_CASE("non-finite logits are rejected") {
  Eigen::VectorXd z(2);
  z << std::numeric_limits<double>::infinity(), 0.0;
  CHECK_THROWS_AS(pcb::fg_renormalize(z, false), std::invalid_argument);
}

TEST_CASE("hard accumulation matches hand counts") {
  // labels {0,0,1}, argmax predictions {0,1,1}
  Eigen::MatrixXd probs(3, 2);
  probs << 0.9, 0.1,
           0.2, 0.8,
           0.3, 0.7;
  const auto cm = pcb::accumulate(probs, {0, 0, 1}, CmMode::kHard);
  CHECK(std::abs(cm.m(0, 0) - 0.5) < 1e-12);
  CHECK(std::abs(cm.m(0, 1) - 0.5) < 1e-12);
  CHECK(std::abs(cm.m(1, 0) - 0.0) < 1e-12);
  CHECK(std::abs(cm.m(1, 1) - 1.0) < 1e-12);
  CHECK(cm.counts[0] == 2);
  CHECK(cm.counts[1] == 1);
}

TEST_CASE("soft accumulation averages probability vectors per true class") {
  Eigen::MatrixXd probs(2, 2);
  probs << 0.2, 0.8,
           0.4, 0.6;
  const auto cm = pcb::accumulate(probs, {1, 1}, CmMode::kSoft);
  CHECK(std::abs(cm.m(1, 0) - 0.3) < 1e-12);
  CHECK(std::abs(cm.m(1, 1) - 0.7) < 1e-12);
  // row 0 unobserved: all-zero with count 0
  CHECK(cm.m.row(0).isZero(0.0));
  CHECK(cm.counts[0] == 0);
}

TEST_CASE("soft accumulation of one-hot predictions is the identity") {
  Eigen::MatrixXd probs = Eigen::MatrixXd::Identity(3, 3);
  const auto cm = pcb::accumulate(probs, {0, 1, 2}, CmMode::kSoft);
  CHECK((cm.m - Eigen::MatrixXd::Identity(3, 3)).norm() == 0.0);
}

TEST_CASE("hard and soft accumulation agree on one-hot predictions") {
  pcb::Rng rng(11);
  const int C = 5, N = 40;
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(N, C);
  std::vector<int> labels;
  for (int n = 0; n < N; ++n) {
    probs(n, static_cast<int>(rng.below(C))) = 1.0;
    labels.push_back(static_cast<int>(rng.below(C)));
  }
  const auto hard = pcb::accumulate(probs, labels, CmMode::kHard);
  const auto soft = pcb::accumulate(probs, labels, CmMode::kSoft);
  CHECK((hard.m - soft.m).norm() == 0.0);
}

TEST_CASE("argmax ties break to the lowest class index") {
  Eigen::MatrixXd probs(1, 3);
  probs << 0.4, 0.4, 0.2;
  const auto cm = pcb::accumulate(probs, {2}, CmMode::kHard);
  CHECK(cm.m(2, 0) == 1.0);
}

TEST_CASE("label outside the class range is rejected") {
  Eigen::MatrixXd probs(1, 2);
  probs << 0.5, 0.5;
  CHECK_THROWS_AS(pcb::accumulate(probs, {2}, CmMode::kHard),
                  std::out_of_range);
}

TEST_CASE("EMA update blends the mean batch prediction") {
  auto cm = ConfusionMatrix::ema_identity(3, 0.99);
  Eigen::MatrixXd probs(1, 3);
  probs << 0.6, 0.3, 0.1;
  pcb::ema_update(cm, probs, {0});
  CHECK(std::abs(cm.m(0, 0) - 0.996) < 1e-12);
  CHECK(std::abs(cm.m(0, 1) - 0.003) < 1e-12);
  CHECK(std::abs(cm.m(0, 2) - 0.001) < 1e-12);
}

TEST_CASE("classes absent from the batch keep their rows bit-exactly") {
  auto cm = ConfusionMatrix::ema_identity(3, 0.9);
  Eigen::MatrixXd warm(2, 3);
  warm << 0.5, 0.25, 0.25,
          0.1, 0.8, 0.1;
  pcb::ema_update(cm, warm, {0, 1});
  const Eigen::VectorXd row2_before = cm.m.row(2);
  Eigen::MatrixXd probs(1, 3);
  probs << 0.2, 0.5, 0.3;
  pcb::ema_update(cm, probs, {1});
  CHECK((cm.m.row(2).transpose() - row2_before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("repeated constant updates converge to the fixed point") {
  auto cm = ConfusionMatrix::ema_identity(2, 0.9);
  Eigen::MatrixXd probs(1, 2);
  probs << 0.3, 0.7;
  for (int i = 0; i < 500; ++i) pcb::ema_update(cm, probs, {0});
  CHECK(std::abs(cm.m(0, 0) - 0.3) < 1e-9);
  CHECK(std::abs(cm.m(0, 1) - 0.7) < 1e-9);
}

TEST_CASE("EMA rows stay probability vectors under random update streams") {
  pcb::Rng rng(7);
  auto cm = ConfusionMatrix::ema_identity(4, 0.95);
  for (int step = 0; step < 200; ++step) {
    const int n = 1 + static_cast<int>(rng.below(5));
    Eigen::MatrixXd probs(n, 4);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd p = testsup::random_vector(rng, 4, 1.0).array().abs();
      p /= p.sum();
      probs.row(i) = p.transpose();
      labels.push_back(static_cast<int>(rng.below(4)));
    }
    pcb::ema_update(cm, probs, labels);
    for (int r = 0; r < 4; ++r) {
      CHECK(std::abs(cm.m.row(r).sum() - 1.0) < 1e-9);
      CHECK((cm.m.row(r).array() >= 0.0).all());
      CHECK((cm.m.row(r).array() <= 1.0).all());
    }
  }
}

TEST_CASE("EMA update rejects unnormalized probabilities") {
  auto cm = ConfusionMatrix::ema_identity(2, 0.9);
  Eigen::MatrixXd probs(1, 2);
  probs << 0.5, 0.6;
  CHECK_THROWS_AS(pcb::ema_update(cm, probs, {0}), std::invalid_argument);
}

TEST_CASE("column normalization on the worked 2x2 example") {
  Eigen::MatrixXd m(2, 2);
  m << 0.8, 0.2,
       0.4, 0.6;
  const Eigen::MatrixXd mh = pcb::column_normalize(m);
  CHECK(std::abs(mh(0, 0) - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(mh(0, 1) - 0.25) < 1e-12);
  CHECK(std::abs(mh(1, 0) - 1.0 / 3.0) < 1e-12);
  CHECK(std::abs(mh(1, 1) - 0.75) < 1e-12);
}

TEST_CASE("column normalization fixes the identity") {
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(4, 4);
  CHECK((pcb::column_normalize(id) - id).norm() == 0.0);
}

TEST_CASE("columns sum to one after normalization") {
  pcb::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd m = testsup::random_stochastic(rng, 6);
    const Eigen::MatrixXd mh = pcb::column_normalize(m);
    for (int j = 0; j < 6; ++j) {
      CHECK(std::abs(mh.col(j).sum() - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("degenerate columns fall back to one-hot at the diagonal") {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(3, 3);
  m(0, 0) = 1.0;  // column 1 and 2 empty
  const Eigen::MatrixXd mh = pcb::column_normalize(m);
  CHECK(mh(1, 1) == 1.0);
  CHECK(mh(2, 2) == 1.0);
  CHECK(std::abs(mh.col(1).sum() - 1.0) < 1e-12);
}

TEST_CASE("pcb_column target reads the normalized column") {
  ConfusionMatrix cm;
  cm.m.resize(2, 2);
  cm.m << 0.8, 0.2,
          0.4, 0.6;
  cm.mode = CmMode::kSoft;
  cm.counts = {1, 1};
  const auto st = pcb::soft_target(cm, 0, TargetMode::kPcbColumn);
  CHECK(std::abs(st.t[0] - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(st.t[1] - 1.0 / 3.0) < 1e-12);
  // literal computation check against full column normalization
  const Eigen::MatrixXd mh = pcb::column_normalize(cm.m);
  CHECK((st.t - mh.col(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identity matrix gives one-hot targets") {
  auto cm = ConfusionMatrix::ema_identity(3, 0.99);
  const auto st = pcb::soft_target(cm, 2, TargetMode::kPcbColumn);
  CHECK(st.t[2] == 1.0);
  CHECK(st.t[0] == 0.0);
  CHECK(st.t[1] == 0.0);
}

TEST_CASE("row_ols target reads the raw row") {
  ConfusionMatrix cm;
  cm.m.resize(2, 2);
  cm.m << 0.9, 0.1,
          0.3, 0.7;
  cm.mode = CmMode::kSoft;
  cm.counts = {1, 1};
  const auto st = pcb::soft_target(cm, 1, TargetMode::kRowOls);
  CHECK(st.t[0] == 0.3);
  CHECK(st.t[1] == 0.7);
}

TEST_CASE("pairwise bias norm on the worked example") {
  Eigen::MatrixXd m(2, 2);
  m << 0.9, 0.1,
       0.3, 0.7;
  CHECK(std::abs(pcb::pairwise_bias_norm(m) - std::sqrt(0.08)) < 1e-12);
}

TEST_CASE("pairwise bias norm properties") {
  pcb::Rng rng(5);
  Eigen::MatrixXd sym = testsup::random_stochastic(rng, 4);
  sym = 0.5 * (sym + sym.transpose()).eval();
  CHECK(pcb::pairwise_bias_norm(sym) < 1e-12);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd m = testsup::random_stochastic(rng, 5);
    const double v = pcb::pairwise_bias_norm(m);
    CHECK(v >= 0.0);
    CHECK(std::abs(v - pcb::pairwise_bias_norm(m.transpose())) < 1e-12);
  }
}

TEST_CASE("confusion matrix snapshot round trip") {
  pcb::Rng rng(9);
  ConfusionMatrix cm;
  cm.m = testsup::random_stochastic(rng, 4);
  cm.mode = CmMode::kEma;
  cm.momentum = 0.997;
  cm.counts = {3, 0, 12, 5};
  const auto path =
      (std::filesystem::temp_directory_path() / "pcb_cm_roundtrip.json").string();
  pcb::save_confmat(cm, path);
  const auto back = pcb::load_confmat(path);
  CHECK((back.m - cm.m).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.mode == cm.mode);
  CHECK(back.momentum == cm.momentum);
  CHECK(back.counts == cm.counts);
  std::filesystem::remove(path);
}
