#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "pcb/trainer.hpp"

using pcb::HeadConfig;
using pcb::LongTailDataset;
using pcb::LossConfig;
using pcb::LossVariant;
using pcb::RecurrentHead;
using pcb::SamplerKind;
using pcb::SgdOptimizer;
using pcb::SynthConfig;
using pcb::TrainConfig;

namespace {

LongTailDataset tiny_dataset(std::uint64_t seed = 5) {
  SynthConfig cfg;
  cfg.num_classes = 4;
  cfg.max_count = 12;
  cfg.imbalance = 12.0;
  cfg.feature_dim = 4;
  cfg.confusability = 0.25;
  cfg.val_per_class = 4;
  cfg.seed = seed;
  return pcb::synth(cfg);
}

HeadConfig tiny_head(const LongTailDataset& ds) {
  HeadConfig cfg;
  cfg.input_dim = ds.feature_dim();
  cfg.backbone_hidden = 8;
  cfg.feature_dim = 6;
  cfg.num_classes = ds.num_classes();
  cfg.proj_hidden = 8;
  cfg.steps = 2;
  cfg.init_seed = 3;
  return cfg;
}

TrainConfig tiny_train(int epochs = 3) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.lr = 0.05;
  cfg.warmup_epochs = 0;
  cfg.decay_epochs = {};
  cfg.pcb_start_epoch = 1;
  cfg.gamma = 0.9;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("learning rate schedule: ramp, plateau, decay") {
  TrainConfig cfg;
  cfg.epochs = 90;
  cfg.lr = 0.2;
  cfg.warmup_epochs = 5;
  cfg.decay_epochs = {60, 80};
  cfg.decay_factor = 0.1;
  CHECK(std::abs(pcb::lr_at(0, cfg) - 0.04) < 1e-15);
  CHECK(std::abs(pcb::lr_at(4, cfg) - 0.2) < 1e-15);
  CHECK(std::abs(pcb::lr_at(30, cfg) - 0.2) < 1e-15);
  CHECK(std::abs(pcb::lr_at(60, cfg) - 0.02) < 1e-15);
  CHECK(std::abs(pcb::lr_at(85, cfg) - 0.002) < 1e-15);
  cfg.warmup_epochs = 0;
  CHECK(pcb::lr_at(0, cfg) == 0.2);
  CHECK_THROWS_AS(pcb::lr_at(-1, cfg), std::out_of_range);
}

TEST_CASE("repeat factors follow the square-root rule") {
  // class frequency 1e-4 against threshold 1e-2 gives sqrt(100) = 10
  const std::vector<std::int64_t> counts = {9999, 1};
  const auto r = pcb::repeat_factors(counts, 0.01);
  CHECK(r[0] == 1.0);  // frequent class clamped at 1
  CHECK(std::abs(r[1] - 10.0) < 1e-12);
}

TEST_CASE("threshold below every frequency degenerates to no repetition") {
  const std::vector<std::int64_t> counts = {50, 30, 20};
  const auto r = pcb::repeat_factors(counts, 0.1);
  for (double f : r) CHECK(f == 1.0);
}

TEST_CASE("zero-count classes are rejected") {
  CHECK_THROWS_AS(pcb::repeat_factors({5, 0}, 0.5), std::invalid_argument);
}

TEST_CASE("sgd without momentum is plain gradient descent") {
  Eigen::VectorXd p(2), g(2);
  p << 1.0, -2.0;
  g << 0.5, 0.5;
  SgdOptimizer opt(2, 0.0, 0.0);
  opt.step(p, g, 0.1);
  CHECK(std::abs(p[0] - 0.95) < 1e-15);
  CHECK(std::abs(p[1] + 2.05) < 1e-15);
}

TEST_CASE("two constant-gradient steps displace by lr * g * (2 + momentum)") {
  const double mu = 0.9, lr = 0.1, g0 = 0.3;
  Eigen::VectorXd p(1), g(1);
  p << 2.0;
  g << g0;
  SgdOptimizer opt(1, mu, 0.0);
  opt.step(p, g, lr);
  opt.step(p, g, lr);
  CHECK(std::abs((2.0 - p[0]) - lr * g0 * (2.0 + mu)) < 1e-12);
}

TEST_CASE("weight decay alone shrinks parameters geometrically") {
  Eigen::VectorXd p(1), g(1);
  p << 1.0;
  g << 0.0;
  SgdOptimizer opt(1, 0.0, 0.1);
  const double lr = 0.5;
  opt.step(p, g, lr);
  CHECK(std::abs(p[0] - (1.0 - lr * 0.1)) < 1e-15);
  opt.step(p, g, lr);
  CHECK(std::abs(p[0] - (1.0 - lr * 0.1) * (1.0 - lr * 0.1)) < 1e-12);
}

TEST_CASE("non-finite gradients abort the step") {
  Eigen::VectorXd p(1), g(1);
  p << 1.0;
  g << std::numeric_limits<double>::quiet_NaN();
  SgdOptimizer opt(1, 0.9, 0.0);
  CHECK_THROWS_AS(opt.step(p, g, 0.1), std::runtime_error);
}

TEST_CASE("frozen prefix keeps parameters and velocity untouched") {
  Eigen::VectorXd p(3), g(3);
  p << 1.0, 1.0, 1.0;
  g << 0.5, 0.5, 0.5;
  SgdOptimizer opt(3, 0.9, 0.01);
  opt.step(p, g, 0.1, 2);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 1.0);
  CHECK(p[2] != 1.0);
  CHECK(opt.velocity()[0] == 0.0);
}

TEST_CASE("zero alpha training equals disabled regularizer bit-exactly") {
  const auto ds = tiny_dataset();
  const HeadConfig hc = tiny_head(ds);
  const TrainConfig tc = tiny_train();

  LossConfig with_pcb;
  with_pcb.variant = LossVariant::kPcbCe;
  with_pcb.alpha = 0.0;
  const auto a = pcb::run_training(ds, RecurrentHead(hc), with_pcb, tc);

  LossConfig plain;
  plain.variant = LossVariant::kCe;
  const auto b = pcb::run_training(ds, RecurrentHead(hc), plain, tc);

  CHECK((a.head.params() - b.head.params()).cwiseAbs().maxCoeff() == 0.0);
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(a.epochs[e].mean_loss == b.epochs[e].mean_loss);
    CHECK(a.epochs[e].val.acc_overall == b.epochs[e].val.acc_overall);
  }
}

TEST_CASE("a start epoch beyond the schedule never activates the regularizer") {
  const auto ds = tiny_dataset();
  const HeadConfig hc = tiny_head(ds);
  TrainConfig tc = tiny_train();
  LossConfig pcb_cfg;
  pcb_cfg.variant = LossVariant::kPcbCe;
  pcb_cfg.alpha = 0.6;

  TrainConfig never = tc;
  never.pcb_start_epoch = tc.epochs;
  const auto gated = pcb::run_training(ds, RecurrentHead(hc), pcb_cfg, never);

  LossConfig plain;
  plain.variant = LossVariant::kCe;
  const auto baseline = pcb::run_training(ds, RecurrentHead(hc), plain, never);
  CHECK((gated.head.params() - baseline.head.params()).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("same seed and config reproduce the run bit-exactly") {
  const auto ds = tiny_dataset();
  const HeadConfig hc = tiny_head(ds);
  const TrainConfig tc = tiny_train();
  LossConfig lc;
  lc.variant = LossVariant::kPcbCe;
  lc.alpha = 0.4;
  const auto a = pcb::run_training(ds, RecurrentHead(hc), lc, tc);
  const auto b = pcb::run_training(ds, RecurrentHead(hc), lc, tc);
  CHECK((a.head.params() - b.head.params()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.cm.m - b.cm.m).cwiseAbs().maxCoeff() == 0.0);
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(pcb::epoch_csv_row(a.epochs[e]) == pcb::epoch_csv_row(b.epochs[e]));
  }
}

TEST_CASE("the first regularized iteration still sees identity statistics") {
  // With activation at epoch 0 and an identity-initialized matrix, the very
  // first iteration's targets are one-hot, so its loss matches plain
  // cross-entropy; statistics only fold in after the update.
  const auto ds = tiny_dataset();
  const HeadConfig hc = tiny_head(ds);
  TrainConfig tc = tiny_train(1);
  tc.pcb_start_epoch = 0;
  tc.batch_size = 1 << 20;  // single batch: one iteration total
  LossConfig lc;
  lc.variant = LossVariant::kPcbCe;
  lc.alpha = 0.8;
  const auto reg = pcb::run_training(ds, RecurrentHead(hc), lc, tc);
  LossConfig plain;
  plain.variant = LossVariant::kCe;
  const auto base = pcb::run_training(ds, RecurrentHead(hc), plain, tc);
  CHECK(reg.epochs[0].mean_loss == base.epochs[0].mean_loss);
}

TEST_CASE("decoupled fine-tuning leaves the backbone bit-unchanged") {
  const auto ds = tiny_dataset();
  const HeadConfig hc = tiny_head(ds);
  TrainConfig tc = tiny_train(4);
  tc.decoupled = true;
  tc.pcb_start_epoch = 2;
  LossConfig lc;
  lc.variant = LossVariant::kPcbCe;
  lc.alpha = 0.5;

  // Reference: phase one only.
  TrainConfig phase1 = tc;
  phase1.epochs = 2;
  phase1.pcb_start_epoch = 2;
  const auto p1 = pcb::run_training(ds, RecurrentHead(hc), lc, phase1);
  const auto full = pcb::run_training(ds, RecurrentHead(hc), lc, tc);

  const auto nb = static_cast<Eigen::Index>(full.head.backbone_param_count());
  CHECK((full.head.params().head(nb) - p1.head.params().head(nb))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  // classifier parameters did move in phase two
  CHECK((full.head.params().tail(full.head.params().size() - nb) -
         p1.head.params().tail(p1.head.params().size() - nb))
            .cwiseAbs()
            .maxCoeff() > 0.0);
}

TEST_CASE("repeat-factor sampling oversamples rare classes") {
  const auto ds = tiny_dataset();
  const auto factors = pcb::repeat_factors(ds.class_counts, 0.3);
  CHECK(factors.back() > 1.0);  // rarest class gets repeated

  const HeadConfig hc = tiny_head(ds);
  TrainConfig tc = tiny_train(1);
  tc.sampler = SamplerKind::kRepeatFactor;
  tc.rf_threshold = 0.3;
  LossConfig lc;
  lc.variant = LossVariant::kCe;
  // runs deterministically and sees more samples than the base train set
  const auto result = pcb::run_training(ds, RecurrentHead(hc), lc, tc);
  CHECK(result.epochs.size() == 1);
}

TEST_CASE("divergence aborts with a diagnostic") {
  const auto ds = tiny_dataset();
  const HeadConfig hc = tiny_head(ds);
  TrainConfig tc = tiny_train(2);
  tc.lr = 1e6;  // guaranteed blow-up
  LossConfig lc;
  lc.variant = LossVariant::kCe;
  CHECK_THROWS_AS(pcb::run_training(ds, RecurrentHead(hc), lc, tc),
                  std::runtime_error);
}

TEST_CASE("train config round trip") {
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.sampler = SamplerKind::kRepeatFactor;
  cfg.rf_threshold = 0.125;
  cfg.decoupled = true;
  cfg.seed = 99;
  const auto path =
      (std::filesystem::temp_directory_path() / "pcb_traincfg.json").string();
  pcb::save_train_config(cfg, path);
  const auto back = pcb::load_train_config(path);
  CHECK(back.epochs == 12);
  CHECK(back.sampler == SamplerKind::kRepeatFactor);
  CHECK(back.rf_threshold == 0.125);
  CHECK(back.decoupled);
  CHECK(back.seed == 99);
  std::filesystem::remove(path);
}
