#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "pcb/datagen.hpp"
#include "pcb/head.hpp"
#include "pcb/loss.hpp"
#include "pcb/report.hpp"

namespace pcb {

enum class SamplerKind { kRandom, kRepeatFactor };

struct TrainConfig {
  int epochs = 60;
  int batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int warmup_epochs = 0;
  std::vector<int> decay_epochs = {40, 50};
  double decay_factor = 0.1;
  SamplerKind sampler = SamplerKind::kRandom;
  double rf_threshold = 0.01;   // repeat-factor frequency threshold t
  int pcb_start_epoch = 40;     // regularizer activation epoch
  bool decoupled = false;       // freeze the backbone from pcb_start_epoch on
  double gamma = 0.99;          // EMA momentum of the confusion matrix
  // Which step's predictions feed the EMA statistics. The last step is the
  // evaluated one; the first step is trained purely by cross-entropy, so its
  // statistics stay free of the regularizer's own influence.
  bool ema_from_first_step = false;
  std::uint64_t seed = 0;
  bool warmup_per_iteration = false;
  bool fp32_params = false;     // store parameters at float32 precision
};

// Learning rate at an epoch: linear per-epoch warmup ramp to lr, then a step
// decay by decay_factor at each decay epoch.
double lr_at(int epoch, const TrainConfig& cfg);

// Per-class repeat factor max(1, sqrt(t / f_c)) with f_c the class frequency
// among train samples. Throws on a zero-count class.
std::vector<double> repeat_factors(const std::vector<std::int64_t>& class_counts,
                                   double t);

// SGD with momentum and coupled weight decay:
// v <- momentum * v + g + wd * p ; p <- p - lr * v.
// Entries below `frozen_prefix` are left untouched (velocity included).
class SgdOptimizer {
 public:
  SgdOptimizer(Eigen::Index n, double momentum, double weight_decay)
      : velocity_(Eigen::VectorXd::Zero(n)),
        momentum_(momentum),
        weight_decay_(weight_decay) {}

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, double lr,
            std::size_t frozen_prefix = 0);

  const Eigen::VectorXd& velocity() const { return velocity_; }

 private:
  Eigen::VectorXd velocity_;
  double momentum_;
  double weight_decay_;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  MetricsReport val;
};

struct TrainResult {
  RecurrentHead head;
  ConfusionMatrix cm;  // final EMA confusion matrix
  std::vector<EpochStats> epochs;
};

// Deterministic mini-batch SGD over the train partition. Each iteration
// runs one forward trace per sample, averages parameter gradients in sample
// order, applies the optimizer step, and only then folds the last step's
// foreground probabilities into the EMA confusion matrix, so the targets a
// batch trains against never include that batch's own statistics. The
// regularizer coefficient is forced to zero before pcb_start_epoch; in
// decoupled mode that epoch also freezes the backbone for the remaining
// fine-tune phase.
TrainResult run_training(const LongTailDataset& ds, RecurrentHead head,
                         const LossConfig& loss_cfg, const TrainConfig& cfg);

// Per-epoch log line: epoch, lr, loss, split accuracies, pairwise bias.
std::string epoch_csv_header();
std::string epoch_csv_row(const EpochStats& e);

void save_train_config(const TrainConfig& cfg, const std::string& path);
TrainConfig load_train_config(const std::string& path);

}  // namespace pcb
