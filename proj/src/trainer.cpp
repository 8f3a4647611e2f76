#include "pcb/trainer.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "pcb/numio.hpp"
#include "pcb/rng.hpp"

namespace pcb {

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw std::out_of_range("lr_at: epoch outside [0, epochs)");
  }
  double lr = cfg.lr;
  if (cfg.warmup_epochs > 0 && epoch < cfg.warmup_epochs) {
    lr = cfg.lr * static_cast<double>(epoch + 1) /
         static_cast<double>(cfg.warmup_epochs);
  }
  for (int d : cfg.decay_epochs) {
    if (epoch >= d) lr *= cfg.decay_factor;
  }
  return lr;
}

std::vector<double> repeat_factors(const std::vector<std::int64_t>& class_counts,
                                   double t) {
  if (!(t > 0.0 && t <= 1.0)) {
    throw std::invalid_argument("repeat_factors: threshold outside (0, 1]");
  }
  std::int64_t total = 0;
  for (auto c : class_counts) {
    if (c <= 0) throw std::invalid_argument("repeat_factors: zero-count class");
    total += c;
  }
  std::vector<double> r(class_counts.size());
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    const double freq =
        static_cast<double>(class_counts[c]) / static_cast<double>(total);
    r[c] = std::max(1.0, std::sqrt(t / freq));
  }
  return r;
}

void SgdOptimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grads,
                        double lr, std::size_t frozen_prefix) {
  if (params.size() != velocity_.size() || grads.size() != velocity_.size()) {
    throw std::invalid_argument("sgd: size mismatch");
  }
  if (!grads.allFinite()) {
    throw std::runtime_error("sgd: non-finite gradient");
  }
  const Eigen::Index n = params.size();
  for (Eigen::Index i = static_cast<Eigen::Index>(frozen_prefix); i < n; ++i) {
    velocity_[i] = momentum_ * velocity_[i] + grads[i] + weight_decay_ * params[i];
    params[i] -= lr * velocity_[i];
  }
}

namespace {

void round_to_float32(Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = static_cast<double>(static_cast<float>(v[i]));
  }
}

}  // namespace

TrainResult run_training(const LongTailDataset& ds, RecurrentHead head,
                         const LossConfig& loss_cfg, const TrainConfig& cfg) {
  const int num_classes = ds.num_classes();
  if (head.config().num_classes != num_classes) {
    throw std::invalid_argument("run_training: class count mismatch");
  }
  if (head.config().has_background &&
      (loss_cfg.variant == LossVariant::kBcePcb ||
       loss_cfg.variant == LossVariant::kSeesawPcb)) {
    throw std::invalid_argument(
        "run_training: binary/seesaw forms expect a foreground-only head");
  }
  if (cfg.epochs < 1 || cfg.batch_size < 1) {
    throw std::invalid_argument("run_training: epochs and batch_size must be >= 1");
  }
  for (std::size_t i = 1; i < cfg.decay_epochs.size(); ++i) {
    if (cfg.decay_epochs[i] <= cfg.decay_epochs[i - 1]) {
      throw std::invalid_argument("run_training: decay epochs must increase");
    }
  }
  if (!cfg.decay_epochs.empty() && cfg.decay_epochs.back() >= cfg.epochs) {
    throw std::invalid_argument("run_training: decay epoch beyond schedule");
  }

  const auto train_idx = ds.indices_of(Partition::kTrain);
  if (train_idx.empty()) {
    throw std::invalid_argument("run_training: empty train partition");
  }

  Rng rng(cfg.seed);
  ConfusionMatrix cm =
      ConfusionMatrix::ema_identity(num_classes, cfg.gamma);
  SgdOptimizer opt(static_cast<Eigen::Index>(head.param_count()),
                   cfg.momentum, cfg.weight_decay);
  if (cfg.fp32_params) round_to_float32(head.params());

  std::vector<double> factors;
  if (cfg.sampler == SamplerKind::kRepeatFactor) {
    factors = repeat_factors(ds.class_counts, cfg.rf_threshold);
  }

  TrainResult result{std::move(head), cm, {}};
  Eigen::VectorXd grad(static_cast<Eigen::Index>(result.head.param_count()));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_epoch = lr_at(epoch, cfg);
    const bool pcb_active = epoch >= cfg.pcb_start_epoch;
    const std::size_t frozen =
        cfg.decoupled && pcb_active ? result.head.backbone_param_count() : 0;
    LossConfig cur = loss_cfg;
    if (!pcb_active) cur.alpha = 0.0;

    // Epoch composition.
    std::vector<std::int64_t> order;
    if (cfg.sampler == SamplerKind::kRandom) {
      order = train_idx;
    } else {
      for (auto i : train_idx) {
        const double r = factors[static_cast<std::size_t>(
            ds.labels[static_cast<std::size_t>(i)])];
        auto k = static_cast<std::int64_t>(std::floor(r));
        if (rng.uniform01() < r - std::floor(r)) ++k;
        for (std::int64_t rep = 0; rep < k; ++rep) order.push_back(i);
      }
    }
    rng.shuffle(order);

    const std::size_t iters =
        (order.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
        static_cast<std::size_t>(cfg.batch_size);
    double loss_sum = 0.0;
    std::size_t loss_n = 0;

    for (std::size_t it = 0; it < iters; ++it) {
      const std::size_t begin = it * static_cast<std::size_t>(cfg.batch_size);
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const auto n = static_cast<Eigen::Index>(end - begin);

      double lr_iter = lr_epoch;
      if (cfg.warmup_per_iteration && cfg.warmup_epochs > 0 &&
          epoch < cfg.warmup_epochs) {
        const double done =
            (static_cast<double>(epoch) +
             static_cast<double>(it + 1) / static_cast<double>(iters)) /
            static_cast<double>(cfg.warmup_epochs);
        lr_iter = cfg.lr * done;
      }

      grad.setZero();
      Eigen::MatrixXd batch_probs(n, num_classes);
      std::vector<int> batch_labels(static_cast<std::size_t>(n));
      double batch_loss = 0.0;
      for (Eigen::Index b = 0; b < n; ++b) {
        const auto i = order[begin + static_cast<std::size_t>(b)];
        const int y = ds.labels[static_cast<std::size_t>(i)];
        const ForwardTrace trace =
            result.head.forward(ds.features.row(i).transpose());
        batch_loss += result.head.loss_and_grads(trace, y, result.cm, cur, grad);
        const Eigen::VectorXd& stat_logits =
            cfg.ema_from_first_step ? trace.logits.front()
                                    : trace.logits.back();
        batch_probs.row(b) =
            fg_renormalize(stat_logits, result.head.config().has_background)
                .transpose();
        batch_labels[static_cast<std::size_t>(b)] = y;
      }
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("run_training: divergence at epoch " +
                                 std::to_string(epoch) + " iteration " +
                                 std::to_string(it));
      }
      grad /= static_cast<double>(n);
      opt.step(result.head.params(), grad, lr_iter, frozen);
      if (cfg.fp32_params) round_to_float32(result.head.params());
      // Statistics fold in strictly after the update so the next iteration
      // is the first to see them.
      ema_update(result.cm, batch_probs, batch_labels);
      loss_sum += batch_loss;
      loss_n += static_cast<std::size_t>(n);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr_epoch;
    stats.mean_loss = loss_sum / static_cast<double>(loss_n);
    stats.val = evaluate(result.head, ds, Partition::kVal);
    result.epochs.push_back(std::move(stats));
  }
  return result;
}

std::string epoch_csv_header() {
  return "epoch,lr,loss,acc_overall,acc_rare,acc_common,acc_frequent,pwb";
}

std::string epoch_csv_row(const EpochStats& e) {
  std::string row = std::to_string(e.epoch);
  row += "," + fmt_sci(e.lr);
  row += "," + fmt_metric(e.mean_loss);
  row += "," + fmt_metric(e.val.acc_overall);
  row += "," + fmt_metric(e.val.acc_rare);
  row += "," + fmt_metric(e.val.acc_common);
  row += "," + fmt_metric(e.val.acc_frequent);
  row += "," + fmt_metric(e.val.pwb);
  return row;
}

void save_train_config(const TrainConfig& cfg, const std::string& path) {
  nlohmann::json j;
  j["format"] = "pcblab.traincfg.v1";
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["warmup_epochs"] = cfg.warmup_epochs;
  j["decay_epochs"] = cfg.decay_epochs;
  j["decay_factor"] = cfg.decay_factor;
  j["sampler"] = cfg.sampler == SamplerKind::kRandom ? "random" : "repeat_factor";
  j["rf_threshold"] = cfg.rf_threshold;
  j["pcb_start_epoch"] = cfg.pcb_start_epoch;
  j["decoupled"] = cfg.decoupled;
  j["gamma"] = cfg.gamma;
  j["ema_from_first_step"] = cfg.ema_from_first_step;
  j["seed"] = cfg.seed;
  j["warmup_per_iteration"] = cfg.warmup_per_iteration;
  j["fp32_params"] = cfg.fp32_params;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "pcblab.traincfg.v1") {
    throw std::runtime_error(path + ": not a train config");
  }
  TrainConfig cfg;
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.lr = j.at("lr").get<double>();
  cfg.momentum = j.at("momentum").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.warmup_epochs = j.at("warmup_epochs").get<int>();
  cfg.decay_epochs = j.at("decay_epochs").get<std::vector<int>>();
  cfg.decay_factor = j.at("decay_factor").get<double>();
  cfg.sampler = j.at("sampler").get<std::string>() == "repeat_factor"
                    ? SamplerKind::kRepeatFactor
                    : SamplerKind::kRandom;
  cfg.rf_threshold = j.at("rf_threshold").get<double>();
  cfg.pcb_start_epoch = j.at("pcb_start_epoch").get<int>();
  cfg.decoupled = j.at("decoupled").get<bool>();
  cfg.gamma = j.at("gamma").get<double>();
  cfg.ema_from_first_step = j.at("ema_from_first_step").get<bool>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.warmup_per_iteration = j.at("warmup_per_iteration").get<bool>();
  cfg.fp32_params = j.at("fp32_params").get<bool>();
  return cfg;
}

}  // namespace pcb
