#include "pcb/head.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "pcb/rng.hpp"

namespace pcb {

namespace {

constexpr double kLnEps = 1e-5;

Eigen::VectorXd relu(const Eigen::VectorXd& v) {
  return v.cwiseMax(0.0);
}

}  // namespace

std::vector<double> default_step_weights(int steps) {
  switch (steps) {
    case 1: return {1.0};
    case 2: return {0.4, 0.6};
    case 3: return {0.2, 0.2, 0.6};
    default:
      return std::vector<double>(static_cast<std::size_t>(steps),
                                 1.0 / static_cast<double>(steps));
  }
}

double alpha_schedule(int r, int steps, double alpha) {
  if (r < 1 || r > steps) {
    throw std::out_of_range("alpha_schedule: step index outside [1, R]");
  }
  if (steps == 1) return alpha;
  return static_cast<double>(r - 1) / static_cast<double>(steps - 1) * alpha;
}

RecurrentHead::RecurrentHead(const HeadConfig& cfg) : cfg_(cfg) {
  if (cfg_.steps < 1) throw std::invalid_argument("head: steps must be >= 1");
  if (cfg_.input_dim < 1 || cfg_.backbone_hidden < 1 ||
      cfg_.feature_dim < 1 || cfg_.num_classes < 2 || cfg_.proj_hidden < 1) {
    throw std::invalid_argument("head: dimensions must be positive, C >= 2");
  }
  if (cfg_.step_weights.empty()) {
    cfg_.step_weights = default_step_weights(cfg_.steps);
  }
  if (static_cast<int>(cfg_.step_weights.size()) != cfg_.steps) {
    throw std::invalid_argument("head: step weight count != steps");
  }
  double wsum = 0.0;
  for (double w : cfg_.step_weights) {
    if (w <= 0.0) throw std::invalid_argument("head: step weights must be positive");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) {
    throw std::invalid_argument("head: step weights must sum to 1");
  }
  compute_layout();
  init_params();
}

void RecurrentHead::compute_layout() {
  const int in = cfg_.input_dim, hid = cfg_.backbone_hidden,
            feat = cfg_.feature_dim, out = cfg_.out_dim(),
            proj = cfg_.proj_hidden;
  std::size_t off = 0;
  o_w1_ = off; off += static_cast<std::size_t>(hid) * in;
  o_b1_ = off; off += static_cast<std::size_t>(hid);
  o_w2_ = off; off += static_cast<std::size_t>(feat) * hid;
  o_b2_ = off; off += static_cast<std::size_t>(feat);
  o_wc_ = off; off += static_cast<std::size_t>(out) * feat;
  o_bc_ = off; off += static_cast<std::size_t>(out);
  o_v1_ = off; off += static_cast<std::size_t>(proj) * out;
  o_d1_ = off; off += static_cast<std::size_t>(proj);
  o_v2_ = off; off += static_cast<std::size_t>(feat) * proj;
  o_d2_ = off; off += static_cast<std::size_t>(feat);
  if (cfg_.layernorm_logits) {
    o_lng_ = off; off += static_cast<std::size_t>(out);
    o_lnb_ = off; off += static_cast<std::size_t>(out);
  } else {
    o_lng_ = o_lnb_ = off;
  }
  total_ = off;
}

void RecurrentHead::init_params() {
  theta_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total_));
  Rng rng(cfg_.init_seed);
  auto fill_he = [&](std::size_t off, int rows, int cols) {
    const double scale = std::sqrt(2.0 / static_cast<double>(cols));
    auto w = view(theta_, off, rows, cols);
    for (int c = 0; c < cols; ++c) {
      for (int r = 0; r < rows; ++r) w(r, c) = scale * rng.normal();
    }
  };
  fill_he(o_w1_, cfg_.backbone_hidden, cfg_.input_dim);
  fill_he(o_w2_, cfg_.feature_dim, cfg_.backbone_hidden);
  fill_he(o_wc_, cfg_.out_dim(), cfg_.feature_dim);
  fill_he(o_v1_, cfg_.proj_hidden, cfg_.out_dim());
  // The projection output layer starts at zero so refinement is a no-op at
  // initialization and the first step matches a plain classifier.
  if (cfg_.layernorm_logits) {
    vview(theta_, o_lng_, cfg_.out_dim()).setOnes();
  }
}

ForwardTrace RecurrentHead::forward(const Eigen::VectorXd& x) const {
  if (x.size() != cfg_.input_dim) {
    throw std::invalid_argument("head forward: input dimension mismatch");
  }
  if (!x.allFinite()) {
    throw std::invalid_argument("head forward: non-finite input");
  }
  const auto w1 = view(theta_, o_w1_, cfg_.backbone_hidden, cfg_.input_dim);
  const auto b1 = vview(theta_, o_b1_, cfg_.backbone_hidden);
  const auto w2 = view(theta_, o_w2_, cfg_.feature_dim, cfg_.backbone_hidden);
  const auto b2 = vview(theta_, o_b2_, cfg_.feature_dim);
  const auto wc = view(theta_, o_wc_, cfg_.out_dim(), cfg_.feature_dim);
  const auto bc = vview(theta_, o_bc_, cfg_.out_dim());
  const auto v1 = view(theta_, o_v1_, cfg_.proj_hidden, cfg_.out_dim());
  const auto d1 = vview(theta_, o_d1_, cfg_.proj_hidden);
  const auto v2 = view(theta_, o_v2_, cfg_.feature_dim, cfg_.proj_hidden);
  const auto d2 = vview(theta_, o_d2_, cfg_.feature_dim);

  ForwardTrace t;
  t.input = x;
  t.hidden_pre = w1 * x + b1;
  t.hidden = relu(t.hidden_pre);
  t.features.reserve(static_cast<std::size_t>(cfg_.steps));
  t.logits.reserve(static_cast<std::size_t>(cfg_.steps));
  t.features.push_back(w2 * t.hidden + b2);

  for (int r = 0; r < cfg_.steps; ++r) {
    t.logits.push_back(wc * t.features.back() + bc);
    if (r + 1 == cfg_.steps) break;
    const Eigen::VectorXd& z = t.logits.back();
    Eigen::VectorXd u;
    if (cfg_.layernorm_logits) {
      const auto gain = vview(theta_, o_lng_, cfg_.out_dim());
      const auto bias = vview(theta_, o_lnb_, cfg_.out_dim());
      const double mean = z.mean();
      const double var =
          (z.array() - mean).square().sum() / static_cast<double>(z.size());
      const double istd = 1.0 / std::sqrt(var + kLnEps);
      u = (gain.array() * ((z.array() - mean) * istd) + bias.array()).matrix();
      t.ln_mean.push_back(mean);
      t.ln_istd.push_back(istd);
    } else {
      u = z;
    }
    t.proj_in.push_back(u);
    t.proj_pre.push_back(v1 * u + d1);
    t.proj_hidden.push_back(relu(t.proj_pre.back()));
    t.features.push_back(t.features.back() + (v2 * t.proj_hidden.back() + d2));
  }
  return t;
}

double RecurrentHead::loss_and_grads(const ForwardTrace& trace, int y,
                                     const ConfusionMatrix& cm,
                                     const LossConfig& config,
                                     Eigen::VectorXd& grad) const {
  const int steps = cfg_.steps;
  if (static_cast<int>(trace.logits.size()) != steps) {
    throw std::invalid_argument("loss_and_grads: trace step count mismatch");
  }
  if (grad.size() != theta_.size()) {
    throw std::invalid_argument("loss_and_grads: gradient buffer size mismatch");
  }

  const auto w1 = view(theta_, o_w1_, cfg_.backbone_hidden, cfg_.input_dim);
  const auto w2 = view(theta_, o_w2_, cfg_.feature_dim, cfg_.backbone_hidden);
  const auto wc = view(theta_, o_wc_, cfg_.out_dim(), cfg_.feature_dim);
  const auto v1 = view(theta_, o_v1_, cfg_.proj_hidden, cfg_.out_dim());
  const auto v2 = view(theta_, o_v2_, cfg_.feature_dim, cfg_.proj_hidden);
  (void)w1;

  auto g_w1 = view(grad, o_w1_, cfg_.backbone_hidden, cfg_.input_dim);
  auto g_b1 = vview(grad, o_b1_, cfg_.backbone_hidden);
  auto g_w2 = view(grad, o_w2_, cfg_.feature_dim, cfg_.backbone_hidden);
  auto g_b2 = vview(grad, o_b2_, cfg_.feature_dim);
  auto g_wc = view(grad, o_wc_, cfg_.out_dim(), cfg_.feature_dim);
  auto g_bc = vview(grad, o_bc_, cfg_.out_dim());
  auto g_v1 = view(grad, o_v1_, cfg_.proj_hidden, cfg_.out_dim());
  auto g_d1 = vview(grad, o_d1_, cfg_.proj_hidden);
  auto g_v2 = view(grad, o_v2_, cfg_.feature_dim, cfg_.proj_hidden);
  auto g_d2 = vview(grad, o_d2_, cfg_.feature_dim);

  // Direct per-step loss gradients.
  double total = 0.0;
  std::vector<Eigen::VectorXd> gz_direct(static_cast<std::size_t>(steps));
  for (int r = 0; r < steps; ++r) {
    const double a = alpha_schedule(r + 1, steps, config.alpha);
    const LossValue lv = evaluate_loss(trace.logits[static_cast<std::size_t>(r)],
                                       y, cm, config, a, cfg_.has_background);
    const double w = cfg_.step_weights[static_cast<std::size_t>(r)];
    total += w * lv.value;
    gz_direct[static_cast<std::size_t>(r)] = w * lv.dlogits;
  }

  // Backward through the recurrence.
  Eigen::VectorXd g_x_next;  // dL/dX^{r+1}
  for (int r = steps - 1; r >= 0; --r) {
    const std::size_t ri = static_cast<std::size_t>(r);
    Eigen::VectorXd gz = gz_direct[ri];
    if (r + 1 < steps) {
      // X^{r+1} = X^r + V2 relu(V1 u + d1) + d2
      g_v2 += g_x_next * trace.proj_hidden[ri].transpose();
      g_d2 += g_x_next;
      Eigen::VectorXd gg = v2.transpose() * g_x_next;
      for (Eigen::Index i = 0; i < gg.size(); ++i) {
        if (trace.proj_pre[ri][i] <= 0.0) gg[i] = 0.0;
      }
      g_v1 += gg * trace.proj_in[ri].transpose();
      g_d1 += gg;
      Eigen::VectorXd gu = v1.transpose() * gg;
      if (cfg_.layernorm_logits) {
        const auto gain = vview(theta_, o_lng_, cfg_.out_dim());
        auto g_gain = vview(grad, o_lng_, cfg_.out_dim());
        auto g_bias = vview(grad, o_lnb_, cfg_.out_dim());
        const Eigen::VectorXd& z = trace.logits[ri];
        const double mean = trace.ln_mean[ri];
        const double istd = trace.ln_istd[ri];
        const Eigen::VectorXd xhat = (z.array() - mean) * istd;
        g_gain += gu.cwiseProduct(xhat);
        g_bias += gu;
        if (!cfg_.detach_refinement) {
          const Eigen::VectorXd dxhat = gu.cwiseProduct(gain);
          const double n = static_cast<double>(z.size());
          const double m1 = dxhat.sum() / n;
          const double m2 = dxhat.cwiseProduct(xhat).sum() / n;
          gz += (istd * (dxhat.array() - m1 - xhat.array() * m2)).matrix();
        }
      } else if (!cfg_.detach_refinement) {
        gz += gu;
      }
    }
    g_wc += gz * trace.features[ri].transpose();
    g_bc += gz;
    Eigen::VectorXd g_x = wc.transpose() * gz;
    if (r + 1 < steps) g_x += g_x_next;
    g_x_next = std::move(g_x);
  }

  // Backbone.
  g_w2 += g_x_next * trace.hidden.transpose();
  g_b2 += g_x_next;
  Eigen::VectorXd gh = w2.transpose() * g_x_next;
  for (Eigen::Index i = 0; i < gh.size(); ++i) {
    if (trace.hidden_pre[i] <= 0.0) gh[i] = 0.0;
  }
  g_w1 += gh * trace.input.transpose();
  g_b1 += gh;
  return total;
}

Eigen::VectorXd RecurrentHead::predict(const Eigen::VectorXd& x) const {
  const ForwardTrace t = forward(x);
  return fg_renormalize(t.logits.back(), cfg_.has_background);
}

std::vector<Eigen::VectorXd> RecurrentHead::predict_steps(
    const Eigen::VectorXd& x) const {
  const ForwardTrace t = forward(x);
  std::vector<Eigen::VectorXd> out;
  out.reserve(t.logits.size());
  for (const auto& z : t.logits) {
    out.push_back(fg_renormalize(z, cfg_.has_background));
  }
  return out;
}

void RecurrentHead::save(const std::string& path,
                         const std::string& config_hash) const {
  nlohmann::json j;
  j["format"] = "pcblab.head.v1";
  nlohmann::json c;
  c["input_dim"] = cfg_.input_dim;
  c["backbone_hidden"] = cfg_.backbone_hidden;
  c["feature_dim"] = cfg_.feature_dim;
  c["num_classes"] = cfg_.num_classes;
  c["has_background"] = cfg_.has_background;
  c["proj_hidden"] = cfg_.proj_hidden;
  c["steps"] = cfg_.steps;
  c["step_weights"] = cfg_.step_weights;
  c["layernorm_logits"] = cfg_.layernorm_logits;
  c["detach_refinement"] = cfg_.detach_refinement;
  c["init_seed"] = cfg_.init_seed;
  j["config"] = c;
  j["config_hash"] = config_hash;
  j["param_count"] = static_cast<std::int64_t>(theta_.size());
  j["params"] =
      std::vector<double>(theta_.data(), theta_.data() + theta_.size());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump() << "\n";
}

RecurrentHead RecurrentHead::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "pcblab.head.v1") {
    throw std::runtime_error(path + ": not a head checkpoint");
  }
  const auto& c = j.at("config");
  HeadConfig cfg;
  cfg.input_dim = c.at("input_dim").get<int>();
  cfg.backbone_hidden = c.at("backbone_hidden").get<int>();
  cfg.feature_dim = c.at("feature_dim").get<int>();
  cfg.num_classes = c.at("num_classes").get<int>();
  cfg.has_background = c.at("has_background").get<bool>();
  cfg.proj_hidden = c.at("proj_hidden").get<int>();
  cfg.steps = c.at("steps").get<int>();
  cfg.step_weights = c.at("step_weights").get<std::vector<double>>();
  cfg.layernorm_logits = c.at("layernorm_logits").get<bool>();
  cfg.detach_refinement = c.at("detach_refinement").get<bool>();
  cfg.init_seed = c.at("init_seed").get<std::uint64_t>();
  RecurrentHead head(cfg);
  const auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != head.param_count()) {
    throw std::runtime_error(path + ": parameter count mismatch");
  }
  head.theta_ = Eigen::Map<const Eigen::VectorXd>(
      params.data(), static_cast<Eigen::Index>(params.size()));
  return head;
}

}  // namespace pcb
