#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "pcb/confmat.hpp"
#include "pcb/loss.hpp"

namespace pcb {

struct HeadConfig {
  int input_dim = 2;
  int backbone_hidden = 64;
  int feature_dim = 32;
  int num_classes = 2;
  bool has_background = false;
  int proj_hidden = 256;   // hidden width of the logit-projection MLP
  int steps = 3;           // recurrent step count R
  std::vector<double> step_weights;  // empty selects the default for R
  bool layernorm_logits = false;     // LayerNorm on z before the projection
  bool detach_refinement = false;    // cut gradients at the projection input
  std::uint64_t init_seed = 1;

  int out_dim() const { return num_classes + (has_background ? 1 : 0); }
};

// Last-step-dominant defaults: {0.2, 0.2, 0.6} for R=3, {0.4, 0.6} for R=2,
// uniform otherwise.
std::vector<double> default_step_weights(int steps);

// Linear ramp (r-1)/(R-1) * alpha across steps; a single step carries the
// full alpha.
double alpha_schedule(int r, int steps, double alpha);

// Everything the backward pass needs, captured during forward.
struct ForwardTrace {
  Eigen::VectorXd input;
  Eigen::VectorXd hidden_pre, hidden;      // backbone cache
  std::vector<Eigen::VectorXd> features;   // X^1..X^R
  std::vector<Eigen::VectorXd> logits;     // z^1..z^R
  // refinement caches, one per step below the last
  std::vector<Eigen::VectorXd> proj_in;    // z after optional LayerNorm
  std::vector<double> ln_mean, ln_istd;
  std::vector<Eigen::VectorXd> proj_pre, proj_hidden;
};

// Shared prediction head applied R times: the backbone embeds the input
// once, then each step classifies the current feature and (below the last
// step) projects its logits back into feature space as an additive
// refinement. Parameters live in one flat vector so the optimizer,
// checkpointing and gradient checking all see a single dense array.
class RecurrentHead {
  template <typename Vec>
  auto view(Vec& v, std::size_t off, int rows, int cols) const {
    return Eigen::Map<std::conditional_t<std::is_const_v<Vec>,
                                         const Eigen::MatrixXd,
                                         Eigen::MatrixXd>>(
        v.data() + off, rows, cols);
  }
  template <typename Vec>
  auto vview(Vec& v, std::size_t off, int n) const {
    return Eigen::Map<std::conditional_t<std::is_const_v<Vec>,
                                         const Eigen::VectorXd,
                                         Eigen::VectorXd>>(v.data() + off, n);
  }

 public:
  explicit RecurrentHead(const HeadConfig& cfg);

  const HeadConfig& config() const { return cfg_; }
  Eigen::VectorXd& params() { return theta_; }
  const Eigen::VectorXd& params() const { return theta_; }
  std::size_t param_count() const { return static_cast<std::size_t>(theta_.size()); }
  // Backbone parameters occupy a prefix of the vector; decoupled training
  // freezes exactly this range.
  std::size_t backbone_param_count() const { return o_wc_; }

  ForwardTrace forward(const Eigen::VectorXd& x) const;

  // Step-weighted total loss over the trace; exact parameter gradients are
  // accumulated into `grad` (same length as params()). By default gradients
  // flow through the refinement projections back into earlier logits.
  double loss_and_grads(const ForwardTrace& trace, int y,
                        const ConfusionMatrix& cm, const LossConfig& config,
                        Eigen::VectorXd& grad) const;

  // Foreground probabilities of the last step.
  Eigen::VectorXd predict(const Eigen::VectorXd& x) const;
  // Per-step foreground probabilities.
  std::vector<Eigen::VectorXd> predict_steps(const Eigen::VectorXd& x) const;

  void save(const std::string& path, const std::string& config_hash = "") const;
  static RecurrentHead load(const std::string& path);

  // Named views into the flat parameter vector. w1/b1, w2/b2 form the
  // backbone, wc/bc the classification layer, v1/d1, v2/d2 the logit
  // projection.
  Eigen::Map<Eigen::MatrixXd> w1() { return view(theta_, o_w1_, cfg_.backbone_hidden, cfg_.input_dim); }
  Eigen::Map<Eigen::VectorXd> b1() { return vview(theta_, o_b1_, cfg_.backbone_hidden); }
  Eigen::Map<Eigen::MatrixXd> w2() { return view(theta_, o_w2_, cfg_.feature_dim, cfg_.backbone_hidden); }
  Eigen::Map<Eigen::VectorXd> b2() { return vview(theta_, o_b2_, cfg_.feature_dim); }
  Eigen::Map<Eigen::MatrixXd> wc() { return view(theta_, o_wc_, cfg_.out_dim(), cfg_.feature_dim); }
  Eigen::Map<Eigen::VectorXd> bc() { return vview(theta_, o_bc_, cfg_.out_dim()); }
  Eigen::Map<Eigen::MatrixXd> v1() { return view(theta_, o_v1_, cfg_.proj_hidden, cfg_.out_dim()); }
  Eigen::Map<Eigen::VectorXd> d1() { return vview(theta_, o_d1_, cfg_.proj_hidden); }
  Eigen::Map<Eigen::MatrixXd> v2() { return view(theta_, o_v2_, cfg_.feature_dim, cfg_.proj_hidden); }
  Eigen::Map<Eigen::VectorXd> d2() { return vview(theta_, o_d2_, cfg_.feature_dim); }
  Eigen::Map<const Eigen::MatrixXd> w1() const { return view(theta_, o_w1_, cfg_.backbone_hidden, cfg_.input_dim); }
  Eigen::Map<const Eigen::VectorXd> b1() const { return vview(theta_, o_b1_, cfg_.backbone_hidden); }
  Eigen::Map<const Eigen::MatrixXd> w2() const { return view(theta_, o_w2_, cfg_.feature_dim, cfg_.backbone_hidden); }
  Eigen::Map<const Eigen::VectorXd> b2() const { return vview(theta_, o_b2_, cfg_.feature_dim); }
  Eigen::Map<const Eigen::MatrixXd> wc() const { return view(theta_, o_wc_, cfg_.out_dim(), cfg_.feature_dim); }
  Eigen::Map<const Eigen::VectorXd> bc() const { return vview(theta_, o_bc_, cfg_.out_dim()); }
  // Gradient segments for the classification layer, given a buffer laid out
  // like params().
  Eigen::Map<const Eigen::MatrixXd> wc_of(const Eigen::VectorXd& buf) const {
    return view(buf, o_wc_, cfg_.out_dim(), cfg_.feature_dim);
  }
  Eigen::Map<const Eigen::VectorXd> bc_of(const Eigen::VectorXd& buf) const {
    return vview(buf, o_bc_, cfg_.out_dim());
  }
  Eigen::Map<const Eigen::MatrixXd> v2_of(const Eigen::VectorXd& buf) const {
    return view(buf, o_v2_, cfg_.feature_dim, cfg_.proj_hidden);
  }

 private:
  void init_params();
  void compute_layout();

  HeadConfig cfg_;
  Eigen::VectorXd theta_;
  std::size_t o_w1_ = 0, o_b1_ = 0, o_w2_ = 0, o_b2_ = 0;
  std::size_t o_wc_ = 0, o_bc_ = 0, o_v1_ = 0, o_d1_ = 0, o_v2_ = 0,
              o_d2_ = 0, o_lng_ = 0, o_lnb_ = 0, total_ = 0;
};

}  // namespace pcb
