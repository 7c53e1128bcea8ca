#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "deqmd/poisson.hpp"
#include "deqmd/regularizers.hpp"
#include "deqmd/solvers.hpp"

namespace deqmd {

struct LossResult {
  double value = 0.0;
  Image cotangent;  // d loss / d x_inf
};

/// ||x_inf - x*||^2 + lambda TV_eps(x_inf).
LossResult supervised_loss(const Image& x_inf, const Image& x_star, double lambda, double tv_eps = kTvEpsilon);

/// One DEQ-MD layer application f(x) = clamp(x / (1 + tau x (grad KL + grad R)), eps, a)
/// recorded on the tape; differentiable in x and in theta. Counts "layer".
ad::Var record_layer(ad::Tape& tape, const Objective& obj, const ad::Var& x, const std::vector<ad::Var>& theta,
                     double tau, double eps = kPositivityFloor);

struct JfbResult {
  ParamVector grad;
  bool not_converged = false;  // fixed-point residual above 10 tol
  double residual = 0.0;
  int layer_applications = 0;
};

/// Jacobian-free gradient: (d f(x_inf) / d theta)^T cotangent with x_inf held fixed.
JfbResult jfb_gradient(const Objective& obj, const Image& x_inf, double tau, const Image& cotangent,
                       double tol = 2.5e-5, double eps = kPositivityFloor);

struct AdamState {
  Eigen::ArrayXd m;
  Eigen::ArrayXd v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(Eigen::Index n) { return {Eigen::ArrayXd::Zero(n), Eigen::ArrayXd::Zero(n)}; }
};

/// Bias-corrected ADAM update of theta in place.
void adam_step(AdamState& state, ParamVector& theta, const ParamVector& grad, double lr);

/// Rescales grad to at most max_norm; returns the norm before clipping.
double clip_global_norm(ParamVector& grad, double max_norm);

struct TrainConfig {
  int epochs = 50;
  double lr = 5e-4;
  int lr_halve_after = 25;  // epochs
  double loss_tv_lambda = 1e-3;
  double clip_norm = 1.0;
  MdConfig md;                                 // forward solver used during training
  std::filesystem::path checkpoint_dir;        // empty: no checkpoints
  int checkpoint_every = 0;                    // epochs; 0 disables
  bool verbose = false;
  bool log_initial = true;                     // row 0: initial theta before any update

  void validate() const;
};

struct TrainLogRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_psnr = 0.0;
  double mean_fp_iters = 0.0;
  double seconds = 0.0;
  int not_converged = 0;  // samples whose JFB point missed the residual check
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  /// epoch, train_loss, val_psnr, mean_fp_iters, seconds. With
  /// include_time = false the seconds column is omitted (byte-stable output).
  void write_csv(std::ostream& out, bool include_time = true) const;
};

struct TrainResult {
  ParamVector best;
  int best_epoch = 0;
  double best_val_psnr = 0.0;
  TrainLog log;
};

/// Solves the forward problem of one pair with adjoint initialization.
SolveReport deq_forward(const Regularizer& reg, const ObservationPair& pair, const ConvolutionOperator& op,
                        const MdConfig& md, const SolveOptions& opt = {});

/// Mean PSNR of deq_forward reconstructions over a set.
double mean_psnr(const Regularizer& reg, const std::vector<ObservationPair>& set, const ConvolutionOperator& op,
                 const MdConfig& md);

/// Row 0 is the initial theta (val PSNR and loss on the training set with
/// no update), unless cfg.log_initial is off. Epochs 1..E do per-sample JFB + ADAM. The returned theta is
/// the row with the best validation PSNR (earliest on ties).
TrainResult train(const std::vector<ObservationPair>& dataset, const std::vector<ObservationPair>& val_set,
                  const Regularizer& init, const ConvolutionOperator& op, const TrainConfig& cfg);

struct PretrainConfig {
  double sigma = 0.1;
  int epochs = 20;
  double lr = 5e-4;
  double clip_norm = 1.0;
};

struct PretrainResult {
  ParamVector theta;
  std::vector<double> epoch_loss;  // mean ||D(x* + n) - x*||^2 per epoch
};

/// Fits the gradient-step denoiser D(x) = x - grad R(x) to Gaussian denoising.
PretrainResult pretrain_denoiser(const std::vector<Image>& clean_patches, const Regularizer& init,
                                 const PretrainConfig& cfg, Seed seed);

/// sqrt of the top eigenvalue of J^T J by power iteration, given J v and J^T w.
double power_iteration_norm(const std::function<Eigen::ArrayXd(const Eigen::ArrayXd&)>& jvp,
                            const std::function<Eigen::ArrayXd(const Eigen::ArrayXd&)>& vjp, Eigen::Index n,
                            int iterations, Seed seed);

/// ||d f / d x||_2 of one layer application at x_inf.
double estimate_layer_spectral_norm(const Objective& obj, const Image& x_inf, double tau, int iterations, Seed seed,
                                    double eps = kPositivityFloor);

}  // namespace deqmd
