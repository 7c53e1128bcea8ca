#include "deqmd/deq_train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <ostream>

#include "deqmd/metrics.hpp"

namespace deqmd {

LossResult supervised_loss(const Image& x_inf, const Image& x_star, double lambda, double tv_eps) {
  require_same_shape(x_inf, x_star, "supervised_loss");
  const Eigen::ArrayXd diff = x_inf.array() - x_star.array();
  LossResult out;
  out.value = diff.square().sum();
  out.cotangent = x_inf.with_data(2.0 * diff);
  if (lambda != 0.0) {
    out.value += lambda * tv_smoothed_value(x_inf, tv_eps);
    out.cotangent.array() += lambda * tv_smoothed_grad(x_inf, tv_eps).array();
  }
  return out;
}

ad::Var record_layer(ad::Tape& tape, const Objective& obj, const ad::Var& x, const std::vector<ad::Var>& theta,
                     double tau, double eps) {
  const auto& op = obj.fidelity().op();
  const ad::Var y = tape.constant(to_tensor(obj.fidelity().y()));
  const ad::Var ax = ad::apply_operator(x, op);
  const ad::Var g_kl = ad::apply_operator(ad::add_scalar(-(y / ax), 1.0), op, true);
  const ad::Var r = obj.regularizer().record(tape, x, theta);
  const ad::Var g_r = tape.gradient(r, std::span<const ad::Var>(&x, 1))[0];
  const ad::Var denom = ad::add_scalar(ad::scale(x * (g_kl + g_r), tau), 1.0);
  if ((denom.value().data <= 0.0).any()) throw StepInfeasible("record_layer: step size infeasible at x");
  tape.count("layer");
  return ad::clamp(x / denom, eps, obj.a());
}

JfbResult jfb_gradient(const Objective& obj, const Image& x_inf, double tau, const Image& cotangent, double tol,
                       double eps) {
  require_same_shape(x_inf, cotangent, "jfb_gradient");
  const Regularizer& reg = obj.regularizer();
  JfbResult out;
  ad::Tape tape;
  const auto theta = reg.learnable() ? reg.param_vars(tape, true) : std::vector<ad::Var>{};
  // x must be differentiable for grad_x R inside the layer; no gradient flows back to it.
  const ad::Var x = tape.variable(to_tensor(x_inf));
  const ad::Var fx = record_layer(tape, obj, x, theta, tau, eps);
  out.layer_applications = tape.counter("layer");
  out.residual = (fx.value().data - x.value().data).abs().maxCoeff() / x_inf.array().abs().maxCoeff();
  out.not_converged = !(out.residual < 10.0 * tol);
  if (!reg.learnable()) return out;
  out.grad = flatten(reg.params().layout, tape.gradient(fx, theta, tape.constant(to_tensor(cotangent))));
  return out;
}

void adam_step(AdamState& s, ParamVector& theta, const ParamVector& grad, double lr) {
  if (grad.size() != theta.size() || s.m.size() != theta.size() || s.v.size() != theta.size()) {
    throw ShapeError("adam_step: state, parameters and gradient differ in length");
  }
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad.values;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.values.square();
  const double c1 = 1.0 - std::pow(s.beta1, double(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, double(s.step));
  theta.values -= lr * (s.m / c1) / ((s.v / c2).sqrt() + s.eps);
}

double clip_global_norm(ParamVector& grad, double max_norm) {
  const double n = grad.values.matrix().norm();
  if (n > max_norm && n > 0.0) grad.values *= max_norm / n;
  return n;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (!(loss_tv_lambda >= 0.0)) throw ConfigError("train: loss_tv_lambda must be >= 0");
  if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be > 0");
  md.validate();
}

void TrainLog::write_csv(std::ostream& out, bool include_time) const {
  out << "epoch,train_loss,val_psnr,mean_fp_iters" << (include_time ? ",seconds" : "") << '\n';
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.train_loss << ',' << r.val_psnr << ',' << r.mean_fp_iters;
    if (include_time) out << ',' << r.seconds;
    out << '\n';
  }
}

SolveReport deq_forward(const Regularizer& reg, const ObservationPair& pair, const ConvolutionOperator& op,
                        const MdConfig& md, const SolveOptions& opt) {
  const Image y = normalized_measurement(pair);
  const Objective obj(KlFidelity(y, op), reg, md.a);
  InitSpec init;
  init.md = md;
  return solve_fixed_point(obj, initialize(init, y, op, pair.seed), md, opt);
}

double mean_psnr(const Regularizer& reg, const std::vector<ObservationPair>& set, const ConvolutionOperator& op,
                 const MdConfig& md) {
  if (set.empty()) throw ShapeError("mean_psnr: empty set");
  double total = 0.0;
  for (const auto& p : set) total += psnr(deq_forward(reg, p, op, md).x, p.clean);
  return total / double(set.size());
}

TrainResult train(const std::vector<ObservationPair>& dataset, const std::vector<ObservationPair>& val_set,
                  const Regularizer& init, const ConvolutionOperator& op, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw ShapeError("train: empty dataset");
  if (val_set.empty()) throw ShapeError("train: empty validation set");
  if (!init.learnable()) throw ConfigError("train: regularizer has no parameters");
  using clock = std::chrono::steady_clock;

  Regularizer reg = init;
  ParamVector theta = reg.params();
  AdamState adam = AdamState::zeros(theta.size());
  TrainResult result;

  const auto evaluate = [&](int epoch, double loss, double iters, double seconds, int nc) {
    TrainLogRow row{epoch, loss, mean_psnr(reg, val_set, op, cfg.md), iters, seconds, nc};
    result.log.rows.push_back(row);
    if (result.log.rows.size() == 1 || row.val_psnr > result.best_val_psnr) {
      result.best_val_psnr = row.val_psnr;
      result.best_epoch = epoch;
      result.best = theta;
    }
    if (cfg.verbose) {
      std::cerr << "epoch " << epoch << " loss " << loss << " val_psnr " << row.val_psnr << " iters " << iters
                << " (" << seconds << " s)\n";
    }
  };

  if (cfg.log_initial) {
    const auto t0 = clock::now();
    double loss = 0.0, iters = 0.0;
    for (const auto& p : dataset) {
      const SolveReport rep = deq_forward(reg, p, op, cfg.md);
      loss += supervised_loss(rep.x, p.clean, cfg.loss_tv_lambda).value;
      iters += rep.iterations();
    }
    const double n = double(dataset.size());
    evaluate(0, loss / n, iters / n, std::chrono::duration<double>(clock::now() - t0).count(), 0);
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = clock::now();
    const double lr = epoch > cfg.lr_halve_after ? 0.5 * cfg.lr : cfg.lr;
    double loss = 0.0, iters = 0.0;
    int done = 0, not_converged = 0;
    for (const auto& p : dataset) {
      try {
        const SolveReport rep = deq_forward(reg, p, op, cfg.md);
        const LossResult l = supervised_loss(rep.x, p.clean, cfg.loss_tv_lambda);
        const Objective obj(KlFidelity(normalized_measurement(p), op), reg, cfg.md.a);
        JfbResult g = jfb_gradient(obj, rep.x, rep.tau_final, l.cotangent, cfg.md.tol, cfg.md.eps);
        clip_global_norm(g.grad, cfg.clip_norm);
        adam_step(adam, theta, g.grad, lr);
        reg.set_params(theta);
        loss += l.value;
        iters += rep.iterations();
        not_converged += g.not_converged ? 1 : 0;
        ++done;
      } catch (const BacktrackFailure& e) {
        std::cerr << "train: epoch " << epoch << " aborted at sample " << done << ": " << e.what() << '\n';
        break;
      } catch (const StepInfeasible& e) {
        std::cerr << "train: epoch " << epoch << " aborted at sample " << done << ": " << e.what() << '\n';
        break;
      }
    }
    const double n = std::max(1, done);
    evaluate(epoch, loss / n, iters / n, std::chrono::duration<double>(clock::now() - t0).count(), not_converged);
    if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      save_params(theta, reg.arch(), cfg.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".deqp"));
    }
  }
  return result;
}

PretrainResult pretrain_denoiser(const std::vector<Image>& clean_patches, const Regularizer& init,
                                 const PretrainConfig& cfg, Seed seed) {
  if (init.kind() != RegularizerKind::red) throw ConfigError("pretrain_denoiser: needs a deq_red regularizer");
  if (clean_patches.empty()) throw ShapeError("pretrain_denoiser: no patches");
  if (!(cfg.sigma >= 0.0) || cfg.epochs < 1) throw ConfigError("pretrain_denoiser: invalid sigma or epochs");
  Regularizer reg = init;
  ParamVector theta = reg.params();
  AdamState adam = AdamState::zeros(theta.size());
  PretrainResult out;
  std::uint64_t draw = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double total = 0.0;
    for (const Image& clean : clean_patches) {
      Rng rng(derive(seed, draw++));
      Image noisy = clean;
      for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy.array()[i] += cfg.sigma * rng.normal();
      ad::Tape tape;
      const auto th = reg.param_vars(tape, true);
      const ad::Var x = tape.variable(to_tensor(noisy));
      const ad::Var r = reg.record(tape, x, th);
      const ad::Var g = tape.gradient(r, std::span<const ad::Var>(&x, 1))[0];
      const ad::Var diff = (x - g) - tape.constant(to_tensor(clean));
      const ad::Var loss = ad::sum(diff * diff);
      total += loss.value().item();
      ParamVector grad = flatten(theta.layout, tape.gradient(loss, th));
      clip_global_norm(grad, cfg.clip_norm);
      adam_step(adam, theta, grad, cfg.lr);
      reg.set_params(theta);
    }
    out.epoch_loss.push_back(total / double(clean_patches.size()));
  }
  out.theta = theta;
  return out;
}

double power_iteration_norm(const std::function<Eigen::ArrayXd(const Eigen::ArrayXd&)>& jvp,
                            const std::function<Eigen::ArrayXd(const Eigen::ArrayXd&)>& vjp, Eigen::Index n,
                            int iterations, Seed seed) {
  if (n < 1 || iterations < 1) throw DomainError("power_iteration_norm: need n >= 1 and iterations >= 1");
  Rng rng(seed);
  Eigen::ArrayXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  v /= v.matrix().norm();
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const Eigen::ArrayXd w = vjp(jvp(v));
    lambda = w.matrix().norm();
    if (lambda == 0.0) return 0.0;
    v = w / lambda;
  }
  return std::sqrt(lambda);
}

double estimate_layer_spectral_norm(const Objective& obj, const Image& x_inf, double tau, int iterations, Seed seed,
                                    double eps) {
  const Regularizer& reg = obj.regularizer();
  const auto jvp = [&](const Eigen::ArrayXd& v) {
    // J v = d/du <J^T u, v>, with J^T u itself a taped VJP.
    ad::Tape tape;
    const auto theta = reg.learnable() ? reg.param_vars(tape, false) : std::vector<ad::Var>{};
    const ad::Var x = tape.variable(to_tensor(x_inf));
    const ad::Var fx = record_layer(tape, obj, x, theta, tau, eps);
    const ad::Var u = tape.variable(ad::Tensor(fx.shape(), 0.0));
    const ad::Var jt_u = tape.gradient(fx, std::span<const ad::Var>(&x, 1), u)[0];
    const ad::Var s = ad::sum(jt_u * tape.constant(ad::Tensor(fx.shape(), v)));
    return Eigen::ArrayXd(tape.gradient(s, std::span<const ad::Var>(&u, 1))[0].value().data);
  };
  const auto vjp = [&](const Eigen::ArrayXd& w) {
    ad::Tape tape;
    const auto theta = reg.learnable() ? reg.param_vars(tape, false) : std::vector<ad::Var>{};
    const ad::Var x = tape.variable(to_tensor(x_inf));
    const ad::Var fx = record_layer(tape, obj, x, theta, tau, eps);
    return Eigen::ArrayXd(
        tape.gradient(fx, std::span<const ad::Var>(&x, 1), tape.constant(ad::Tensor(fx.shape(), w)))[0].value().data);
  };
  return power_iteration_norm(jvp, vjp, x_inf.size(), iterations, seed);
}

}  // namespace deqmd
