#include "deqmd/solvers.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>

#include "deqmd/metrics.hpp"

namespace deqmd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Image clamp_box(const Image& x, double a, double eps) { return x.with_data(clamp_positive(x, eps).array().min(a)); }

}  // namespace

void MdConfig::validate() const {
  if (!(a > 0.0)) throw ConfigError("md: a must be > 0");
  if (!(tau0 > 0.0)) throw ConfigError("md: tau0 must be > 0");
  if (!(bt_gamma > 0.0 && bt_gamma < 1.0)) throw ConfigError("md: bt_gamma must lie in (0, 1)");
  if (!(bt_eta > 0.0 && bt_eta < 1.0)) throw ConfigError("md: bt_eta must lie in (0, 1)");
  if (!(tol > 0.0)) throw ConfigError("md: tol must be > 0");
  if (max_iters < 1) throw ConfigError("md: max_iters must be >= 1");
  if (grow_every < 1 || !(grow_factor >= 1.0)) throw ConfigError("md: invalid step growth settings");
  if (max_shrinks < 1) throw ConfigError("md: max_shrinks must be >= 1");
  if (!(eps > 0.0 && eps < a)) throw ConfigError("md: eps must lie in (0, a)");
}

// ---------------------------------------------------------------- objective

Objective::Objective(KlFidelity fidelity, Regularizer regularizer, double a)
    : fidelity_(std::move(fidelity)), reg_(std::move(regularizer)), a_(a) {
  if (!(a_ > 0.0)) throw DomainError("objective: a must be > 0");
}

double Objective::psi(const Image& x) const {
  if (!x.all_finite() || !(x.array() > 0.0).all() || !(x.array() <= a_).all()) {
    return std::numeric_limits<double>::infinity();
  }
  return fidelity_.value(x) + reg_.value(x);
}

Image Objective::gradient(const Image& x) const {
  return x.with_data(fidelity_.gradient(x).array() + reg_.grad_x(x).array());
}

std::pair<double, Image> Objective::psi_and_gradient(const Image& x) const {
  if (!x.all_finite() || !(x.array() > 0.0).all() || !(x.array() <= a_).all()) {
    throw DomainError("objective: point outside (0, a]^n");
  }
  const Image ax = fidelity_.op().apply(x);
  auto [r, gr] = reg_.value_and_grad(x);
  const Image gk = fidelity_.gradient(x);
  return {fidelity_.value_at_forward(ax) + r, x.with_data(gk.array() + gr.array())};
}

// ---------------------------------------------------------------- steps

std::optional<StepResult> try_mirror_step(const Image& x, const Image& g, double tau, double a, double eps) {
  require_same_shape(x, g, "mirror_step");
  if (!(tau >= 0.0)) throw DomainError("mirror_step: tau must be >= 0");
  const Eigen::ArrayXd denom = 1.0 + tau * x.array() * g.array();
  if (!denom.isFinite().all() || !(denom > 0.0).all()) return std::nullopt;
  const Eigen::ArrayXd raw = (x.array() / denom).min(a);
  StepResult out{x.with_data(raw.max(eps)), int((raw < eps).count())};
  return out;
}

Image mirror_step(const Image& x, const Image& g, double tau, double a, double eps) {
  auto step = try_mirror_step(x, g, tau, a, eps);
  if (!step) throw StepInfeasible("mirror step: 1 + tau x g <= 0, step size infeasible");
  return std::move(step->x);
}

Image md_step(const Objective& obj, const Image& x, double tau, double eps) {
  return mirror_step(x, obj.gradient(x), tau, obj.a(), eps);
}

BacktrackResult backtrack_step(const Objective& obj, const Image& x, double tau_in, const MdConfig& cfg) {
  const auto [psi, g] = obj.psi_and_gradient(x);
  return backtrack_step(obj, x, psi, g, tau_in, cfg);
}

BacktrackResult backtrack_step(const Objective& obj, const Image& x, double psi_x, const Image& grad_x,
                               double tau_in, const MdConfig& cfg) {
  if (!(tau_in > 0.0)) throw DomainError("backtrack: tau must be > 0");
  // Roundoff allowance on the decrease test; Psi is a sum over many pixels.
  const double slack = 1e-12 * (1.0 + std::abs(psi_x));
  double tau = tau_in;
  for (int shrinks = 0; shrinks <= cfg.max_shrinks; ++shrinks, tau *= cfg.bt_eta) {
    auto step = try_mirror_step(x, grad_x, tau, obj.a(), cfg.eps);
    if (!step) continue;
    const double psi_new = obj.psi(step->x);
    if (!std::isfinite(psi_new)) continue;
    const double d = bregman_divergence(Potential::burg, step->x, x);
    if (psi_x - psi_new + slack >= (cfg.bt_gamma / tau) * d) {
      return {std::move(step->x), tau, shrinks, psi_x, psi_new, d, step->floor_clamps};
    }
  }
  throw BacktrackFailure("backtracking: no acceptable step after " + std::to_string(cfg.max_shrinks) +
                         " shrinks (tau_in = " + std::to_string(tau_in) + ")");
}

// ---------------------------------------------------------------- fixed point

SolveReport solve_fixed_point(const Objective& obj, const Image& x0, const MdConfig& cfg, const SolveOptions& opt) {
  cfg.validate();
  if (std::abs(cfg.a - obj.a()) > 0.0) throw ConfigError("solve: MdConfig.a differs from the objective's box");
  SolveReport rep;
  rep.y_l1 = nolip_constant_kl(obj.fidelity().y());
  Image x = clamp_box(x0, obj.a(), cfg.eps);
  auto [psi, g] = obj.psi_and_gradient(x);
  rep.psi0 = psi;
  double tau = cfg.tau0;
  int accepted = 0;
  for (int k = 1; k <= cfg.max_iters; ++k) {
    double tau_try = cfg.warm_start_tau ? tau : cfg.tau0;
    if (cfg.warm_start_tau && accepted > 0 && accepted % cfg.grow_every == 0) tau_try *= cfg.grow_factor;
    BacktrackResult bt = backtrack_step(obj, x, psi, g, tau_try, cfg);
    ++accepted;
    const double rel = norm2(x.with_data(bt.x.array() - x.array())) / norm2(bt.x);
    x = std::move(bt.x);
    tau = bt.tau;
    rep.floor_clamps += bt.floor_clamps;
    rep.rows.push_back({k, bt.psi_after, bt.tau, rel, opt.reference ? psnr(x, *opt.reference) : kNaN, bt.shrinks,
                        bt.divergence});
    if (opt.keep_iterates) rep.iterates.push_back(x);
    if (rel < cfg.tol) {
      rep.converged = true;
      break;
    }
    std::tie(psi, g) = obj.psi_and_gradient(x);
  }
  rep.tau_final = tau;
  rep.x = std::move(x);
  return rep;
}

double fixed_point_residual(const Objective& obj, const Image& x, double tau, double eps) {
  const Image fx = md_step(obj, x, tau, eps);
  return (fx.array() - x.array()).abs().maxCoeff() / x.array().abs().maxCoeff();
}

void SolveReport::write_csv(std::ostream& out, double alpha) const {
  out << "k,psi,tau,rel_change,psnr,tau_l1,tau_l1_counts\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.k << ',' << r.psi << ',' << r.tau << ',' << r.rel_change << ',';
    if (std::isnan(r.psnr)) {
      out << "nan";
    } else {
      out << r.psnr;
    }
    out << ',' << r.tau * y_l1 << ',' << r.tau * alpha * y_l1 << '\n';
  }
}

// ---------------------------------------------------------------- init

const char* to_string(InitStrategy s) {
  switch (s) {
    case InitStrategy::adjoint: return "adjoint";
    case InitStrategy::random_uniform: return "random";
    case InitStrategy::tv_recon: return "tv";
    case InitStrategy::rl: return "rl";
  }
  return "?";
}

InitStrategy init_strategy_from_string(const std::string& name) {
  if (name == "adjoint") return InitStrategy::adjoint;
  if (name == "random") return InitStrategy::random_uniform;
  if (name == "tv") return InitStrategy::tv_recon;
  if (name == "rl") return InitStrategy::rl;
  throw ConfigError("unknown init strategy '" + name + "' (expected adjoint, random, tv or rl)");
}

Image initialize(const InitSpec& spec, const Image& y, const ConvolutionOperator& op, Seed seed) {
  const double a = spec.md.a, eps = spec.md.eps;
  switch (spec.strategy) {
    case InitStrategy::adjoint:
      return clamp_box(op.adjoint(y), a, eps);
    case InitStrategy::random_uniform: {
      Rng rng(seed);
      Image x(y.height(), y.width(), y.channels());
      for (Eigen::Index i = 0; i < x.size(); ++i) x.array()[i] = rng.uniform_open();
      return clamp_box(x, a, eps);
    }
    case InitStrategy::tv_recon: {
      const Objective tv(KlFidelity(y, op), Regularizer::smoothed_tv(spec.tv_lambda), a);
      return solve_fixed_point(tv, clamp_box(op.adjoint(y), a, eps), spec.md).x;
    }
    case InitStrategy::rl:
      return clamp_box(richardson_lucy(y, op, spec.rl_iters).x, a, eps);
  }
  throw ConfigError("initialize: unknown strategy");
}

// ---------------------------------------------------------------- baselines

SolveReport richardson_lucy(const Image& y, const ConvolutionOperator& op, int iterations,
                            std::optional<Image> x_init, const SolveOptions& opt) {
  if (iterations < 0) throw DomainError("richardson_lucy: iterations must be >= 0");
  if (!y.all_finite() || (y.array() < 0.0).any()) throw DomainError("richardson_lucy: y must be finite and >= 0");
  const double eps = kPositivityFloor;
  Image x = x_init ? *x_init : Image(y.height(), y.width(), y.channels(), std::max(eps, y.array().mean()));
  require_same_shape(x, y, "richardson_lucy");
  if (!(x.array() > 0.0).all()) throw DomainError("richardson_lucy: x_init must be > 0");
  const KlFidelity kl(y, op);
  const Eigen::ArrayXd sensitivity = op.adjoint_of_ones().array();
  SolveReport rep;
  rep.y_l1 = nolip_constant_kl(y);
  rep.psi0 = kl.value(x);
  for (int k = 1; k <= iterations; ++k) {
    const Image ax = op.apply(x);
    const Image ratio = y.with_data(y.array() / ax.array().max(eps));
    const Image next = x.with_data((x.array() / sensitivity * op.adjoint(ratio).array()).max(eps));
    const double rel = norm2(next.with_data(next.array() - x.array())) / norm2(next);
    x = next;
    rep.rows.push_back({k, kl.value(x), 0.0, rel, opt.reference ? psnr(x, *opt.reference) : kNaN, 0, 0.0});
    if (opt.keep_iterates) rep.iterates.push_back(x);
  }
  rep.converged = true;
  rep.x = std::move(x);
  return rep;
}

std::pair<int, Image> best_iterate_selector(const std::vector<Image>& stream, const Image& reference,
                                            const std::function<double(const Image&, const Image&)>& metric) {
  if (stream.empty()) throw DomainError("best_iterate_selector: empty stream");
  int best = 0;
  double best_value = metric(stream[0], reference);
  for (std::size_t k = 1; k < stream.size(); ++k) {
    const double v = metric(stream[k], reference);
    if (v > best_value) {
      best_value = v;
      best = int(k);
    }
  }
  return {best, stream[std::size_t(best)]};
}

}  // namespace deqmd
