#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "deqmd/bregman.hpp"
#include "deqmd/regularizers.hpp"

namespace deqmd {

struct MdConfig {
  double a = 1.0;            // box upper bound
  double tau0 = 1.0;
  double bt_gamma = 0.8;     // sufficient-decrease factor
  double bt_eta = 0.5;       // shrink factor
  double tol = 2.5e-5;       // relative-change stopping threshold
  int max_iters = 2000;
  bool warm_start_tau = true;
  int grow_every = 10;       // accepted steps between x2 growth attempts
  double grow_factor = 2.0;
  int max_shrinks = 60;
  double eps = kPositivityFloor;

  void validate() const;
};

/// Psi(x) = KL(y, Ax) + R(x) + indicator of [0, a]^n.
class Objective {
 public:
  Objective(KlFidelity fidelity, Regularizer regularizer, double a = 1.0);

  const KlFidelity& fidelity() const noexcept { return fidelity_; }
  const Regularizer& regularizer() const noexcept { return reg_; }
  double a() const noexcept { return a_; }

  /// +inf outside (0, a]^n.
  double psi(const Image& x) const;
  /// grad KL + grad R.
  Image gradient(const Image& x) const;
  std::pair<double, Image> psi_and_gradient(const Image& x) const;

 private:
  KlFidelity fidelity_;
  Regularizer reg_;
  double a_;
};

/// The mirror point left dom(grad h*): 1 + tau x_i g_i <= 0 for some i.
class StepInfeasible : public DomainError {
 public:
  using DomainError::DomainError;
};

struct StepResult {
  Image x;
  int floor_clamps = 0;  // pixels raised to eps after the box projection
};

/// Burg mirror step x_i / (1 + tau x_i g_i), projected onto (0, a] and
/// floored at eps. Empty when the step is infeasible.
std::optional<StepResult> try_mirror_step(const Image& x, const Image& g, double tau, double a, double eps);
/// Throws StepInfeasible.
Image mirror_step(const Image& x, const Image& g, double tau, double a, double eps = kPositivityFloor);
/// One application of the DEQ-MD layer f(x) = T_tau(x).
Image md_step(const Objective& obj, const Image& x, double tau, double eps = kPositivityFloor);

struct BacktrackResult {
  Image x;
  double tau = 0.0;
  int shrinks = 0;
  double psi_before = 0.0;
  double psi_after = 0.0;
  double divergence = 0.0;  // D_h(x_next, x)
  int floor_clamps = 0;
};

class BacktrackFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shrinks tau by eta until the step is feasible and
///   Psi(x) - Psi(T x) >= (gamma / tau) D_h(T x, x).
BacktrackResult backtrack_step(const Objective& obj, const Image& x, double tau_in, const MdConfig& cfg);
/// Same, reusing Psi(x) and the gradient at x.
BacktrackResult backtrack_step(const Objective& obj, const Image& x, double psi_x, const Image& grad_x,
                               double tau_in, const MdConfig& cfg);

struct IterationRecord {
  int k = 0;
  double psi = 0.0;
  double tau = 0.0;
  double rel_change = 0.0;
  double psnr = 0.0;  // NaN without a reference
  int shrinks = 0;
  double divergence = 0.0;
};

struct SolveReport {
  std::vector<IterationRecord> rows;
  std::vector<Image> iterates;  // x^1, x^2, ... when requested
  Image x;
  bool converged = false;
  double psi0 = 0.0;
  double tau_final = 0.0;
  double y_l1 = 0.0;  // ||y||_1 of the fidelity data
  int floor_clamps = 0;

  int iterations() const noexcept { return int(rows.size()); }
  /// k, psi, tau, rel_change, psnr, tau_l1, tau_l1_counts, where tau_l1 =
  /// tau ||y||_1 and tau_l1_counts uses alpha ||y||_1 (counts scale).
  void write_csv(std::ostream& out, double alpha = 1.0) const;
};

struct SolveOptions {
  const Image* reference = nullptr;  // enables the psnr column
  bool keep_iterates = false;
};

/// Iterates backtrack_step until the relative change drops below tol.
SolveReport solve_fixed_point(const Objective& obj, const Image& x0, const MdConfig& cfg,
                              const SolveOptions& opt = {});

/// ||T x - x||_inf / ||x||_inf at the given step size.
double fixed_point_residual(const Objective& obj, const Image& x, double tau, double eps = kPositivityFloor);

enum class InitStrategy { adjoint, random_uniform, tv_recon, rl };

const char* to_string(InitStrategy s);
InitStrategy init_strategy_from_string(const std::string& name);

struct InitSpec {
  InitStrategy strategy = InitStrategy::adjoint;
  double tv_lambda = 0.01;
  int rl_iters = 20;
  MdConfig md;  // used by tv_recon
};

/// x0 from a measurement y (image units) and the operator; always in [eps, a].
Image initialize(const InitSpec& spec, const Image& y, const ConvolutionOperator& op, Seed seed);

/// x^{k+1} = x^k / (A^T 1) * A^T (y / A x^k), floored at eps. x_init
/// defaults to the constant image mean(y).
SolveReport richardson_lucy(const Image& y, const ConvolutionOperator& op, int iterations,
                            std::optional<Image> x_init = std::nullopt, const SolveOptions& opt = {});

/// argmax over the stream of metric(x_k, reference); ties go to the
/// smallest k. Returns the 0-based position and the image.
std::pair<int, Image> best_iterate_selector(const std::vector<Image>& stream, const Image& reference,
                                            const std::function<double(const Image&, const Image&)>& metric);

}  // namespace deqmd
