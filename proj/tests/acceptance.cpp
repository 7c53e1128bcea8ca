// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "deqmd/harness.hpp"
#include "deqmd/metrics.hpp"
#include "deqmd/synthetic.hpp"

using namespace deqmd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int failures = 0;
std::vector<int> selected;  // empty: all

void criterion(int id, const char* name, double budget_s, const std::function<Outcome()>& body) {
  if (!selected.empty() && std::find(selected.begin(), selected.end(), id) == selected.end()) return;
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = s < budget_s;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  std::printf("%s  %2d  %-34s %s; %.2f s%s\n", pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), s,
              in_time ? "" : format(" (over %.0f s budget)", budget_s).c_str());
  std::fflush(stdout);
}

Image random_image(int h, int w, Rng& rng, double lo, double hi) {
  Image x(h, w, 1);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.array()[i] = lo + (hi - lo) * rng.uniform();
  return x;
}

// Worst relative error of central differences of f along random directions
// against the analytic directional derivative.
double directional_check(Rng& rng, int draws, const std::function<Image(Rng&)>& point,
                         const std::function<double(const Image&)>& f, const std::function<Image(const Image&)>& grad,
                         double h = 1e-6) {
  double worst = 0.0;
  for (int d = 0; d < draws; ++d) {
    const Image x = point(rng);
    const Image v = random_image(x.height(), x.width(), rng, -1.0, 1.0);
    const double an = dot(grad(x), v);
    const double fd = (f(x.with_data(x.array() + h * v.array())) - f(x.with_data(x.array() - h * v.array()))) / (2 * h);
    worst = std::max(worst, std::abs(an - fd) / std::max(std::abs(fd), 1e-8));
  }
  return worst;
}

struct Toy {
  Image clean, y;
  ConvolutionOperator op;
  double alpha;
  SolveReport report;
  double residual = 0.0;
};

std::vector<Toy> toys;

void solve_toys() {
  const std::pair<double, std::uint64_t> cases[] = {{100.0, 1}, {60.0, 2}, {40.0, 3}, {100.0, 4}, {60.0, 5}};
  for (const auto& [alpha, seed] : cases) {
    const Image clean = synthetic_image(32, 32, Seed{seed});
    const ConvolutionOperator op(Kernel::gaussian(11, 1.2), shape_of(clean));
    const Image counts = sample_poisson(op.apply(clean), {alpha}, Seed{seed + 1000});
    const Image y = counts.with_data(counts.array() / alpha);
    const Objective obj(KlFidelity(y, op), Regularizer::smoothed_tv(0.02), 1.0);
    SolveReport rep = solve_fixed_point(obj, initialize({}, y, op, Seed{seed}), MdConfig{});
    const double res = fixed_point_residual(obj, rep.x, rep.tau_final);
    toys.push_back({clean, y, op, alpha, std::move(rep), res});
  }
}

// Shared by criteria 10 and 11.
struct DeskRun {
  ExperimentConfig cfg;
  ConvolutionOperator op{Kernel::delta(), {1, 1, 1}};
  Splits splits;
  Regularizer init = Regularizer::smoothed_tv(0.0);
  TrainResult pretrained;
};

DeskRun desk;

void prepare_desk() {
  desk.cfg.train.epochs = 20;
  desk.cfg.seed = Seed{2024};
  desk.op = ConvolutionOperator(desk.cfg.kernel.build(), {desk.cfg.patch, desk.cfg.patch, 1});
  desk.splits = build_splits(desk.cfg, desk.op);
  const NetArch arch = desk.cfg.arch(RegularizerKind::red);
  desk.init = Regularizer::network(arch, init_params(arch, derive(desk.cfg.seed, 7)));
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  criterion(1, "Burg box prox = Euclidean clamp", 1.0, [] {
    Rng rng(Seed{1});
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double a = 0.1 + 2.0 * rng.uniform();
      Image x(4, 4, 1);
      for (Eigen::Index k = 0; k < x.size(); ++k) x.array()[k] = std::exp(6.0 * rng.uniform() - 4.0);
      const Image p = box_bregman_prox(Potential::burg, x, a);
      for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double v = x.array()[k];
        worst = std::max(worst, std::abs(p.array()[k] - (v > a ? a : v)));
      }
    }
    return Outcome{worst < 1e-12, format("max |diff| %.1e over 1000 inputs", worst)};
  });

  criterion(2, "mirror inversion, divergence", 1.0, [] {
    Rng rng(Seed{2});
    double inv = 0.0, self = 0.0, lowest = 1e300;
    for (int i = 0; i < 1000; ++i) {
      const Image x = random_image(4, 4, rng, 1e-6, 10.0), z = random_image(4, 4, rng, 1e-6, 10.0);
      const Image back = inverse_mirror_map(Potential::burg, mirror_map(Potential::burg, x));
      inv = std::max(inv, ((back.array() - x.array()).abs() / x.array()).maxCoeff());
      self = std::max(self, std::abs(bregman_divergence(Potential::burg, x, x)));
      lowest = std::min(lowest, bregman_divergence(Potential::burg, x, z));
    }
    return Outcome{inv <= 1e-12 && self == 0.0 && lowest >= 0.0,
                   format("inversion rel %.1e, D(x,x) %.1e, min D %.2e", inv, self, lowest)};
  });

  criterion(3, "gradient oracles vs central FD", 60.0, [] {
    Rng rng(Seed{3});
    const int n = 8;
    const ConvolutionOperator op(Kernel::gaussian(5, 1.0), {n, n, 1});
    const auto interior = [&](Rng& r) { return random_image(n, n, r, 0.2, 0.9); };
    std::vector<std::pair<std::string, double>> err;

    const Image counts = sample_poisson(op.apply(random_image(n, n, rng, 0.2, 0.8)), {50.0}, Seed{4});
    const KlFidelity kl(counts.with_data(counts.array() / 50.0), op);
    err.emplace_back("kl", directional_check(
                               rng, 20, interior, [&](const Image& x) { return kl.value(x); },
                               [&](const Image& x) { return kl_gradient(kl, x); }));
    err.emplace_back("tv", directional_check(
                               rng, 20, interior, [](const Image& x) { return tv_smoothed_value(x); },
                               [](const Image& x) { return tv_smoothed_grad(x); }));
    for (const NetArch& a : {NetArch::deq_s(), NetArch::deq_red()}) {
      double worst = 0.0;
      for (int d = 0; d < 20; ++d) {
        const Regularizer reg = Regularizer::network(a, init_params(a, Seed{rng.bits()}));
        worst = std::max(worst, directional_check(
                                    rng, 1, interior, [&](const Image& x) { return reg.value(x); },
                                    [&](const Image& x) { return reg.grad_x(x); }, 1e-5));
      }
      err.emplace_back(to_string(a.kind), worst);
    }
    const Image xs = random_image(n, n, rng, 0.0, 1.0);
    err.emplace_back("loss", directional_check(
                                 rng, 20, interior, [&](const Image& x) { return supervised_loss(x, xs, 1e-3).value; },
                                 [&](const Image& x) { return supervised_loss(x, xs, 1e-3).cotangent; }));

    // JFB: <d f(x_inf)/d theta, v> against central differences in theta.
    double jfb = 0.0;
    const NetArch a = NetArch::deq_red();
    for (int d = 0; d < 20; ++d) {
      const ParamVector theta = init_params(a, Seed{rng.bits()});
      const Objective obj(kl, Regularizer::network(a, theta), 1.0);
      const Image x = interior(rng), c = random_image(n, n, rng, -1.0, 1.0);
      const double tau = 0.02;
      const ParamVector g = jfb_gradient(obj, x, tau, c).grad;
      Eigen::ArrayXd v(theta.size());
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
      const auto along = [&](double s) {
        ParamVector p = theta;
        p.values += s * v;
        return dot(md_step(Objective(kl, Regularizer::network(a, p), 1.0), x, tau), c);
      };
      const double fd = (along(1e-6) - along(-1e-6)) / 2e-6;
      jfb = std::max(jfb, std::abs((g.values * v).sum() - fd) / std::max(std::abs(fd), 1e-8));
    }
    err.emplace_back("jfb", jfb);

    bool ok = true;
    std::string detail = "max rel err";
    for (const auto& [k, e] : err) {
      ok = ok && e <= 1e-4;
      detail += format(" %s %.1e", k.c_str(), e);
    }
    return Outcome{ok, detail};
  });

  criterion(4, "relative smoothness L = |y|_1", 10.0, [] {
    Rng rng(Seed{5});
    const Image x0 = random_image(8, 8, rng, 0.1, 1.0);
    const ConvolutionOperator op(Kernel::gaussian(5, 1.0), shape_of(x0));
    const Image y = sample_poisson(op.apply(x0), {20.0}, Seed{6});
    const KlFidelity f(y, op);
    const auto kl = [&](const Image& x) { return f.value(x); };
    const PositiveBox box{kPositivityFloor, 1.0, shape_of(x0)};
    const auto ok = check_relative_convexity(Potential::burg, kl, nolip_constant_kl(y), box, 1000, Seed{7});
    const auto bad = check_relative_convexity(Potential::burg, kl, 0.0, box, 1000, Seed{8});
    return Outcome{ok.trials == 1000 && ok.violations == 0 && bad.violations > 0,
                   format("L=|y|_1: %d/1000 violations; L=0: %d/1000 violations", ok.violations, bad.violations)};
  });

  criterion(5, "monotone descent (5 toy solves)", 120.0, [] {
    solve_toys();
    const double gamma = MdConfig{}.bt_gamma;
    int steps = 0, bad = 0;
    double worst = -1e300;
    for (const auto& t : toys) {
      double prev = t.report.psi0;
      for (const auto& r : t.report.rows) {
        const double gap = r.psi + (gamma / r.tau) * r.divergence - prev;
        worst = std::max(worst, gap);
        if (gap > 1e-9) ++bad;
        ++steps;
        prev = r.psi;
      }
    }
    return Outcome{bad == 0, format("%d accepted steps, %d violations, worst gap %.1e", steps, bad, worst)};
  });

  criterion(6, "fixed-point convergence", 120.0, [] {
    bool ok = !toys.empty();
    std::string detail = "iters/residual:";
    for (const auto& t : toys) {
      ok = ok && t.report.converged && t.report.iterations() <= 2000 && t.report.rows.back().rel_change < 2.5e-5 &&
           t.residual < 2.5e-4;
      detail += format(" %d/%.1e", t.report.iterations(), t.residual);
    }
    return Outcome{ok, detail};
  });

  criterion(7, "backtracking step advantage", 60.0, [] {
    bool ok = !toys.empty();
    double min_factor = 1e300;
    for (const auto& t : toys) {
      double logsum = 0.0;
      for (const auto& r : t.report.rows) logsum += std::log(r.tau);
      const double factor = std::exp(logsum / double(t.report.rows.size())) * nolip_constant_kl(t.y);
      min_factor = std::min(min_factor, factor);
      ok = ok && factor >= 1.0;
    }
    return Outcome{ok, format("geo-mean tau * |y|_1 >= %.1f (%s 10)", min_factor, min_factor >= 10.0 ? ">=" : "<")};
  });

  criterion(8, "Richardson-Lucy", 30.0, [] {
    Rng rng(Seed{9});
    Image y(12, 12, 1);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.array()[i] = rng.uniform() < 0.2 ? 0.0 : 2.0 * rng.uniform();
    const auto id = ConvolutionOperator::identity(shape_of(y));
    const Image x0 = random_image(12, 12, rng, 0.1, 1.0);
    const auto one = richardson_lucy(y, id, 1, x0);
    const double step = (one.x.array() - y.array().max(kPositivityFloor)).abs().maxCoeff();

    const Image clean = synthetic_image(32, 32, Seed{10});
    const ConvolutionOperator op(Kernel::gaussian(11, 1.2), shape_of(clean));
    const auto rep = richardson_lucy(op.apply(clean), op, 100);
    double prev = rep.psi0, rise = 0.0;
    for (const auto& r : rep.rows) {
      rise = std::max(rise, r.psi - prev);
      prev = r.psi;
    }
    return Outcome{step <= 1e-9 && rise <= 1e-9 && rep.rows.size() == 100,
                   format("delta one-step err %.1e, max KL rise %.1e over 100 iters", step, rise)};
  });

  criterion(9, "Poisson channel statistics", 30.0, [] {
    bool ok = true;
    std::string detail;
    const int n = 100000;
    for (double lambda : {0.5, 5.0, 50.0}) {
      Rng rng(derive(Seed{11}, std::uint64_t(lambda * 10)));
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const double k = double(poisson_draw(lambda, rng));
        s += k;
        s2 += k * k;
      }
      const double mean = s / n, var = (s2 - n * mean * mean) / (n - 1);
      const double z_mean = (mean - lambda) / std::sqrt(lambda / n);
      const double z_var = (var - lambda) / std::sqrt((lambda + 2 * lambda * lambda) / n);
      ok = ok && std::abs(z_mean) < 3.0 && std::abs(z_var) < 3.0;
      detail += format("lambda %g z(mean) %+.2f z(var) %+.2f; ", lambda, z_mean, z_var);
    }
    Rng rng(Seed{12});
    bool zero = true;
    for (int i = 0; i < 1000; ++i) zero = zero && poisson_draw(0.0, rng) == 0;
    return Outcome{ok && zero, detail + (zero ? "Poiss(0) = 0" : "Poiss(0) != 0")};
  });

  criterion(10, "desk-scale DEQ-RED training", 1800.0, [] {
    prepare_desk();
    auto& cfg = desk.cfg;
    std::vector<Image> clean;
    for (const auto& p : desk.splits.train) clean.push_back(p.clean);
    Regularizer reg = desk.init;
    reg.set_params(pretrain_denoiser(clean, reg, cfg.pretrain_cfg, derive(cfg.seed, 8)).theta);
    TrainConfig tc = cfg.train;
    tc.md = cfg.md;
    desk.pretrained = train(desk.splits.train, desk.splits.val, reg, desk.op, tc);
    const auto& rows = desk.pretrained.log.rows;
    const double l0 = rows.front().train_loss, l1 = rows.back().train_loss;

    reg.set_params(desk.pretrained.best);
    double deq = 0.0, rl = 0.0, obs = 0.0;
    for (const auto& p : desk.splits.test) {
      deq += psnr(deq_forward(reg, p, desk.op, cfg.md).x, p.clean);
      const Image y = normalized_measurement(p);
      const auto r = richardson_lucy(y, desk.op, cfg.rl_max_iters, std::nullopt, {&p.clean, false});
      double best = -1e300;
      for (const auto& row : r.rows) best = std::max(best, row.psnr);
      rl += best;
      obs += psnr(y, p.clean);
    }
    const double m = double(desk.splits.test.size());
    deq /= m;
    rl /= m;
    obs /= m;
    const bool a = l1 < 0.8 * l0, b = deq >= rl + 0.5, c = deq >= obs + 1.5;
    return Outcome{a && b && c, format("loss %.3f -> %.3f (%s); test PSNR DEQ-RED %.2f, RL-best %.2f, observed %.2f "
                                       "(best epoch %d)",
                                       l0, l1, a ? "<0.8x" : "not <0.8x", deq, rl, obs, desk.pretrained.best_epoch)};
  });

  criterion(11, "pre-training reduces iterations", 600.0, [] {
    if (desk.pretrained.log.rows.size() < 2) return Outcome{false, "needs the criterion 10 run"};
    TrainConfig tc = desk.cfg.train;
    tc.md = desk.cfg.md;
    tc.epochs = 1;
    tc.log_initial = false;
    const TrainResult cold = train(desk.splits.train, desk.splits.val, desk.init, desk.op, tc);
    const double warm_it = desk.pretrained.log.rows[1].mean_fp_iters, cold_it = cold.log.rows.at(0).mean_fp_iters;
    return Outcome{warm_it < cold_it,
                   format("epoch-1 mean forward iterations: pretrained %.1f, cold start %.1f", warm_it, cold_it)};
  });

  criterion(12, "benchmark determinism", 300.0, [] {
    const fs::path root = fs::temp_directory_path() / "deqmd_acceptance_determinism";
    fs::remove_all(root);
    ExperimentConfig c;
    c.kernel = parse_kernel_spec("gaussian 5 1");
    c.deq_s_widths = {4, 4, 2};
    c.deq_red_widths = {4, 4};
    c.tv_grid = {1e-3, 1e-2};
    c.rl_max_iters = 30;
    c.md.max_iters = 200;
    c.train.epochs = 2;
    c.pretrain_cfg.epochs = 2;
    c.scenes = 4;
    c.scene_size = 24;
    c.patch = 16;
    c.n_train = 2;
    c.n_val = 1;
    c.n_test = 2;
    c.seed = Seed{99};
    c.output = root / "a";
    cmd_benchmark(c);
    c.output = root / "b";
    cmd_benchmark(c);
    int files = 0, differ = 0;
    for (const auto& e : fs::directory_iterator(root / "a")) {
      if (e.path().extension() != ".csv") continue;
      ++files;
      const fs::path other = root / "b" / e.path().filename();
      if (!fs::exists(other) || read_file(e.path()) != read_file(other)) ++differ;
    }
    int files_b = 0;
    for (const auto& e : fs::directory_iterator(root / "b")) files_b += e.path().extension() == ".csv";
    return Outcome{files > 0 && differ == 0 && files == files_b,
                   format("%d CSV files, %d differ", files, differ + std::abs(files - files_b))};
  });

  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
