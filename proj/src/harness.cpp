#include "deqmd/harness.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "deqmd/image_io.hpp"
#include "deqmd/metrics.hpp"
#include "deqmd/synthetic.hpp"

namespace deqmd {

namespace fs = std::filesystem;

namespace {

// Sub-stream ids of the experiment seed.
enum Stream : std::uint64_t {
  s_scenes = 1,
  s_crop,
  s_train_noise,
  s_val_noise,
  s_test_noise,
  s_init_deq_s,
  s_init_deq_red,
  s_pretrain,
  s_solver_init,
  s_simulate,
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

template <typename Int>
Int parse_int(const std::string& s) {
  Int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_same_v<T, double>) {
      s += fmt(v[i]);
    } else if constexpr (std::is_same_v<T, fs::path>) {
      s += v[i].string();
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  if (s.empty()) return out;
  for (const auto& t : split(s, ',')) out.push_back(parse_int<int>(t));
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const auto& t : split(s, ',')) out.push_back(parse_double(t));
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define DEQMD_FIELD(member, parse, show)                                          \
  Field {                                                                         \
    [](ExperimentConfig& c, const std::string& v) { c.member = parse; },          \
        [](const ExperimentConfig& c) { return std::string(show); }               \
  }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table{
      {"kernel", DEQMD_FIELD(kernel, parse_kernel_spec(v), to_string(c.kernel))},
      {"alpha", DEQMD_FIELD(alpha, parse_double(v), fmt(c.alpha))},
      {"regularizer", DEQMD_FIELD(regularizer, regularizer_kind_from_string(v), to_string(c.regularizer))},
      {"deq_s.widths", DEQMD_FIELD(deq_s_widths, parse_ints(v), join(c.deq_s_widths))},
      {"deq_red.widths", DEQMD_FIELD(deq_red_widths, parse_ints(v), join(c.deq_red_widths))},
      {"tv.lambda", DEQMD_FIELD(tv_lambda, parse_double(v), fmt(c.tv_lambda))},
      {"tv.grid", DEQMD_FIELD(tv_grid, parse_doubles(v), join(c.tv_grid))},
      {"rl.max_iters", DEQMD_FIELD(rl_max_iters, parse_int<int>(v), std::to_string(c.rl_max_iters))},
      {"init", DEQMD_FIELD(init.strategy, init_strategy_from_string(v), to_string(c.init.strategy))},
      {"init.tv_lambda", DEQMD_FIELD(init.tv_lambda, parse_double(v), fmt(c.init.tv_lambda))},
      {"init.rl_iters", DEQMD_FIELD(init.rl_iters, parse_int<int>(v), std::to_string(c.init.rl_iters))},
      {"md.a", DEQMD_FIELD(md.a, parse_double(v), fmt(c.md.a))},
      {"md.tau0", DEQMD_FIELD(md.tau0, parse_double(v), fmt(c.md.tau0))},
      {"md.bt_gamma", DEQMD_FIELD(md.bt_gamma, parse_double(v), fmt(c.md.bt_gamma))},
      {"md.bt_eta", DEQMD_FIELD(md.bt_eta, parse_double(v), fmt(c.md.bt_eta))},
      {"md.tol", DEQMD_FIELD(md.tol, parse_double(v), fmt(c.md.tol))},
      {"md.max_iters", DEQMD_FIELD(md.max_iters, parse_int<int>(v), std::to_string(c.md.max_iters))},
      {"md.warm_start_tau", DEQMD_FIELD(md.warm_start_tau, parse_bool(v), c.md.warm_start_tau ? "true" : "false")},
      {"md.grow_every", DEQMD_FIELD(md.grow_every, parse_int<int>(v), std::to_string(c.md.grow_every))},
      {"md.grow_factor", DEQMD_FIELD(md.grow_factor, parse_double(v), fmt(c.md.grow_factor))},
      {"md.max_shrinks", DEQMD_FIELD(md.max_shrinks, parse_int<int>(v), std::to_string(c.md.max_shrinks))},
      {"md.eps", DEQMD_FIELD(md.eps, parse_double(v), fmt(c.md.eps))},
      {"train.epochs", DEQMD_FIELD(train.epochs, parse_int<int>(v), std::to_string(c.train.epochs))},
      {"train.lr", DEQMD_FIELD(train.lr, parse_double(v), fmt(c.train.lr))},
      {"train.lr_halve_after",
       DEQMD_FIELD(train.lr_halve_after, parse_int<int>(v), std::to_string(c.train.lr_halve_after))},
      {"train.loss_tv_lambda", DEQMD_FIELD(train.loss_tv_lambda, parse_double(v), fmt(c.train.loss_tv_lambda))},
      {"train.clip_norm", DEQMD_FIELD(train.clip_norm, parse_double(v), fmt(c.train.clip_norm))},
      {"train.checkpoint_every",
       DEQMD_FIELD(train.checkpoint_every, parse_int<int>(v), std::to_string(c.train.checkpoint_every))},
      {"train.verbose", DEQMD_FIELD(train.verbose, parse_bool(v), c.train.verbose ? "true" : "false")},
      {"train.log_initial", DEQMD_FIELD(train.log_initial, parse_bool(v), c.train.log_initial ? "true" : "false")},
      {"pretrain", DEQMD_FIELD(pretrain, parse_bool(v), c.pretrain ? "true" : "false")},
      {"pretrain.sigma", DEQMD_FIELD(pretrain_cfg.sigma, parse_double(v), fmt(c.pretrain_cfg.sigma))},
      {"pretrain.epochs", DEQMD_FIELD(pretrain_cfg.epochs, parse_int<int>(v), std::to_string(c.pretrain_cfg.epochs))},
      {"pretrain.lr", DEQMD_FIELD(pretrain_cfg.lr, parse_double(v), fmt(c.pretrain_cfg.lr))},
      {"pretrain.clip_norm", DEQMD_FIELD(pretrain_cfg.clip_norm, parse_double(v), fmt(c.pretrain_cfg.clip_norm))},
      {"data.images", Field{[](ExperimentConfig& c, const std::string& v) {
                              c.images.clear();
                              if (!v.empty())
                                for (const auto& p : split(v, ',')) c.images.emplace_back(p);
                            },
                            [](const ExperimentConfig& c) { return join(c.images); }}},
      {"data.scenes", DEQMD_FIELD(scenes, parse_int<int>(v), std::to_string(c.scenes))},
      {"data.scene_size", DEQMD_FIELD(scene_size, parse_int<int>(v), std::to_string(c.scene_size))},
      {"data.patch", DEQMD_FIELD(patch, parse_int<int>(v), std::to_string(c.patch))},
      {"data.train", DEQMD_FIELD(n_train, parse_int<int>(v), std::to_string(c.n_train))},
      {"data.val", DEQMD_FIELD(n_val, parse_int<int>(v), std::to_string(c.n_val))},
      {"data.test", DEQMD_FIELD(n_test, parse_int<int>(v), std::to_string(c.n_test))},
      {"data.manifest", DEQMD_FIELD(manifest, fs::path(v), c.manifest.string())},
      {"checkpoint.deq_s", DEQMD_FIELD(deq_s_checkpoint, fs::path(v), c.deq_s_checkpoint.string())},
      {"checkpoint.deq_red", DEQMD_FIELD(deq_red_checkpoint, fs::path(v), c.deq_red_checkpoint.string())},
      {"benchmark.init_study", DEQMD_FIELD(init_study, parse_bool(v), c.init_study ? "true" : "false")},
      {"timing", DEQMD_FIELD(timing, parse_bool(v), c.timing ? "true" : "false")},
      {"seed", DEQMD_FIELD(seed, Seed{parse_int<std::uint64_t>(v)}, std::to_string(c.seed.value))},
      {"output", DEQMD_FIELD(output, fs::path(v), c.output.string())},
  };
  return table;
}

#undef DEQMD_FIELD

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  return f;
}

void prepare_output(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output);
  auto f = open_out(cfg.output / "config.txt");
  cfg.write(f);
}

void check_finite(double v, const std::string& what, int image) {
  if (!std::isfinite(v)) {
    throw DomainError("non-finite metric: " + what + " on image " + std::to_string(image) + " (" + fmt(v) + ")");
  }
}

MetricsRow measure(const std::string& method, int image, const Image& x, const Image& ref, int iterations,
                   double seconds) {
  MetricsRow r{method, image, psnr(x, ref), ssim(x, ref), iterations, seconds};
  check_finite(r.psnr, method + " psnr", image);
  check_finite(r.ssim, method + " ssim", image);
  return r;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

InitSpec solver_init(const ExperimentConfig& cfg) {
  InitSpec s = cfg.init;
  s.md = cfg.md;
  return s;
}

std::vector<ObservationPair> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path dir = path.parent_path();
  const auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : dir / p; };
  std::string line;
  std::getline(in, line);
  if (trim(line) != "clean_path,observed_path,alpha,seed") {
    throw ConfigError("manifest " + path.string() + ": unexpected header '" + line + "'", 1);
  }
  std::vector<ObservationPair> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 4) throw ConfigError("manifest " + path.string() + ": expected 4 columns", lineno);
    ObservationPair p;
    try {
      p.observed = load_image(resolve(cols[1]));
      if (!cols[0].empty()) p.clean = load_image(resolve(cols[0]));
      p.alpha = parse_double(cols[2]);
      p.seed = Seed{parse_int<std::uint64_t>(cols[3])};
    } catch (const ConfigError& e) {
      throw ConfigError("manifest " + path.string() + ": " + e.what(), lineno);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ObservationPair> eval_pairs(const ExperimentConfig& cfg, const ConvolutionOperator& op) {
  if (!cfg.manifest.empty()) return read_manifest(cfg.manifest);
  return build_splits(cfg, op).test;
}

Regularizer inference_regularizer(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  if (cfg.regularizer == RegularizerKind::smoothed_tv) return Regularizer::smoothed_tv(cfg.tv_lambda);
  if (checkpoint.empty()) {
    throw ConfigError(std::string("a checkpoint is required for regularizer ") + to_string(cfg.regularizer));
  }
  const NetArch arch = cfg.arch(cfg.regularizer);
  return Regularizer::network(arch, load_params(checkpoint, arch));
}

struct Reconstruction {
  SolveReport report;
  double seconds = 0.0;
};

Reconstruction reconstruct_pair(const ExperimentConfig& cfg, const Regularizer& reg, const ObservationPair& p,
                                const ConvolutionOperator& op, int index) {
  const Image y = normalized_measurement(p);
  const auto t0 = std::chrono::steady_clock::now();
  const Objective obj(KlFidelity(y, op), reg, cfg.md.a);
  const Image x0 = initialize(solver_init(cfg), y, op, derive(derive(cfg.seed, s_solver_init), std::uint64_t(index)));
  SolveOptions opt;
  if (p.clean.size() > 0) opt.reference = &p.clean;
  SolveReport rep = solve_fixed_point(obj, x0, cfg.md, opt);
  return {std::move(rep), elapsed(t0)};
}

void write_table(const fs::path& path, const std::vector<MetricsRow>& rows) {
  auto f = open_out(path);
  write_metrics_csv(f, rows);
}

}  // namespace

// ---------------------------------------------------------------- config

Kernel KernelSpec::build() const {
  switch (kind) {
    case KernelKind::gaussian: return Kernel::gaussian(size, sigma);
    case KernelKind::uniform: return Kernel::uniform(size);
    case KernelKind::delta: return Kernel::delta();
    case KernelKind::file: return load_kernel(path);
  }
  throw ConfigError("unknown kernel kind");
}

KernelSpec parse_kernel_spec(const std::string& text) {
  std::istringstream in(text);
  std::string kind;
  in >> kind;
  KernelSpec k;
  std::vector<std::string> args;
  for (std::string a; in >> a;) args.push_back(a);
  const auto want = [&](std::size_t n) {
    if (args.size() != n) throw ConfigError("kernel '" + text + "': expected " + std::to_string(n) + " argument(s)");
  };
  if (kind == "gaussian") {
    want(2);
    k.kind = KernelKind::gaussian;
    k.size = parse_int<int>(args[0]);
    k.sigma = parse_double(args[1]);
  } else if (kind == "uniform") {
    want(1);
    k.kind = KernelKind::uniform;
    k.size = parse_int<int>(args[0]);
  } else if (kind == "delta") {
    want(0);
    k.kind = KernelKind::delta;
    k.size = 1;
  } else if (kind == "file") {
    want(1);
    k.kind = KernelKind::file;
    k.path = args[0];
  } else {
    throw ConfigError("unknown kernel '" + kind + "' (gaussian, uniform, delta, file)");
  }
  return k;
}

std::string to_string(const KernelSpec& k) {
  switch (k.kind) {
    case KernelKind::gaussian: return "gaussian " + std::to_string(k.size) + " " + fmt(k.sigma);
    case KernelKind::uniform: return "uniform " + std::to_string(k.size);
    case KernelKind::delta: return "delta";
    case KernelKind::file: return "file " + k.path.string();
  }
  return {};
}

NetArch ExperimentConfig::arch(RegularizerKind kind) const {
  if (kind == RegularizerKind::scalar_net) {
    NetArch a = NetArch::deq_s();
    a.widths = deq_s_widths;
    return a;
  }
  if (kind == RegularizerKind::red) {
    NetArch a = NetArch::deq_red();
    a.widths = deq_red_widths;
    return a;
  }
  throw ConfigError("smoothed TV has no network architecture");
}

void ExperimentConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive and finite");
  if (!(tv_lambda >= 0.0)) throw ConfigError("tv.lambda must be >= 0");
  if (tv_grid.empty()) throw ConfigError("tv.grid must not be empty");
  for (double l : tv_grid)
    if (!(l >= 0.0)) throw ConfigError("tv.grid entries must be >= 0");
  if (rl_max_iters < 1) throw ConfigError("rl.max_iters must be >= 1");
  if (scenes < 1 || scene_size < 1 || patch < 1) throw ConfigError("data sizes must be >= 1");
  if (images.empty() && patch > scene_size) throw ConfigError("data.patch exceeds data.scene_size");
  if (n_train < 0 || n_val < 0 || n_test < 0) throw ConfigError("split sizes must be >= 0");
  if (kernel.kind != KernelKind::file && kernel.size < 1) throw ConfigError("kernel size must be >= 1");
  md.validate();
  train.validate();
  arch(RegularizerKind::scalar_net).validate();
  arch(RegularizerKind::red).validate();
}

ExperimentConfig ExperimentConfig::parse(std::istream& in) {
  std::map<std::string, const Field*> by_name;
  for (const auto& [name, f] : fields()) by_name[name] = &f;
  ExperimentConfig c;
  std::map<std::string, int> seen;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", lineno);
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = by_name.find(key);
    if (it == by_name.end()) throw ConfigError("unknown key '" + key + "'", lineno);
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw ConfigError("duplicate key '" + key + "' (first set on line " + std::to_string(prev->second) + ")",
                        lineno);
    }
    seen[key] = lineno;
    try {
      it->second->set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what(), lineno);
    } catch (const std::exception& e) {
      throw ConfigError(key + ": " + e.what(), lineno);
    }
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return parse(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void ExperimentConfig::write(std::ostream& out) const {
  for (const auto& [name, f] : fields()) out << name << " = " << f.get(*this) << '\n';
}

// ---------------------------------------------------------------- data

std::vector<Image> load_sources(const ExperimentConfig& cfg) {
  if (cfg.images.empty()) return synthetic_set(cfg.scenes, cfg.scene_size, cfg.scene_size, derive(cfg.seed, s_scenes));
  std::vector<Image> out;
  for (const auto& p : cfg.images) out.push_back(load_image(p, 1));
  return out;
}

Splits build_splits(const ExperimentConfig& cfg, const ConvolutionOperator& op) {
  const int total = cfg.n_train + cfg.n_val + cfg.n_test;
  const auto patches = crop_patches(load_sources(cfg), total, cfg.patch, derive(cfg.seed, s_crop));
  const auto part = [&](int from, int count) {
    return std::vector<Image>(patches.begin() + from, patches.begin() + from + count);
  };
  const NoiseConfig noise{cfg.alpha};
  return {make_dataset(part(0, cfg.n_train), op, noise, derive(cfg.seed, s_train_noise)),
          make_dataset(part(cfg.n_train, cfg.n_val), op, noise, derive(cfg.seed, s_val_noise)),
          make_dataset(part(cfg.n_train + cfg.n_val, cfg.n_test), op, noise, derive(cfg.seed, s_test_noise))};
}

// ---------------------------------------------------------------- tables

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << "method,image,psnr,ssim,iterations\n" << std::setprecision(17);
  for (const auto& r : rows) out << r.method << ',' << r.image << ',' << r.psnr << ',' << r.ssim << ',' << r.iterations << '\n';
}

void write_timing_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << "method,image,seconds\n" << std::setprecision(6);
  for (const auto& r : rows) out << r.method << ',' << r.image << ',' << r.seconds << '\n';
}

// ---------------------------------------------------------------- baselines

TvTuning tune_tv_lambda(const Image& y, const ConvolutionOperator& op, const Image& x_star,
                        const std::vector<double>& grid, const MdConfig& md) {
  if (grid.empty()) throw ConfigError("tune_tv_lambda: empty grid");
  InitSpec init;
  init.md = md;
  const Image x0 = initialize(init, y, op, Seed{0});
  std::optional<TvTuning> best;
  for (double lambda : grid) {
    const Objective obj(KlFidelity(y, op), Regularizer::smoothed_tv(lambda), md.a);
    SolveReport rep = solve_fixed_point(obj, x0, md);
    const double p = psnr(rep.x, x_star);
    const bool better = !best || p > best->psnr || (p == best->psnr && lambda < best->lambda);
    if (better) best = TvTuning{lambda, std::move(rep.x), p, rep.iterations()};
  }
  return *best;
}

Regularizer obtain_network(const ExperimentConfig& cfg, RegularizerKind kind, const fs::path& checkpoint,
                           const Splits& splits, const ConvolutionOperator& op, const fs::path& out_dir) {
  const NetArch arch = cfg.arch(kind);
  if (!checkpoint.empty()) return Regularizer::network(arch, load_params(checkpoint, arch));
  if (splits.train.empty() || splits.val.empty()) throw ConfigError("training needs data.train and data.val >= 1");

  const std::string name = to_string(kind);
  Regularizer reg = Regularizer::network(
      arch, init_params(arch, derive(cfg.seed, kind == RegularizerKind::red ? s_init_deq_red : s_init_deq_s)));
  fs::create_directories(out_dir);
  if (kind == RegularizerKind::red && cfg.pretrain) {
    std::vector<Image> clean;
    for (const auto& p : splits.train) clean.push_back(p.clean);
    const auto pre = pretrain_denoiser(clean, reg, cfg.pretrain_cfg, derive(cfg.seed, s_pretrain));
    reg.set_params(pre.theta);
    auto f = open_out(out_dir / (name + "_pretrain.csv"));
    f << "epoch,loss\n" << std::setprecision(17);
    for (std::size_t e = 0; e < pre.epoch_loss.size(); ++e) f << e + 1 << ',' << pre.epoch_loss[e] << '\n';
  }
  TrainConfig tc = cfg.train;
  tc.md = cfg.md;
  if (tc.checkpoint_every > 0) tc.checkpoint_dir = out_dir / (name + "_checkpoints");
  const TrainResult res = train(splits.train, splits.val, reg, op, tc);
  {
    auto f = open_out(out_dir / (name + "_train_log.csv"));
    res.log.write_csv(f, false);
  }
  save_params(res.best, arch, out_dir / (name + ".deqp"));
  reg.set_params(res.best);
  return reg;
}

// ---------------------------------------------------------------- commands

void cmd_simulate(const ExperimentConfig& cfg) {
  prepare_output(cfg);
  const Kernel k = cfg.kernel.build();
  const auto sources = load_sources(cfg);
  auto manifest = open_out(cfg.output / "manifest.csv");
  manifest << "clean_path,observed_path,alpha,seed\n";
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const ConvolutionOperator op(k, shape_of(sources[i]));
    const Seed s = derive(derive(cfg.seed, s_simulate), i);
    const Image y = sample_poisson(op.apply(sources[i]), {cfg.alpha}, s);
    const std::string id = std::to_string(i);
    save_image(sources[i], cfg.output / ("clean_" + id + ".deqf"));
    save_image(y, cfg.output / ("observed_" + id + ".deqf"));
    save_image(sources[i], cfg.output / ("clean_" + id + ".png"));
    save_image(y.with_data(y.array() / cfg.alpha), cfg.output / ("observed_" + id + ".png"));
    manifest << "clean_" << id << ".deqf,observed_" << id << ".deqf," << fmt(cfg.alpha) << ',' << s.value << '\n';
  }
}

void cmd_train(const ExperimentConfig& cfg) {
  if (cfg.regularizer == RegularizerKind::smoothed_tv) {
    throw ConfigError("regularizer tv has no learnable parameters; choose deq_s or deq_red");
  }
  prepare_output(cfg);
  const ConvolutionOperator op(cfg.kernel.build(), {cfg.patch, cfg.patch, 1});
  obtain_network(cfg, cfg.regularizer, {}, build_splits(cfg, op), op, cfg.output);
}

void cmd_reconstruct(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  const Regularizer reg = inference_regularizer(cfg, checkpoint);
  prepare_output(cfg);
  const Kernel k = cfg.kernel.build();
  const auto pairs = eval_pairs(cfg, ConvolutionOperator(k, {cfg.patch, cfg.patch, 1}));
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const ConvolutionOperator op(k, shape_of(pairs[i].observed));
    const auto r = reconstruct_pair(cfg, reg, pairs[i], op, int(i));
    const std::string id = std::to_string(i);
    save_image(r.report.x, cfg.output / ("recon_" + id + ".deqf"));
    save_image(r.report.x, cfg.output / ("recon_" + id + ".png"));
    {
      auto f = open_out(cfg.output / ("solve_" + id + ".csv"));
      r.report.write_csv(f, pairs[i].alpha);
    }
    if (pairs[i].clean.size() > 0) {
      rows.push_back(measure(to_string(cfg.regularizer), int(i), r.report.x, pairs[i].clean, r.report.iterations(),
                             r.seconds));
    }
  }
  if (!rows.empty()) write_table(cfg.output / "metrics.csv", rows);
}

void cmd_evaluate(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  const Regularizer reg = inference_regularizer(cfg, checkpoint);
  prepare_output(cfg);
  const Kernel k = cfg.kernel.build();
  const auto pairs = eval_pairs(cfg, ConvolutionOperator(k, {cfg.patch, cfg.patch, 1}));
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].clean.size() == 0) throw ConfigError("evaluate: image " + std::to_string(i) + " has no clean reference");
    const ConvolutionOperator op(k, shape_of(pairs[i].observed));
    rows.push_back(measure("observed", int(i), normalized_measurement(pairs[i]), pairs[i].clean, 0, 0.0));
    const auto r = reconstruct_pair(cfg, reg, pairs[i], op, int(i));
    rows.push_back(
        measure(to_string(cfg.regularizer), int(i), r.report.x, pairs[i].clean, r.report.iterations(), r.seconds));
  }
  write_table(cfg.output / "metrics.csv", rows);
  if (cfg.timing) {
    auto t = open_out(cfg.output / "timing.csv");
    write_timing_csv(t, rows);
  }
}

void cmd_benchmark(const ExperimentConfig& cfg) {
  prepare_output(cfg);
  const ConvolutionOperator op(cfg.kernel.build(), {cfg.patch, cfg.patch, 1});
  const Splits splits = build_splits(cfg, op);
  if (splits.test.empty()) throw ConfigError("benchmark needs data.test >= 1");

  const Regularizer deq_s =
      obtain_network(cfg, RegularizerKind::scalar_net, cfg.deq_s_checkpoint, splits, op, cfg.output);
  const Regularizer deq_red = obtain_network(cfg, RegularizerKind::red, cfg.deq_red_checkpoint, splits, op, cfg.output);

  std::vector<MetricsRow> rows;
  auto tuning = open_out(cfg.output / "tv_tuning.csv");
  tuning << "image,lambda,psnr\n" << std::setprecision(17);
  for (std::size_t i = 0; i < splits.test.size(); ++i) {
    const auto& p = splits.test[i];
    const int id = int(i);
    const Image y = normalized_measurement(p);
    rows.push_back(measure("observed", id, y, p.clean, 0, 0.0));

    auto t0 = std::chrono::steady_clock::now();
    const auto rl = richardson_lucy(y, op, cfg.rl_max_iters, std::nullopt, {&p.clean, true});
    const auto [k_best, x_rl] =
        best_iterate_selector(rl.iterates, p.clean, [](const Image& x, const Image& r) { return psnr(x, r); });
    rows.push_back(measure("rl_best", id, x_rl, p.clean, int(k_best) + 1, elapsed(t0)));
    if (i == 0) {
      auto f = open_out(cfg.output / "rl_image0.csv");
      rl.write_csv(f, p.alpha);
    }

    t0 = std::chrono::steady_clock::now();
    const auto tv = tune_tv_lambda(y, op, p.clean, cfg.tv_grid, cfg.md);
    rows.push_back(measure("tv_best", id, tv.x, p.clean, tv.iterations, elapsed(t0)));
    tuning << i << ',' << tv.lambda << ',' << tv.psnr << '\n';

    for (const auto* reg : {&deq_s, &deq_red}) {
      t0 = std::chrono::steady_clock::now();
      const auto rep = deq_forward(*reg, p, op, cfg.md, {&p.clean, false});
      rows.push_back(measure(to_string(reg->kind()), id, rep.x, p.clean, rep.iterations(), elapsed(t0)));
      if (i == 0) {
        auto f = open_out(cfg.output / (std::string("solve_") + to_string(reg->kind()) + "_image0.csv"));
        rep.write_csv(f, p.alpha);
      }
    }
  }

  // Rows were produced per image; order them by (method, image).
  const std::vector<std::string> order{"observed", "rl_best", "tv_best", "deq_s", "deq_red"};
  std::vector<MetricsRow> sorted;
  for (const auto& m : order)
    for (const auto& r : rows)
      if (r.method == m) sorted.push_back(r);
  write_table(cfg.output / "metrics.csv", sorted);
  if (cfg.timing) {
    auto f = open_out(cfg.output / "timing.csv");
    write_timing_csv(f, sorted);
  }
  {
    auto f = open_out(cfg.output / "summary.csv");
    f << "method,mean_psnr,mean_ssim,mean_iterations\n" << std::setprecision(17);
    for (const auto& m : order) {
      double ps = 0.0, ss = 0.0, it = 0.0;
      int n = 0;
      for (const auto& r : sorted) {
        if (r.method != m) continue;
        ps += r.psnr;
        ss += r.ssim;
        it += r.iterations;
        ++n;
      }
      f << m << ',' << ps / n << ',' << ss / n << ',' << it / n << '\n';
    }
  }
  {
    // Hyper-parameters tuned per image at inference, and learned weights.
    auto f = open_out(cfg.output / "parameters.csv");
    f << "method,tuned_at_inference,learned\n";
    f << "rl_best,1,0\n";
    f << "tv_best,1,0\n";
    f << "deq_s,0," << deq_s.params().size() << '\n';
    f << "deq_red,0," << deq_red.params().size() << '\n';
  }
  if (cfg.init_study) {
    auto f = open_out(cfg.output / "init_study.csv");
    f << "init,image,iterations,converged,psi,psnr\n" << std::setprecision(17);
    for (InitStrategy s :
         {InitStrategy::adjoint, InitStrategy::random_uniform, InitStrategy::tv_recon, InitStrategy::rl}) {
      ExperimentConfig c = cfg;
      c.init.strategy = s;
      for (std::size_t i = 0; i < splits.test.size(); ++i) {
        const auto& p = splits.test[i];
        const auto r = reconstruct_pair(c, deq_red, p, op, int(i));
        const double q = psnr(r.report.x, p.clean);
        check_finite(q, std::string("init study ") + to_string(s), int(i));
        f << to_string(s) << ',' << i << ',' << r.report.iterations() << ',' << (r.report.converged ? 1 : 0) << ','
          << (r.report.rows.empty() ? r.report.psi0 : r.report.rows.back().psi) << ',' << q << '\n';
      }
    }
  }
}

}  // namespace deqmd
