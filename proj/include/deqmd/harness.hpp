#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "deqmd/deq_train.hpp"

namespace deqmd {

enum class KernelKind { gaussian, uniform, delta, file };

struct KernelSpec {
  KernelKind kind = KernelKind::gaussian;
  int size = 11;
  double sigma = 1.2;
  std::filesystem::path path;

  Kernel build() const;
};

/// Flat "key = value" experiment description. '#' starts a comment.
struct ExperimentConfig {
  KernelSpec kernel;
  double alpha = 100.0;
  RegularizerKind regularizer = RegularizerKind::red;
  std::vector<int> deq_s_widths{16, 16, 8};
  std::vector<int> deq_red_widths{16, 16, 16, 16};
  double tv_lambda = 0.01;                                       // reconstruct/evaluate with tv
  std::vector<double> tv_grid{1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
  int rl_max_iters = 200;
  InitSpec init;
  MdConfig md;
  TrainConfig train;
  bool pretrain = true;  // DEQ-RED only
  PretrainConfig pretrain_cfg;

  std::vector<std::filesystem::path> images;  // empty: synthetic scenes
  int scenes = 32;
  int scene_size = 64;
  int patch = 32;
  int n_train = 20;
  int n_val = 6;
  int n_test = 6;
  std::filesystem::path manifest;
  std::filesystem::path deq_s_checkpoint;
  std::filesystem::path deq_red_checkpoint;
  bool init_study = true;
  bool timing = false;  // also write wall-clock timing.csv (not reproducible)

  Seed seed{0};
  std::filesystem::path output = "out";

  NetArch arch(RegularizerKind kind) const;
  void validate() const;

  static ExperimentConfig parse(std::istream& in);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Every key, one per line; parse(write(c)) == c.
  void write(std::ostream& out) const;
};

KernelSpec parse_kernel_spec(const std::string& text);
std::string to_string(const KernelSpec& k);

struct Splits {
  std::vector<ObservationPair> train, val, test;
};

/// Source images: config.images loaded as grayscale, or synthetic scenes.
std::vector<Image> load_sources(const ExperimentConfig& cfg);

/// Patches cropped from the sources, blurred and sampled, split in order.
Splits build_splits(const ExperimentConfig& cfg, const ConvolutionOperator& op);

struct MetricsRow {
  std::string method;
  int image = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  int iterations = 0;
  double seconds = 0.0;
};

/// method,image,psnr,ssim,iterations. Timing goes to a separate table so
/// this one stays byte-reproducible.
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
void write_timing_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

struct TvTuning {
  double lambda = 0.0;
  Image x;
  double psnr = 0.0;
  int iterations = 0;
};

/// Solves the KL + lambda TV problem for each lambda in the grid from the
/// adjoint start and keeps the best PSNR against x_star (smallest lambda on ties).
TvTuning tune_tv_lambda(const Image& y, const ConvolutionOperator& op, const Image& x_star,
                        const std::vector<double>& grid, const MdConfig& md = {});

/// DEQ regularizer for a kind: from the checkpoint when given, otherwise trained
/// on the config's splits (with optional pre-training). Writes the train log
/// and checkpoint to out_dir when it trains.
Regularizer obtain_network(const ExperimentConfig& cfg, RegularizerKind kind, const std::filesystem::path& checkpoint,
                           const Splits& splits, const ConvolutionOperator& op, const std::filesystem::path& out_dir);

void cmd_simulate(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_reconstruct(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint);
void cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint);
void cmd_benchmark(const ExperimentConfig& cfg);

}  // namespace deqmd
