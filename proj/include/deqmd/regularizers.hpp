#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "deqmd/autodiff.hpp"
#include "deqmd/image.hpp"
#include "deqmd/random.hpp"

namespace deqmd {

inline constexpr double kTvEpsilon = 1e-6;

/// TV_eps(x) = sum_{i,j} sqrt(dx^2 + dy^2 + eps), forward differences with
/// circular wrap, summed over channels.
double tv_smoothed_value(const Image& x, double eps = kTvEpsilon);
Image tv_smoothed_grad(const Image& x, double eps = kTvEpsilon);
/// Same functional on a [C,H,W] tensor, recorded on the tape.
ad::Var tv_smoothed(const ad::Var& x, double eps = kTvEpsilon);

ad::Tensor to_tensor(const Image& x);
Image to_image(const ad::Tensor& t);

enum class RegularizerKind { smoothed_tv, scalar_net, red };

const char* to_string(RegularizerKind kind);
RegularizerKind regularizer_kind_from_string(const std::string& name);

struct ParamSlot {
  std::string name;
  ad::Shape shape;
  Eigen::Index offset = 0;
  Eigen::Index size() const { return ad::element_count(shape); }
};

struct ParamLayout {
  std::vector<ParamSlot> slots;
  Eigen::Index total() const { return slots.empty() ? 0 : slots.back().offset + slots.back().size(); }
  void append(std::string name, ad::Shape shape);
};

/// Flat theta with a layout naming each tensor's slice.
struct ParamVector {
  ParamLayout layout;
  Eigen::ArrayXd values;

  Eigen::Index size() const noexcept { return values.size(); }
  ad::Tensor tensor(std::size_t slot) const;
  ParamVector zeros_like() const { return {layout, Eigen::ArrayXd::Zero(values.size())}; }
};

/// Desk-scale network shapes for the learnable regularizers.
///  scalar_net: conv(1->w0) ... conv(->w_last), each followed by Softplus,
///    identity skip around any layer whose input and output widths agree,
///    global mean pooling, linear head to a scalar.
///  red: conv(1->w0) ... conv(->w_last) with Softplus, then conv(w_last->1)
///    producing the residual r; N(x) = x - r and R(x) = 0.5 ||r||^2.
struct NetArch {
  RegularizerKind kind = RegularizerKind::red;
  std::vector<int> widths;
  int kernel_size = 3;
  double beta = 100.0;

  static NetArch deq_s();
  static NetArch deq_red();

  /// Throws ConfigError on a non-smooth primitive or inconsistent shapes.
  void validate() const;
  std::vector<std::string> primitives() const;
  ParamLayout layout() const;
  std::string describe() const;
  /// FNV-1a of describe(); stored in checkpoints.
  std::uint64_t hash() const;
};

/// Primitives allowed in a learnable path. All are C-infinity.
const std::vector<std::string>& smooth_primitives();

/// He-normal conv weights, zero biases; the final layer is scaled by 0.1.
ParamVector init_params(const NetArch& arch, Seed seed);

class Regularizer {
 public:
  static Regularizer smoothed_tv(double lambda, double eps = kTvEpsilon);
  static Regularizer network(NetArch arch, ParamVector theta);

  RegularizerKind kind() const noexcept { return kind_; }
  bool learnable() const noexcept { return kind_ != RegularizerKind::smoothed_tv; }
  const NetArch& arch() const;
  const ParamVector& params() const noexcept { return theta_; }
  void set_params(ParamVector theta);
  double tv_lambda() const noexcept { return lambda_; }

  double value(const Image& x) const;
  Image grad_x(const Image& x) const;
  std::pair<double, Image> value_and_grad(const Image& x) const;

  /// N_theta(x); red only.
  Image denoise(const Image& x) const;

  /// One tape leaf per layout slot, trainable or constant.
  std::vector<ad::Var> param_vars(ad::Tape& tape, bool trainable) const;
  /// R(x) as a {1} tensor. x is [C,H,W]; channels are regularized independently.
  ad::Var record(ad::Tape& tape, const ad::Var& x, const std::vector<ad::Var>& theta) const;
  /// N(x) for red, recorded.
  ad::Var record_denoiser(ad::Tape& tape, const ad::Var& x, const std::vector<ad::Var>& theta) const;

  /// dR/dtheta scaled by a scalar cotangent.
  ParamVector vjp_params(const Image& x, double cotangent) const;
  /// d<grad_x R(x), u>/dtheta.
  ParamVector vjp_params(const Image& x, const Image& cotangent) const;

 private:
  Regularizer() = default;
  ad::Var record_channel(const ad::Var& x, const std::vector<ad::Var>& theta) const;
  ad::Var red_residual(const ad::Var& x, const std::vector<ad::Var>& theta) const;
  void require_net() const;

  RegularizerKind kind_ = RegularizerKind::smoothed_tv;
  double lambda_ = 0.0;
  double eps_ = kTvEpsilon;
  NetArch arch_;
  ParamVector theta_;
};

/// Concatenates per-slot gradients into a flat vector for `layout`.
ParamVector flatten(const ParamLayout& layout, const std::vector<ad::Var>& grads);

/// "DEQP" magic, u64 arch hash, u64 count, then count little-endian f64.
void save_params(const ParamVector& theta, const NetArch& arch, const std::filesystem::path& path);
ParamVector load_params(const std::filesystem::path& path, const NetArch& arch);

}  // namespace deqmd
