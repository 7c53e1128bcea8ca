#pragma once

#include <Eigen/Core>

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deqmd/convolution.hpp"
#include "deqmd/errors.hpp"

// Minimal reverse-mode automatic differentiation over dense tensors.
//
// Every vector-Jacobian product is itself expressed with taped operations, so
// a gradient obtained from Tape::gradient is again a differentiable Var. This
// is what lets the fixed-point layer x -> f(x) be differentiated with
// respect to the network weights even though f contains grad_x R(x).
//
// The primitive set is closed under VJP: conv2d, conv2d_transpose and
// conv2d_weight_grad are the three bilinear faces of one convolution and map
// onto each other; pixel sums and broadcasts are mutual adjoints; the same
// holds for channel slicing/embedding and for the A / A^T pair.
namespace deqmd::ad {

using Shape = std::vector<int>;

struct Tensor {
  Shape shape;
  Eigen::ArrayXd data;

  Tensor() = default;
  Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, Eigen::ArrayXd d);

  static Tensor scalar(double v) { return Tensor({1}, v); }
  Eigen::Index size() const noexcept { return data.size(); }
  double item() const;
};

Eigen::Index element_count(const Shape& s);
std::string to_string(const Shape& s);

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  int id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Receives the node itself, its output cotangent and which parents need a
/// cotangent; returns one entry per parent (empty when not needed).
using VjpFn =
    std::function<std::vector<std::optional<Var>>(const Var& self, const Var& cot, const std::vector<bool>& need)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that gradients can be taken with respect to.
  Var variable(Tensor value);
  Var constant(Tensor value);

  Var record(Tensor value, std::vector<Var> parents, VjpFn vjp);

  /// Cotangents of `output` with respect to each of `wrt`. `seed` defaults
  /// to ones (the ordinary gradient for a scalar output). Results are Vars on
  /// this tape and can be differentiated again. A wrt entry that does not
  /// influence the output gets an all-zero constant.
  std::vector<Var> gradient(const Var& output, std::span<const Var> wrt, std::optional<Var> seed = std::nullopt);

  const Tensor& value(int id) const { return nodes_[std::size_t(id)].value; }
  bool requires_grad(int id) const { return nodes_[std::size_t(id)].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Caller-defined event counters (e.g. how many layer applications a tape holds).
  void count(const std::string& tag) { ++counters_[tag]; }
  int counter(const std::string& tag) const;

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    VjpFn vjp;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;  // deque: stable references while backward appends
  std::map<std::string, int> counters_;
};

// Elementwise arithmetic (shapes must match exactly).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sqrt(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

/// Softplus_beta(x) = log(1 + exp(beta x)) / beta.
Var softplus(const Var& x, double beta);
/// Logistic sigma(beta x), the derivative of softplus_beta.
Var sigmoid(const Var& x, double beta);

/// Clamp to [lo, hi]; derivative 1 strictly inside, 0 where clamped.
Var clamp(const Var& x, double lo, double hi);

/// Sum of all entries -> shape {1}.
Var sum(const Var& x);
/// Scalar {1} -> constant tensor of `shape`.
Var broadcast(const Var& s, const Shape& shape);

// Image tensors are [C, H, W]; conv weights [Co, Ci, K, K] with odd K,
// centered, circular padding, cross-correlation convention.
Var conv2d(const Var& x, const Var& w);
/// Adjoint of conv2d in its input: [Co,H,W] -> [Ci,H,W].
Var conv2d_transpose(const Var& u, const Var& w);
/// Gradient of <conv2d(x, w), u> in w.
Var conv2d_weight_grad(const Var& x, const Var& u, int kernel_size);

/// x[C,H,W] + b[C] broadcast over pixels.
Var add_channel_bias(const Var& x, const Var& b);
/// [C,H,W] -> [C].
Var sum_pixels(const Var& x);
/// [C] -> [C,H,W].
Var broadcast_pixels(const Var& b, int height, int width);

/// Channel c of [C,H,W] -> [1,H,W].
Var channel_slice(const Var& x, int c);
/// [1,H,W] into channel c of a zero [C,H,W].
Var channel_embed(const Var& x, int c, int channels);

/// Circular shift of every channel: out(r, c) = x(r + dr, c + dc).
Var roll(const Var& x, int dr, int dc);

/// Blur operator A (or A^T) from the forward model, on [C,H,W] tensors. The
/// operator must outlive the tape.
Var apply_operator(const Var& x, const ConvolutionOperator& op, bool adjoint = false);

// Direct tensor kernels shared with non-taped code.
Tensor conv2d_forward(const Tensor& x, const Tensor& w);
Tensor conv2d_transpose_forward(const Tensor& u, const Tensor& w);
Tensor conv2d_weight_grad_forward(const Tensor& x, const Tensor& u, int kernel_size);

}  // namespace deqmd::ad
