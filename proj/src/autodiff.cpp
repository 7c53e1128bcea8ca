#include "deqmd/autodiff.hpp"

#include "deqmd/softplus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_set>

namespace deqmd::ad {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

Eigen::Index element_count(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), Eigen::Index(1), [](Eigen::Index a, int b) { return a * b; });
}

std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(Eigen::ArrayXd::Constant(element_count(shape), fill)) {}

Tensor::Tensor(Shape s, Eigen::ArrayXd d) : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != element_count(shape)) throw ShapeError("tensor data does not match shape " + to_string(shape));
}

double Tensor::item() const {
  if (data.size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape));
  return data[0];
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::variable(Tensor value) {
  nodes_.push_back({std::move(value), {}, {}, true});
  return Var(this, int(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, {}, false});
  return Var(this, int(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::vector<Var> parents, VjpFn vjp) {
  Node node;
  node.value = std::move(value);
  for (const Var& p : parents) {
    if (&p.tape() != this) throw std::logic_error("autodiff: mixing vars from different tapes");
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || p.requires_grad();
  }
  if (node.requires_grad) node.vjp = std::move(vjp);
  nodes_.push_back(std::move(node));
  return Var(this, int(nodes_.size() - 1));
}

int Tape::counter(const std::string& tag) const {
  const auto it = counters_.find(tag);
  return it == counters_.end() ? 0 : it->second;
}

std::vector<Var> Tape::gradient(const Var& output, std::span<const Var> wrt, std::optional<Var> seed) {
  const int out = output.id();
  std::unordered_set<int> targets;
  for (const Var& w : wrt) targets.insert(w.id());

  std::vector<char> relevant(std::size_t(out) + 1, 0);
  for (int i = 0; i <= out; ++i) {
    const Node& n = nodes_[std::size_t(i)];
    bool r = targets.count(i) > 0;
    if (!r && n.requires_grad) {
      for (int p : n.parents) r = r || (p <= out && relevant[std::size_t(p)]);
    }
    relevant[std::size_t(i)] = r;
  }

  std::vector<std::optional<Var>> grads(std::size_t(out) + 1);
  if (seed) {
    if (seed->value().shape != output.value().shape) throw ShapeError("gradient: seed shape mismatch");
    grads[std::size_t(out)] = *seed;
  } else {
    grads[std::size_t(out)] = constant(Tensor(output.value().shape, 1.0));
  }

  for (int i = out; i >= 0; --i) {
    auto& g = grads[std::size_t(i)];
    if (!g || !relevant[std::size_t(i)]) continue;
    const Node& n = nodes_[std::size_t(i)];
    if (n.parents.empty() || !n.vjp) continue;
    std::vector<bool> need(n.parents.size());
    bool any = false;
    for (std::size_t j = 0; j < n.parents.size(); ++j) {
      need[j] = relevant[std::size_t(n.parents[j])] != 0;
      any = any || need[j];
    }
    if (!any) continue;
    const Var cot = *g;
    const auto parent_cots = n.vjp(Var(this, i), cot, need);
    for (std::size_t j = 0; j < n.parents.size(); ++j) {
      if (!need[j] || !parent_cots[j]) continue;
      auto& pg = grads[std::size_t(n.parents[j])];
      pg = pg ? add(*pg, *parent_cots[j]) : *parent_cots[j];
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    const auto& g = w.id() <= out ? grads[std::size_t(w.id())] : std::optional<Var>{};
    result.push_back(g ? *g : constant(Tensor(w.value().shape, 0.0)));
  }
  return result;
}

namespace {

void require_same(const Var& a, const Var& b, const char* what) {
  if (a.value().shape != b.value().shape) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.value().shape) + " vs " +
                     to_string(b.value().shape));
  }
}

void require_image(const Tensor& t, const char* what) {
  if (t.shape.size() != 3) throw ShapeError(std::string(what) + ": expected [C,H,W], got " + to_string(t.shape));
}

using Cots = std::vector<std::optional<Var>>;

inline int wrap(int i, int n) {
  i %= n;
  return i < 0 ? i + n : i;
}

// cols[(ci*K + ky)*K + kx, r*W + c] = x[ci, r + ky - p, c + kx - p] (circular).
RowMatrix im2col(const Tensor& x, int K) {
  const int C = x.shape[0], H = x.shape[1], W = x.shape[2], p = K / 2;
  RowMatrix cols(Eigen::Index(C) * K * K, Eigen::Index(H) * W);
  for (int ci = 0; ci < C; ++ci) {
    const double* plane = x.data.data() + Eigen::Index(ci) * H * W;
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        double* dst = cols.row((Eigen::Index(ci) * K + ky) * K + kx).data();
        const int sc = wrap(kx - p, W);  // source column of output column 0
        for (int r = 0; r < H; ++r) {
          const double* src = plane + Eigen::Index(wrap(r + ky - p, H)) * W;
          double* d = dst + Eigen::Index(r) * W;
          std::memcpy(d, src + sc, sizeof(double) * std::size_t(W - sc));
          std::memcpy(d + (W - sc), src, sizeof(double) * std::size_t(sc));
        }
      }
    }
  }
  return cols;
}

// Scatter-add adjoint of im2col.
Tensor col2im(const RowMatrix& cols, int C, int H, int W, int K) {
  const int p = K / 2;
  Tensor out({C, H, W}, 0.0);
  for (int ci = 0; ci < C; ++ci) {
    double* plane = out.data.data() + Eigen::Index(ci) * H * W;
    for (int ky = 0; ky < K; ++ky) {
      for (int kx = 0; kx < K; ++kx) {
        const double* src = cols.row((Eigen::Index(ci) * K + ky) * K + kx).data();
        const int sc = wrap(kx - p, W);
        for (int r = 0; r < H; ++r) {
          double* dst = plane + Eigen::Index(wrap(r + ky - p, H)) * W;
          const double* s = src + Eigen::Index(r) * W;
          const int n1 = W - sc;
          for (int c = 0; c < n1; ++c) dst[sc + c] += s[c];
          for (int c = 0; c < sc; ++c) dst[c] += s[n1 + c];
        }
      }
    }
  }
  return out;
}

void check_conv(const Tensor& x, const Tensor& w, bool x_is_output) {
  require_image(x, "conv2d");
  if (w.shape.size() != 4 || w.shape[2] != w.shape[3] || w.shape[2] % 2 == 0) {
    throw ShapeError("conv2d: weights must be [Co,Ci,K,K] with odd K, got " + to_string(w.shape));
  }
  const int expect = x_is_output ? w.shape[0] : w.shape[1];
  if (x.shape[0] != expect) throw ShapeError("conv2d: channel mismatch " + to_string(x.shape) + " vs " + to_string(w.shape));
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w) {
  check_conv(x, w, false);
  const int Co = w.shape[0], Ci = w.shape[1], K = w.shape[2], H = x.shape[1], W = x.shape[2];
  const RowMatrix cols = im2col(x, K);
  Tensor out({Co, H, W});
  RowMap(out.data.data(), Co, Eigen::Index(H) * W).noalias() =
      ConstRowMap(w.data.data(), Co, Eigen::Index(Ci) * K * K) * cols;
  return out;
}

Tensor conv2d_transpose_forward(const Tensor& u, const Tensor& w) {
  check_conv(u, w, true);
  const int Co = w.shape[0], Ci = w.shape[1], K = w.shape[2], H = u.shape[1], W = u.shape[2];
  const RowMatrix cols = ConstRowMap(w.data.data(), Co, Eigen::Index(Ci) * K * K).transpose() *
                         ConstRowMap(u.data.data(), Co, Eigen::Index(H) * W);
  return col2im(cols, Ci, H, W, K);
}

Tensor conv2d_weight_grad_forward(const Tensor& x, const Tensor& u, int K) {
  require_image(x, "conv2d_weight_grad");
  require_image(u, "conv2d_weight_grad");
  if (x.shape[1] != u.shape[1] || x.shape[2] != u.shape[2]) throw ShapeError("conv2d_weight_grad: spatial mismatch");
  const int Ci = x.shape[0], Co = u.shape[0], H = x.shape[1], W = x.shape[2];
  const RowMatrix cols = im2col(x, K);
  Tensor out({Co, Ci, K, K});
  RowMap(out.data.data(), Co, Eigen::Index(Ci) * K * K).noalias() =
      ConstRowMap(u.data.data(), Co, Eigen::Index(H) * W) * cols.transpose();
  return out;
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  return a.tape().record(Tensor(a.shape(), a.value().data + b.value().data), {a, b},
                         [](const Var&, const Var& cot, const std::vector<bool>&) { return Cots{cot, cot}; });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  return a.tape().record(Tensor(a.shape(), a.value().data - b.value().data), {a, b},
                         [](const Var&, const Var& cot, const std::vector<bool>& need) {
                           return Cots{cot, need[1] ? std::optional<Var>(neg(cot)) : std::nullopt};
                         });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  return a.tape().record(Tensor(a.shape(), a.value().data * b.value().data), {a, b},
                         [a, b](const Var&, const Var& cot, const std::vector<bool>& need) {
                           Cots c(2);
                           if (need[0]) c[0] = mul(cot, b);
                           if (need[1]) c[1] = mul(cot, a);
                           return c;
                         });
}

Var div(const Var& a, const Var& b) {
  require_same(a, b, "div");
  return a.tape().record(Tensor(a.shape(), a.value().data / b.value().data), {a, b},
                         [b](const Var& self, const Var& cot, const std::vector<bool>& need) {
                           Cots c(2);
                           if (need[0]) c[0] = div(cot, b);
                           if (need[1]) c[1] = neg(mul(cot, div(self, b)));
                           return c;
                         });
}

Var neg(const Var& a) {
  return a.tape().record(Tensor(a.shape(), -a.value().data), {a},
                         [](const Var&, const Var& cot, const std::vector<bool>&) { return Cots{neg(cot)}; });
}

Var scale(const Var& a, double s) {
  return a.tape().record(Tensor(a.shape(), s * a.value().data), {a},
                         [s](const Var&, const Var& cot, const std::vector<bool>&) { return Cots{scale(cot, s)}; });
}

Var add_scalar(const Var& a, double s) {
  return a.tape().record(Tensor(a.shape(), a.value().data + s), {a},
                         [](const Var&, const Var& cot, const std::vector<bool>&) { return Cots{cot}; });
}

Var sqrt(const Var& a) {
  if ((a.value().data < 0.0).any()) throw DomainError("sqrt: negative input");
  return a.tape().record(Tensor(a.shape(), a.value().data.sqrt()), {a},
                         [](const Var& self, const Var& cot, const std::vector<bool>&) {
                           return Cots{div(scale(cot, 0.5), self)};
                         });
}

Var softplus(const Var& x, double beta) {
  if (!(beta > 0.0)) throw DomainError("softplus: beta must be > 0");
  Tensor out(x.shape(), x.value().data.unaryExpr([beta](double v) { return deqmd::softplus(v, beta); }));
  return x.tape().record(std::move(out), {x}, [x, beta](const Var&, const Var& cot, const std::vector<bool>&) {
    return Cots{mul(cot, sigmoid(x, beta))};
  });
}

Var sigmoid(const Var& x, double beta) {
  Tensor out(x.shape(), x.value().data.unaryExpr([beta](double v) { return softplus_derivative(v, beta); }));
  return x.tape().record(std::move(out), {x}, [beta](const Var& self, const Var& cot, const std::vector<bool>&) {
    // d sigma(beta x)/dx = beta s (1 - s)
    return Cots{mul(cot, scale(mul(self, add_scalar(neg(self), 1.0)), beta))};
  });
}

Var clamp(const Var& x, double lo, double hi) {
  const auto& v = x.value().data;
  Tensor mask(x.shape(), ((v > lo) && (v < hi)).cast<double>());
  Tensor out(x.shape(), v.max(lo).min(hi));
  Tape& tape = x.tape();
  return tape.record(std::move(out), {x},
                     [m = std::move(mask), &tape](const Var&, const Var& cot, const std::vector<bool>&) {
                       return Cots{mul(cot, tape.constant(m))};
                     });
}

Var sum(const Var& x) {
  Shape shape = x.shape();
  return x.tape().record(Tensor::scalar(x.value().data.sum()), {x},
                         [shape](const Var&, const Var& cot, const std::vector<bool>&) {
                           return Cots{broadcast(cot, shape)};
                         });
}

Var broadcast(const Var& s, const Shape& shape) {
  if (s.value().size() != 1) throw ShapeError("broadcast: expected a scalar");
  return s.tape().record(Tensor(shape, s.value().data[0]), {s},
                         [](const Var&, const Var& cot, const std::vector<bool>&) { return Cots{sum(cot)}; });
}

Var conv2d(const Var& x, const Var& w) {
  const int K = w.shape().size() == 4 ? w.shape()[2] : 0;
  return x.tape().record(conv2d_forward(x.value(), w.value()), {x, w},
                         [x, w, K](const Var&, const Var& cot, const std::vector<bool>& need) {
                           Cots c(2);
                           if (need[0]) c[0] = conv2d_transpose(cot, w);
                           if (need[1]) c[1] = conv2d_weight_grad(x, cot, K);
                           return c;
                         });
}

Var conv2d_transpose(const Var& u, const Var& w) {
  const int K = w.shape().size() == 4 ? w.shape()[2] : 0;
  return u.tape().record(conv2d_transpose_forward(u.value(), w.value()), {u, w},
                         [u, w, K](const Var&, const Var& cot, const std::vector<bool>& need) {
                           Cots c(2);
                           if (need[0]) c[0] = conv2d(cot, w);
                           if (need[1]) c[1] = conv2d_weight_grad(cot, u, K);
                           return c;
                         });
}

Var conv2d_weight_grad(const Var& x, const Var& u, int K) {
  return x.tape().record(conv2d_weight_grad_forward(x.value(), u.value(), K), {x, u},
                         [x, u](const Var&, const Var& cot, const std::vector<bool>& need) {
                           Cots c(2);
                           if (need[0]) c[0] = conv2d_transpose(u, cot);
                           if (need[1]) c[1] = conv2d(x, cot);
                           return c;
                         });
}

Var add_channel_bias(const Var& x, const Var& b) {
  const Tensor& xv = x.value();
  require_image(xv, "add_channel_bias");
  const int C = xv.shape[0], HW = xv.shape[1] * xv.shape[2];
  if (b.shape() != Shape{C}) throw ShapeError("add_channel_bias: bias must be [C]");
  Tensor out = xv;
  for (int c = 0; c < C; ++c) out.data.segment(Eigen::Index(c) * HW, HW) += b.value().data[c];
  return x.tape().record(std::move(out), {x, b}, [](const Var&, const Var& cot, const std::vector<bool>& need) {
    Cots c(2);
    c[0] = cot;
    if (need[1]) c[1] = sum_pixels(cot);
    return c;
  });
}

Var sum_pixels(const Var& x) {
  const Tensor& xv = x.value();
  require_image(xv, "sum_pixels");
  const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
  Tensor out({C});
  for (int c = 0; c < C; ++c) out.data[c] = xv.data.segment(Eigen::Index(c) * H * W, H * W).sum();
  return x.tape().record(std::move(out), {x}, [H, W](const Var&, const Var& cot, const std::vector<bool>&) {
    return Cots{broadcast_pixels(cot, H, W)};
  });
}

Var broadcast_pixels(const Var& b, int H, int W) {
  if (b.shape().size() != 1) throw ShapeError("broadcast_pixels: expected [C]");
  const int C = b.shape()[0];
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c) out.data.segment(Eigen::Index(c) * H * W, H * W).setConstant(b.value().data[c]);
  return b.tape().record(std::move(out), {b}, [](const Var&, const Var& cot, const std::vector<bool>&) {
    return Cots{sum_pixels(cot)};
  });
}

Var channel_slice(const Var& x, int c) {
  const Tensor& xv = x.value();
  require_image(xv, "channel_slice");
  const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
  if (c < 0 || c >= C) throw ShapeError("channel_slice: channel out of range");
  Tensor out({1, H, W}, Eigen::ArrayXd(xv.data.segment(Eigen::Index(c) * H * W, H * W)));
  return x.tape().record(std::move(out), {x}, [c, C](const Var&, const Var& cot, const std::vector<bool>&) {
    return Cots{channel_embed(cot, c, C)};
  });
}

Var channel_embed(const Var& x, int c, int C) {
  const Tensor& xv = x.value();
  require_image(xv, "channel_embed");
  if (xv.shape[0] != 1 || c < 0 || c >= C) throw ShapeError("channel_embed: expected [1,H,W] and valid channel");
  const int H = xv.shape[1], W = xv.shape[2];
  Tensor out({C, H, W}, 0.0);
  out.data.segment(Eigen::Index(c) * H * W, H * W) = xv.data;
  return x.tape().record(std::move(out), {x}, [c](const Var&, const Var& cot, const std::vector<bool>&) {
    return Cots{channel_slice(cot, c)};
  });
}

Var roll(const Var& x, int dr, int dc) {
  const Tensor& xv = x.value();
  require_image(xv, "roll");
  const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
  Tensor out(xv.shape);
  for (int ch = 0; ch < C; ++ch) {
    const double* src = xv.data.data() + Eigen::Index(ch) * H * W;
    double* dst = out.data.data() + Eigen::Index(ch) * H * W;
    for (int r = 0; r < H; ++r) {
      const double* srow = src + Eigen::Index(wrap(r + dr, H)) * W;
      for (int c = 0; c < W; ++c) dst[Eigen::Index(r) * W + c] = srow[wrap(c + dc, W)];
    }
  }
  return x.tape().record(std::move(out), {x}, [dr, dc](const Var&, const Var& cot, const std::vector<bool>&) {
    return Cots{roll(cot, -dr, -dc)};
  });
}

Var apply_operator(const Var& x, const ConvolutionOperator& op, bool adjoint) {
  const Tensor& xv = x.value();
  require_image(xv, "apply_operator");
  const Image img(xv.shape[1], xv.shape[2], xv.shape[0], xv.data);
  const Image out = adjoint ? op.adjoint(img) : op.apply(img);
  return x.tape().record(Tensor(xv.shape, out.array()), {x},
                         [&op, adjoint](const Var&, const Var& cot, const std::vector<bool>&) {
                           return Cots{apply_operator(cot, op, !adjoint)};
                         });
}

}  // namespace deqmd::ad
