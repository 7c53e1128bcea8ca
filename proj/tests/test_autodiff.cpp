#include <functional>
#include <vector>

#include "doctest.h"
#include "deqmd/autodiff.hpp"
#include "deqmd/random.hpp"

using namespace deqmd;
using namespace deqmd::ad;

namespace {

Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

using Builder = std::function<Var(std::vector<Var>&)>;

// Checks reverse-mode cotangents of <f(inputs), w> against central differences.
void check_vjp(const std::vector<Tensor>& inputs, const Builder& f, double tol = 1e-6, double h = 1e-6) {
  Rng rng(Seed{123});
  Tensor w;
  std::vector<Var> in;
  Tape tape;
  for (const auto& t : inputs) in.push_back(tape.variable(t));
  const Var out = f(in);
  w = random_tensor(out.shape(), rng);
  const auto grads = tape.gradient(out, in, tape.constant(w));

  const auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t2;
    std::vector<Var> v;
    for (const auto& t : xs) v.push_back(t2.constant(t));
    return (f(v).value().data * w.data).sum();
  };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Eigen::ArrayXd fd(inputs[k].size());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto xp = inputs, xm = inputs;
      xp[k].data[i] += h;
      xm[k].data[i] -= h;
      fd[i] = (eval(xp) - eval(xm)) / (2 * h);
    }
    const double err = (grads[k].value().data - fd).matrix().norm();
    CAPTURE(k);
    CHECK(err <= tol * std::max(1.0, fd.matrix().norm()));
  }
}

// Direct-loop convolution oracle, independent of im2col/GEMM.
Tensor conv_loops(const Tensor& x, const Tensor& w) {
  const int Ci = x.shape[0], H = x.shape[1], W = x.shape[2], Co = w.shape[0], K = w.shape[2], p = K / 2;
  Tensor out({Co, H, W}, 0.0);
  for (int co = 0; co < Co; ++co)
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        double acc = 0.0;
        for (int ci = 0; ci < Ci; ++ci)
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              const int rr = ((r + ky - p) % H + H) % H, cc = ((c + kx - p) % W + W) % W;
              acc += w.data[((co * Ci + ci) * K + ky) * K + kx] * x.data[(ci * H + rr) * W + cc];
            }
        out.data[(co * H + r) * W + c] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches direct loops") {
  Rng rng(Seed{1});
  for (int K : {1, 3, 5}) {
    const Tensor x = random_tensor({3, 5, 7}, rng);
    const Tensor w = random_tensor({4, 3, K, K}, rng);
    CHECK((conv2d_forward(x, w).data - conv_loops(x, w).data).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv faces are mutually adjoint") {
  Rng rng(Seed{2});
  const Tensor x = random_tensor({3, 6, 5}, rng);
  const Tensor w = random_tensor({2, 3, 3, 3}, rng);
  const Tensor u = random_tensor({2, 6, 5}, rng);
  const double a = (conv2d_forward(x, w).data * u.data).sum();
  CHECK(a == doctest::Approx((x.data * conv2d_transpose_forward(u, w).data).sum()).epsilon(1e-12));
  CHECK(a == doctest::Approx((w.data * conv2d_weight_grad_forward(x, u, 3).data).sum()).epsilon(1e-12));
}

TEST_CASE("elementwise VJPs") {
  Rng rng(Seed{3});
  const Tensor a = random_tensor({2, 3, 3}, rng), b = random_tensor({2, 3, 3}, rng, 0.5, 2.0);
  check_vjp({a, b}, [](auto& v) { return add(v[0], v[1]); });
  check_vjp({a, b}, [](auto& v) { return sub(v[0], v[1]); });
  check_vjp({a, b}, [](auto& v) { return mul(v[0], v[1]); });
  check_vjp({a, b}, [](auto& v) { return div(v[0], v[1]); });
  check_vjp({a}, [](auto& v) { return scale(neg(add_scalar(v[0], 2.0)), 3.0); });
  check_vjp({b}, [](auto& v) { return sqrt(v[0]); });
  check_vjp({a}, [](auto& v) { return softplus(v[0], 5.0); });
  check_vjp({a}, [](auto& v) { return sigmoid(v[0], 3.0); });
  check_vjp({b}, [](auto& v) { return clamp(v[0], 0.9, 1.5); });
  check_vjp({a}, [](auto& v) { return broadcast(sum(v[0]), {4}); });
}

TEST_CASE("structural VJPs") {
  Rng rng(Seed{4});
  const Tensor x = random_tensor({3, 4, 5}, rng);
  const Tensor w = random_tensor({2, 3, 3, 3}, rng);
  const Tensor u = random_tensor({2, 4, 5}, rng);
  check_vjp({x, w}, [](auto& v) { return conv2d(v[0], v[1]); });
  check_vjp({u, w}, [](auto& v) { return conv2d_transpose(v[0], v[1]); });
  check_vjp({x, u}, [](auto& v) { return conv2d_weight_grad(v[0], v[1], 3); });
  check_vjp({x, random_tensor({3}, rng)}, [](auto& v) { return add_channel_bias(v[0], v[1]); });
  check_vjp({x}, [](auto& v) { return sum_pixels(v[0]); });
  check_vjp({random_tensor({3}, rng)}, [](auto& v) { return broadcast_pixels(v[0], 2, 3); });
  check_vjp({x}, [](auto& v) { return channel_slice(v[0], 1); });
  check_vjp({random_tensor({1, 4, 5}, rng)}, [](auto& v) { return channel_embed(v[0], 2, 3); });
  check_vjp({x}, [](auto& v) { return roll(v[0], 1, -2); });
  const ConvolutionOperator op(Kernel::gaussian(3, 0.8), {4, 5, 3});
  check_vjp({x}, [&op](auto& v) { return apply_operator(v[0], op); });
  check_vjp({x}, [&op](auto& v) { return apply_operator(v[0], op, true); });
}

TEST_CASE("gradients are differentiable (second order)") {
  // f(x, w) = sum softplus(conv(x, w)); g = df/dx; check d<g, c>/dw against differences.
  Rng rng(Seed{5});
  const Tensor x = random_tensor({1, 5, 5}, rng);
  const Tensor w = random_tensor({3, 1, 3, 3}, rng);
  const Tensor c = random_tensor({1, 5, 5}, rng);
  const auto grad_dot = [&](const Tensor& wv, bool want_w_grad, Tensor* w_grad) {
    Tape tape;
    const Var xv = tape.variable(x);
    const Var wvar = tape.variable(wv);
    const Var f = sum(softplus(conv2d(xv, wvar), 4.0));
    const Var g = tape.gradient(f, std::vector<Var>{xv})[0];
    const Var s = sum(mul(g, tape.constant(c)));
    if (want_w_grad) *w_grad = tape.gradient(s, std::vector<Var>{wvar})[0].value();
    return s.value().item();
  };
  Tensor analytic;
  grad_dot(w, true, &analytic);
  Eigen::ArrayXd fd(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Tensor wp = w, wm = w;
    wp.data[i] += 1e-6;
    wm.data[i] -= 1e-6;
    fd[i] = (grad_dot(wp, false, nullptr) - grad_dot(wm, false, nullptr)) / 2e-6;
  }
  CHECK((analytic.data - fd).matrix().norm() <= 1e-6 * fd.matrix().norm());
}

TEST_CASE("unrelated inputs get zero gradients; counters") {
  Tape tape;
  const Var a = tape.variable(Tensor({2}, 1.0));
  const Var b = tape.variable(Tensor({3}, 2.0));
  const Var s = sum(mul(a, a));
  const auto g = tape.gradient(s, std::vector<Var>{a, b});
  CHECK((g[0].value().data == 2.0).all());
  CHECK((g[1].value().data == 0.0).all());
  tape.count("layer");
  CHECK(tape.counter("layer") == 1);
  CHECK(tape.counter("other") == 0);
  CHECK_THROWS_AS(add(a, b), ShapeError);
}
