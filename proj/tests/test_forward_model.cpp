#include <complex>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "deqmd/convolution.hpp"
#include "deqmd/poisson.hpp"

using namespace deqmd;

namespace {

Image random_image(int h, int w, int c, Rng& rng) {
  Image x(h, w, c);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.array()[i] = rng.uniform();
  return x;
}

Kernel random_kernel(int rows, int cols, Rng& rng) {
  Kernel::Weights w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.uniform();
  return Kernel(w, int(rng.bits() % unsigned(rows)), int(rng.bits() % unsigned(cols)));
}

// Convolution theorem on a naive 2-D DFT; independent of the spatial loops.
Image dft_convolve(const Image& x, const Kernel& k) {
  using cd = std::complex<double>;
  const int H = x.height(), W = x.width();
  std::vector<cd> psf(std::size_t(H) * W, 0.0);
  for (int u = 0; u < k.rows(); ++u) {
    for (int v = 0; v < k.cols(); ++v) {
      const int r = ((u - k.anchor_row()) % H + H) % H;
      const int c = ((v - k.anchor_col()) % W + W) % W;
      psf[std::size_t(r) * W + c] += k.weights()(u, v);
    }
  }
  const auto dft = [&](const std::vector<cd>& in, double sign) {
    std::vector<cd> out(in.size());
    for (int p = 0; p < H; ++p) {
      for (int q = 0; q < W; ++q) {
        cd acc = 0.0;
        for (int r = 0; r < H; ++r) {
          for (int c = 0; c < W; ++c) {
            const double phase = sign * 2.0 * M_PI * (double(p * r) / H + double(q * c) / W);
            acc += in[std::size_t(r) * W + c] * std::polar(1.0, phase);
          }
        }
        out[std::size_t(p) * W + q] = acc;
      }
    }
    return out;
  };
  std::vector<cd> xs(std::size_t(H) * W);
  for (int i = 0; i < H * W; ++i) xs[std::size_t(i)] = x.array()[i];
  auto fx = dft(xs, -1.0);
  const auto fk = dft(psf, -1.0);
  for (std::size_t i = 0; i < fx.size(); ++i) fx[i] *= fk[i];
  const auto back = dft(fx, +1.0);
  Image out(H, W, 1);
  for (int i = 0; i < H * W; ++i) out.array()[i] = back[std::size_t(i)].real() / (H * W);
  return out;
}

}  // namespace

TEST_CASE("apply: delta and mass-preserving kernels") {
  Rng rng(Seed{1});
  const Image x = random_image(6, 5, 2, rng);
  const auto id = ConvolutionOperator::identity(shape_of(x));
  CHECK((id.apply(x).array() == x.array()).all());
  CHECK((id.adjoint(x).array() == x.array()).all());

  const Image c(8, 8, 1, 0.37);
  const ConvolutionOperator blur(Kernel::uniform(3), shape_of(c));
  CHECK((blur.apply(c).array() - 0.37).abs().maxCoeff() < 1e-15);
}

TEST_CASE("apply: 2x2 shift example matches direct summation") {
  Image x(2, 2, 1, 0.0);
  x(0, 0) = 1.0;
  Kernel::Weights w = Kernel::Weights::Zero(2, 2);
  w(0, 1) = 1.0;
  const ConvolutionOperator op(Kernel(w, 0, 0), shape_of(x));
  const Image y = op.apply(x);
  // Direct definition: y(r,c) = sum_{u,v} K(u,v) x(r-u, c-v) (mod 2).
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (int u = 0; u < 2; ++u)
        for (int v = 0; v < 2; ++v) acc += w(u, v) * x((r - u + 2) % 2, (c - v + 2) % 2);
      CHECK(y(r, c) == acc);
    }
  }
  CHECK(y(0, 1) == 1.0);
}

TEST_CASE("apply matches the DFT convolution-theorem oracle") {
  Rng rng(Seed{2});
  for (int trial = 0; trial < 5; ++trial) {
    const Image x = random_image(7, 6, 1, rng);
    const Kernel k = random_kernel(3 + trial % 2, 3, rng);
    const ConvolutionOperator op(k, shape_of(x));
    CHECK((op.apply(x).array() - dft_convolve(x, k).array()).abs().maxCoeff() < 1e-12);
  }
  // Kernel larger than the image wraps around.
  const Image x = random_image(4, 4, 1, rng);
  const Kernel g = Kernel::gaussian(11, 1.2);
  CHECK((ConvolutionOperator(g, shape_of(x)).apply(x).array() - dft_convolve(x, g).array()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("adjoint identity <Ax,y> = <x,A^T y>") {
  Rng rng(Seed{3});
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 4 + trial % 5, w = 4 + (trial * 3) % 6;
    const Image x = random_image(h, w, 1 + trial % 2, rng);
    const Image y = random_image(h, w, x.channels(), rng);
    const ConvolutionOperator op(random_kernel(3 + trial % 3, 3 + trial % 4, rng), shape_of(x));
    const double lhs = dot(op.apply(x), y);
    const double rhs = dot(x, op.adjoint(y));
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::abs(lhs));
  }
}

TEST_CASE("symmetric Gaussian kernel is self-adjoint") {
  Rng rng(Seed{4});
  const Image x = random_image(16, 16, 1, rng);
  const ConvolutionOperator op(Kernel::gaussian(11, 1.2), shape_of(x));
  CHECK(op.kernel().symmetric());
  CHECK((op.apply(x).array() - op.adjoint(x).array()).abs().maxCoeff() < 1e-14);
}

TEST_CASE("nonnegativity and row-sum positivity") {
  Rng rng(Seed{5});
  for (int trial = 0; trial < 10; ++trial) {
    const Image x = random_image(9, 9, 1, rng);
    const ConvolutionOperator op(random_kernel(3, 5, rng), shape_of(x));
    CHECK(op.apply(x).array().minCoeff() >= 0.0);
    CHECK(op.apply(Image(9, 9, 1, 1.0)).array().minCoeff() > 0.0);
  }
}

TEST_CASE("shape mismatch and invalid kernels") {
  const ConvolutionOperator op(Kernel::uniform(3), {4, 4, 1});
  CHECK_THROWS_AS(op.apply(Image(4, 5, 1)), ShapeError);
  CHECK_THROWS_AS(op.adjoint(Image(4, 4, 2)), ShapeError);
  Kernel::Weights neg = Kernel::Weights::Ones(2, 2);
  neg(0, 0) = -1.0;
  CHECK_THROWS_AS(Kernel(neg, 0, 0), DomainError);
  CHECK_THROWS_AS(Kernel(Kernel::Weights::Zero(3, 3)), DomainError);
}

TEST_CASE("kernel text format round trip") {
  const auto path = std::filesystem::temp_directory_path() / "deqmd_motion.txt";
  Rng rng(Seed{6});
  const Kernel k = random_kernel(4, 7, rng);
  save_kernel(k, path);
  const Kernel back = load_kernel(path);
  CHECK(back.anchor_row() == k.anchor_row());
  CHECK(back.anchor_col() == k.anchor_col());
  CHECK((back.weights() == k.weights()).all());
}

TEST_CASE("sample_poisson: zero mean, determinism, errors") {
  const Image zero(8, 8, 1, 0.0);
  CHECK((sample_poisson(zero, {100.0}, Seed{1}).array() == 0.0).all());

  Rng rng(Seed{7});
  const Image mean = random_image(8, 8, 1, rng);
  const Image a = sample_poisson(mean, {60.0}, Seed{9});
  const Image b = sample_poisson(mean, {60.0}, Seed{9});
  CHECK((a.array() == b.array()).all());
  CHECK_FALSE((a.array() == sample_poisson(mean, {60.0}, Seed{10}).array()).all());
  CHECK((a.array() == a.array().round()).all());

  Image neg = mean;
  neg(3, 3) = -0.1;
  CHECK_THROWS_AS(sample_poisson(neg, {60.0}, Seed{1}), DomainError);
}

TEST_CASE("sample_poisson: large-count statistics") {
  const Image mean(100, 100, 1, 1.0);
  const Image y = sample_poisson(mean, {1000.0}, Seed{21});
  const double n = double(y.size());
  const double m = y.array().mean();
  const double var = (y.array() - m).square().sum() / (n - 1.0);
  CHECK(std::abs(m - 1000.0) <= 3.0 * std::sqrt(1000.0 / 1e4) * 3.0);
  CHECK(var / m >= 0.9);
  CHECK(var / m <= 1.1);
}

TEST_CASE("sample_poisson: low and mid-count rates at 3 sigma") {
  for (double lambda : {0.5, 5.0, 50.0}) {
    const Image mean(400, 250, 1, lambda);
    const Image y = sample_poisson(mean, {1.0}, Seed{std::uint64_t(lambda * 10)});
    const double n = double(y.size());
    const double m = y.array().mean();
    const double var = (y.array() - m).square().sum() / (n - 1.0);
    CAPTURE(lambda);
    CHECK(std::abs(m - lambda) <= 3.0 * std::sqrt(lambda / n));
    CHECK(std::abs(var - lambda) <= 3.0 * std::sqrt((lambda + 2.0 * lambda * lambda) / n));
  }
}

TEST_CASE("make_dataset") {
  Rng rng(Seed{8});
  std::vector<Image> clean;
  for (int i = 0; i < 3; ++i) clean.push_back(random_image(8, 8, 1, rng));
  const ConvolutionOperator op(Kernel::gaussian(5, 1.0), {8, 8, 1});
  const auto pairs = make_dataset(clean, op, {100.0}, Seed{99});
  REQUIRE(pairs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(pairs[i].observed.same_shape(clean[i]));
    const Image replay = sample_poisson(op.apply(pairs[i].clean), {pairs[i].alpha}, pairs[i].seed);
    CHECK((replay.array() == pairs[i].observed.array()).all());
  }
  const auto again = make_dataset(clean, op, {100.0}, Seed{99});
  for (std::size_t i = 0; i < 3; ++i) CHECK((again[i].observed.array() == pairs[i].observed.array()).all());

  SUBCASE("mid-gray intensity") {
    const Image gray(32, 32, 1, 0.5);
    const ConvolutionOperator big(Kernel::gaussian(11, 1.2), {32, 32, 1});
    const auto p = make_dataset({gray}, big, {100.0}, Seed{5});
    const double m = normalized_measurement(p[0]).array().mean();
    CHECK(std::abs(m - 0.5) <= 0.02 * 0.5);
  }

  Image out_of_range(8, 8, 1, 1.5);
  CHECK_THROWS_AS(make_dataset({out_of_range}, op, {100.0}, Seed{1}), DomainError);
}
