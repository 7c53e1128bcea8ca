#include <cmath>

#include "doctest.h"
#include "deqmd/bregman.hpp"
#include "deqmd/poisson.hpp"

using namespace deqmd;

namespace {

Image random_positive(int h, int w, Rng& rng, double lo = 0.05, double hi = 2.0) {
  Image x(h, w, 1);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.array()[i] = lo + (hi - lo) * rng.uniform();
  return x;
}

Image scalar_image(double v) { return Image(1, 1, 1, v); }

Image row(std::initializer_list<double> v) {
  Image x(1, int(v.size()), 1);
  int i = 0;
  for (double e : v) x.array()[i++] = e;
  return x;
}

}  // namespace

TEST_CASE("potential values") {
  CHECK(potential_value(Potential::burg, Image(4, 4, 1, 1.0)) == 0.0);
  CHECK(potential_value(Potential::burg, Image(3, 5, 1, std::exp(1.0))) == doctest::Approx(-15.0).epsilon(1e-14));
  CHECK(potential_value(Potential::half_squared_norm, row({3.0, 4.0})) == 12.5);
  CHECK_THROWS_AS(potential_value(Potential::burg, row({1.0, 0.0})), DomainError);
}

TEST_CASE("mirror maps") {
  const Image u = mirror_map(Potential::burg, scalar_image(2.0));
  CHECK(u(0, 0) == -0.5);
  CHECK(inverse_mirror_map(Potential::burg, u)(0, 0) == 2.0);

  Rng rng(Seed{1});
  for (int t = 0; t < 50; ++t) {
    const Image x = random_positive(8, 8, rng, 1e-6, 10.0);
    const Image back = inverse_mirror_map(Potential::burg, mirror_map(Potential::burg, x));
    CHECK((back.array() - x.array()).abs().maxCoeff() <= 1e-12 * x.array().abs().maxCoeff());
  }
  CHECK_THROWS_AS(mirror_map(Potential::burg, row({1.0, -1.0})), DomainError);
  CHECK_THROWS_AS(mirror_map(Potential::burg, row({0.0})), DomainError);
  CHECK_THROWS_AS(inverse_mirror_map(Potential::burg, row({-1.0, 0.0})), DomainError);

  const Image x = row({-3.0, 2.0});
  CHECK((mirror_map(Potential::half_squared_norm, x).array() == x.array()).all());
  CHECK((inverse_mirror_map(Potential::half_squared_norm, x).array() == x.array()).all());
}

TEST_CASE("Bregman divergence") {
  CHECK(bregman_divergence(Potential::burg, scalar_image(1.0), scalar_image(2.0)) ==
        doctest::Approx(std::log(2.0) - 0.5).epsilon(1e-15));
  CHECK(std::log(2.0) - 0.5 == doctest::Approx(0.19315).epsilon(1e-5));
  CHECK(bregman_divergence(Potential::half_squared_norm, row({1.0, 2.0}), row({4.0, -2.0})) == 12.5);

  Rng rng(Seed{2});
  for (int t = 0; t < 1000; ++t) {
    const Image a = random_positive(3, 3, rng, 1e-4, 1.0);
    const Image b = random_positive(3, 3, rng, 1e-4, 1.0);
    CHECK(bregman_divergence(Potential::burg, a, a) == 0.0);
    CHECK(bregman_divergence(Potential::half_squared_norm, a, a) == 0.0);
    CHECK(bregman_divergence(Potential::burg, a, b) > 0.0);
    CHECK(bregman_divergence(Potential::half_squared_norm, a, b) > 0.0);
  }

  SUBCASE("matches the textbook definition") {
    const Image a = random_positive(4, 4, rng);
    const Image b = random_positive(4, 4, rng);
    const Image gb = mirror_map(Potential::burg, b);
    const double direct = potential_value(Potential::burg, a) - potential_value(Potential::burg, b) -
                          (gb.array() * (a.array() - b.array())).sum();
    CHECK(bregman_divergence(Potential::burg, a, b) == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("box Bregman prox under Burg entropy") {
  CHECK(box_bregman_prox(Potential::burg, scalar_image(0.5), 1.0)(0, 0) == 0.5);
  CHECK(box_bregman_prox(Potential::burg, scalar_image(3.0), 1.0)(0, 0) == 1.0);

  Rng rng(Seed{3});
  const Image inside = random_positive(5, 5, rng, 1e-3, 1.0);
  CHECK((box_bregman_prox(Potential::burg, inside, 1.0).array() == inside.array()).all());

  for (int t = 0; t < 1000; ++t) {
    const double a = 0.1 + 2.0 * rng.uniform();
    const Image x = random_positive(4, 4, rng, 1e-6, 3.0);
    const Image p = box_bregman_prox(Potential::burg, x, a);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.array()[i];
      const double euclid = v < 0.0 ? 0.0 : (v > a ? a : v);
      CHECK(p.array()[i] == euclid);
    }
  }
  CHECK_THROWS_AS(box_bregman_prox(Potential::burg, row({0.0}), 1.0), DomainError);
}

TEST_CASE("KL fidelity values") {
  Rng rng(Seed{4});
  const Image x = random_positive(8, 8, rng);
  const ConvolutionOperator op(Kernel::gaussian(5, 1.0), shape_of(x));
  const Image ax = op.apply(x);
  CHECK(std::abs(KlFidelity(ax, op).value(x)) < 1e-12);
  CHECK(KlFidelity(Image(8, 8, 1, 0.0), op).value(x) == doctest::Approx(ax.array().sum()).epsilon(1e-14));

  const auto id1 = ConvolutionOperator::identity({1, 1, 1});
  CHECK(KlFidelity(scalar_image(2.0), id1).value(scalar_image(1.0)) ==
        doctest::Approx(2.0 * std::log(2.0) - 1.0).epsilon(1e-15));
  CHECK(2.0 * std::log(2.0) - 1.0 == doctest::Approx(0.38629).epsilon(1e-5));

  // value >= 0 on Poisson data.
  const Image y = sample_poisson(ax, {50.0}, Seed{1});
  const Image yn = y.with_data(y.array() / 50.0);
  for (int t = 0; t < 20; ++t) CHECK(KlFidelity(yn, op).value(random_positive(8, 8, rng)) >= 0.0);
}

TEST_CASE("KL gradient") {
  const auto id1 = ConvolutionOperator::identity({1, 1, 1});
  CHECK(KlFidelity(scalar_image(2.0), id1).gradient(scalar_image(1.0))(0, 0) == -1.0);

  Rng rng(Seed{5});
  const Image x0 = random_positive(6, 6, rng);
  const ConvolutionOperator op(Kernel::gaussian(5, 1.0), shape_of(x0));
  CHECK(KlFidelity(op.apply(x0), op).gradient(x0).array().abs().maxCoeff() < 1e-12);

  // Central finite differences at random interior points.
  const Image y = sample_poisson(op.apply(x0), {40.0}, Seed{2});
  const KlFidelity f(y.with_data(y.array() / 40.0), op);
  for (int t = 0; t < 10; ++t) {
    const Image x = random_positive(6, 6, rng, 0.2, 1.0);
    const Image g = f.gradient(x);
    Image fd(6, 6, 1);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double h = 1e-6;
      Image xp = x, xm = x;
      xp.array()[i] += h;
      xm.array()[i] -= h;
      fd.array()[i] = (f.value(xp) - f.value(xm)) / (2 * h);
    }
    CHECK((g.array() - fd.array()).matrix().norm() <= 1e-5 * fd.array().matrix().norm());
  }
}

TEST_CASE("NoLip constant for KL") {
  CHECK(nolip_constant_kl(row({1.0, 2.0, 3.0})) == 6.0);
  CHECK(nolip_constant_kl(Image(3, 3, 1, 0.0)) == 0.0);
  Rng rng(Seed{6});
  const Image y = random_positive(4, 4, rng);
  CHECK(nolip_constant_kl(y.with_data(7.0 * y.array())) == doctest::Approx(7.0 * nolip_constant_kl(y)).epsilon(1e-14));
}

TEST_CASE("relative convexity of L h - KL") {
  Rng rng(Seed{7});
  const Image x0 = random_positive(6, 6, rng, 0.1, 1.0);
  const ConvolutionOperator op(Kernel::gaussian(5, 1.0), shape_of(x0));
  const Image counts = sample_poisson(op.apply(x0), {20.0}, Seed{3});
  const KlFidelity f(counts, op);
  const auto kl = [&](const Image& x) { return f.value(x); };
  const PositiveBox box{kPositivityFloor, 1.0, shape_of(x0)};

  const auto ok = check_relative_convexity(Potential::burg, kl, nolip_constant_kl(counts), box, 1000, Seed{1});
  CHECK(ok.trials == 1000);
  CHECK(ok.violations == 0);

  const auto bad = check_relative_convexity(Potential::burg, kl, 0.0, box, 200, Seed{2});
  CHECK(bad.violations > 0);

  const auto zero = check_relative_convexity(Potential::burg, [](const Image&) { return 0.0; }, 1.0, box, 500, Seed{3});
  CHECK(zero.violations == 0);
}
