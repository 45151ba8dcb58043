#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "isvi/approximation.hpp"
#include "support/test_support.hpp"

using namespace isvi;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

FactorizedApproxParams identity_params(std::initializer_list<double> mu,
                                       std::initializer_list<double> rho, int factor_size = 1) {
  std::vector<CoordinateTransform> t(mu.size(), CoordinateTransform::kIdentity);
  FactorizedApproxParams p = make_approx_params(t, factor_size);
  p.location = Eigen::Map<const Eigen::VectorXd>(std::data(mu), static_cast<Eigen::Index>(mu.size()));
  p.unconstrained_scale =
      Eigen::Map<const Eigen::VectorXd>(std::data(rho), static_cast<Eigen::Index>(rho.size()));
  return p;
}

}  // namespace

TEST_CASE("sample_epsilon is deterministic under a fixed seed") {
  RngStream a(42), b(42);
  const auto x = sample_epsilon(a, 3);
  const auto y = sample_epsilon(b, 3);
  REQUIRE(x.values == y.values);
  REQUIRE(x.values.size() == 3);
}

TEST_CASE("sample_epsilon rejects empty dimension") {
  RngStream rng(1);
  REQUIRE_THROWS_AS(sample_epsilon(rng, 0), std::invalid_argument);
}

TEST_CASE("sample_epsilon matches standard-normal moments at scale") {
  RngStream rng(2024);
  const auto eps = sample_epsilon(rng, 100000);
  const double mean = eps.values.mean();
  const double var = (eps.values.array() - mean).square().sum() / (eps.values.size() - 1.0);
  REQUIRE(mean > -0.02);
  REQUIRE(mean < 0.02);
  REQUIRE(var > 0.98);
  REQUIRE(var < 1.02);
}

TEST_CASE("forward applies the affine transform") {
  auto p = identity_params({0.0}, {0.0});
  REQUIRE_THAT(forward(p, {Eigen::VectorXd::Constant(1, 0.3)}).values[0], WithinAbs(0.3, 1e-15));

  auto q = identity_params({2.0}, {std::log(0.5)});
  REQUIRE_THAT(forward(q, {Eigen::VectorXd::Constant(1, -1.0)}).values[0], WithinAbs(1.5, 1e-12));
}

TEST_CASE("forward softplus at the origin gives ln 2") {
  auto p = make_approx_params({CoordinateTransform::kSoftplus}, 1, 0.0, 0.0);
  REQUIRE_THAT(forward(p, {Eigen::VectorXd::Zero(1)}).values[0],
               WithinAbs(std::log(2.0), 1e-12));
}

TEST_CASE("forward rejects dimension mismatch") {
  auto p = identity_params({0.0}, {0.0});
  REQUIRE_THROWS_AS(forward(p, {Eigen::VectorXd::Zero(2)}), std::invalid_argument);
}

TEST_CASE("inverse agrees with hand-computed cases") {
  auto p = identity_params({0.5}, {0.0});
  REQUIRE_THAT(inverse(p, {Eigen::VectorXd::Zero(1)}).values[0], WithinAbs(-0.5, 1e-15));

  auto soft = make_approx_params({CoordinateTransform::kSoftplus}, 1, 0.0, 0.0);
  REQUIRE_THAT(inverse(soft, {Eigen::VectorXd::Constant(1, std::log(2.0))}).values[0],
               WithinAbs(0.0, 1e-12));

  auto wide = identity_params({0.0}, {std::log(2.0)});
  REQUIRE_THAT(inverse(wide, {Eigen::VectorXd::Constant(1, 1.0)}).values[0],
               WithinAbs(0.5, 1e-15));
}

TEST_CASE("inverse reports the offending coordinate") {
  std::vector<CoordinateTransform> t = {CoordinateTransform::kIdentity,
                                        CoordinateTransform::kSoftplus};
  auto p = make_approx_params(t, 1);
  Eigen::VectorXd z(2);
  z << 0.5, -1.0;
  REQUIRE_THROWS_WITH(inverse(p, {z}), Catch::Matchers::ContainsSubstring("coordinate 1"));
}

TEST_CASE("round trip inverse(forward(eps)) == eps over random instances") {
  RngStream rng(11);
  const std::vector<std::vector<CoordinateTransform>> layouts = {
      {CoordinateTransform::kIdentity, CoordinateTransform::kIdentity,
       CoordinateTransform::kIdentity},
      {CoordinateTransform::kSoftplus, CoordinateTransform::kIdentity,
       CoordinateTransform::kSoftplus},
      {CoordinateTransform::kIdentity, CoordinateTransform::kStickBreaking,
       CoordinateTransform::kStickBreaking, CoordinateTransform::kStickBreaking,
       CoordinateTransform::kSoftplus},
  };
  for (const auto& layout : layouts) {
    for (int rep = 0; rep < 200; ++rep) {
      auto p = testing::random_params(rng, layout, 2);
      auto eps = sample_epsilon(rng, static_cast<int>(layout.size()));
      auto z = forward(p, eps);
      auto eps_back = inverse(p, z);
      for (Eigen::Index i = 0; i < eps.values.size(); ++i)
        REQUIRE_THAT(eps_back.values[i], WithinAbs(eps.values[i], 1e-10));
      auto z_back = forward(p, eps_back);
      for (Eigen::Index i = 0; i < z.values.size(); ++i)
        REQUIRE_THAT(z_back.values[i],
                     WithinAbs(z.values[i], 1e-10 * std::max(1.0, std::abs(z.values[i]))));
    }
  }
}

TEST_CASE("stick-breaking block yields a valid simplex prefix") {
  RngStream rng(3);
  const int block = 4;  // 5-simplex
  std::vector<CoordinateTransform> layout(block, CoordinateTransform::kStickBreaking);
  for (int rep = 0; rep < 200; ++rep) {
    auto p = testing::random_params(rng, layout, block);
    auto z = forward(p, sample_epsilon(rng, block));
    double total = 0.0;
    for (int i = 0; i < block; ++i) {
      REQUIRE(z.values[i] > 0.0);
      total += z.values[i];
    }
    REQUIRE(total < 1.0);
    const double implied = 1.0 - total;
    REQUIRE_THAT(total + implied, WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("base log density matches the standard normal and sums over factors") {
  auto p = identity_params({0.0}, {0.0});
  Eigen::VectorXd v = base_log_density_per_factor(p, {Eigen::VectorXd::Zero(1)});
  REQUIRE_THAT(v[0], WithinAbs(-0.9189385332046727, 1e-12));

  auto p2 = identity_params({0.0, 0.0}, {0.0, 0.0}, 2);
  v = base_log_density_per_factor(p2, {Eigen::VectorXd::Zero(2)});
  REQUIRE_THAT(v[0], WithinAbs(-1.8378770664093454, 1e-12));

  v = base_log_density_per_factor(p, {Eigen::VectorXd::Constant(1, 1.0)});
  REQUIRE_THAT(v[0], WithinAbs(-0.5 - 0.9189385332046727, 1e-12));
}

TEST_CASE("base log density is additive across factor partitions") {
  RngStream rng(17);
  std::vector<CoordinateTransform> layout(7, CoordinateTransform::kIdentity);
  for (int rep = 0; rep < 50; ++rep) {
    auto eps = sample_epsilon(rng, 7);
    double whole = 0.0;
    for (Eigen::Index i = 0; i < 7; ++i) whole += log_standard_normal(eps.values[i]);
    for (int factor_size : {1, 2, 3, 7}) {
      auto p = testing::random_params(rng, layout, factor_size);
      REQUIRE_THAT(base_log_density_per_factor(p, eps).sum(), WithinAbs(whole, 1e-12));
    }
  }
}

TEST_CASE("reparam_pullback hand-checked identity cases") {
  auto p = identity_params({0.0}, {0.0});
  auto g = reparam_pullback(p, {Eigen::VectorXd::Zero(1)}, Eigen::VectorXd::Constant(1, 1.0));
  REQUIRE_THAT(g.location[0], WithinAbs(1.0, 1e-15));
  REQUIRE_THAT(g.unconstrained_scale[0], WithinAbs(1.0, 1e-15));

  g = reparam_pullback(p, {Eigen::VectorXd::Constant(1, 2.0)}, Eigen::VectorXd::Constant(1, 0.5));
  REQUIRE_THAT(g.location[0], WithinAbs(0.5, 1e-15));
  REQUIRE_THAT(g.unconstrained_scale[0], WithinAbs(2.0, 1e-15));
}

TEST_CASE("reparam_pullback matches the finite-difference integrand gradient") {
  RngStream rng(23);
  const std::vector<std::vector<CoordinateTransform>> layouts = {
      std::vector<CoordinateTransform>(3, CoordinateTransform::kIdentity),
      {CoordinateTransform::kSoftplus, CoordinateTransform::kSoftplus,
       CoordinateTransform::kIdentity},
      {CoordinateTransform::kIdentity, CoordinateTransform::kStickBreaking,
       CoordinateTransform::kStickBreaking, CoordinateTransform::kStickBreaking},
  };
  for (const auto& layout : layouts) {
    const int d = static_cast<int>(layout.size());
    for (int rep = 0; rep < 100; ++rep) {
      auto p = testing::random_params(rng, layout, 2);
      auto eps = sample_epsilon(rng, d);
      // quadratic target with diagonal curvature; gradient known in closed form
      Eigen::VectorXd center(d), curvature(d);
      for (int i = 0; i < d; ++i) {
        center[i] = rng.normal();
        curvature[i] = 0.2 + rng.uniform();
      }
      const auto log_p = [&](const LatentVector& z) {
        return -0.5 * ((z.values - center).array().square() * curvature.array()).sum();
      };
      auto z = forward(p, eps);
      Eigen::VectorXd grad_z = -(z.values - center).array() * curvature.array();
      auto got = reparam_pullback(p, eps, grad_z);

      Eigen::VectorXd fd_loc, fd_scale;
      testing::integrand_fd_gradient(p, eps, log_p, 1e-6, fd_loc, fd_scale);
      for (int i = 0; i < d; ++i) {
        REQUIRE(testing::relative_error(got.location[i], fd_loc[i]) <= 1e-5);
        REQUIRE(testing::relative_error(got.unconstrained_scale[i], fd_scale[i]) <= 1e-5);
      }
    }
  }
}

TEST_CASE("log_q_density matches the closed-form Gaussian density") {
  RngStream rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    auto p = testing::random_params(
        rng, std::vector<CoordinateTransform>(4, CoordinateTransform::kIdentity), 1);
    auto eps = sample_epsilon(rng, 4);
    auto z = forward(p, eps);
    double want = 0.0;
    for (int i = 0; i < 4; ++i) {
      const double var = p.sigma(i) * p.sigma(i);
      want += -0.5 * (kLogTwoPi + std::log(var)) -
              0.5 * (z.values[i] - p.location[i]) * (z.values[i] - p.location[i]) / var;
    }
    REQUIRE_THAT(log_q_density(p, eps), WithinAbs(want, 1e-10));
  }
}

TEST_CASE("score_grad_log_q matches finite differences of log q at fixed z") {
  RngStream rng(37);
  const std::vector<std::vector<CoordinateTransform>> layouts = {
      std::vector<CoordinateTransform>(3, CoordinateTransform::kIdentity),
      {CoordinateTransform::kSoftplus, CoordinateTransform::kIdentity},
      {CoordinateTransform::kStickBreaking, CoordinateTransform::kStickBreaking,
       CoordinateTransform::kIdentity},
  };
  for (const auto& layout : layouts) {
    const int d = static_cast<int>(layout.size());
    for (int rep = 0; rep < 100; ++rep) {
      auto p = testing::random_params(rng, layout, 1);
      auto eps = sample_epsilon(rng, d);
      auto z = forward(p, eps);
      auto got = score_grad_log_q(p, eps);

      const double h = 1e-6;
      FactorizedApproxParams probe = p;
      for (int i = 0; i < d; ++i) {
        probe.location[i] = p.location[i] + h;
        const double up = log_q_density(probe, inverse(probe, z));
        probe.location[i] = p.location[i] - h;
        const double down = log_q_density(probe, inverse(probe, z));
        probe.location[i] = p.location[i];
        REQUIRE(testing::relative_error(got.location[i], (up - down) / (2 * h)) <= 1e-4);

        probe.unconstrained_scale[i] = p.unconstrained_scale[i] + h;
        const double up_s = log_q_density(probe, inverse(probe, z));
        probe.unconstrained_scale[i] = p.unconstrained_scale[i] - h;
        const double down_s = log_q_density(probe, inverse(probe, z));
        probe.unconstrained_scale[i] = p.unconstrained_scale[i];
        REQUIRE(testing::relative_error(got.unconstrained_scale[i], (up_s - down_s) / (2 * h)) <=
                1e-4);
      }
    }
  }
}

TEST_CASE("factor partition validation catches bad partitions") {
  std::vector<CoordinateTransform> t(3, CoordinateTransform::kIdentity);
  FactorizedApproxParams p = make_approx_params(t, 1);
  p.factor_partition = {{0, 1}, {1, 2}};
  REQUIRE_THROWS_AS(p.validate(), std::invalid_argument);
  p.factor_partition = {{0, 1}};
  REQUIRE_THROWS_AS(p.validate(), std::invalid_argument);
}
