#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "lace/error.hpp"
#include "lace/schedule.hpp"
#include "test_util.hpp"

using namespace lace;

TEST_CASE("cumulative products of a constant schedule") {
  const NoiseSchedule s({0.02, 0.02, 0.02});
  CHECK(std::abs(s.alpha_bar(1) - 0.98) < 1e-15);
  CHECK(std::abs(s.alpha_bar(2) - 0.9604) < 1e-15);
  CHECK(std::abs(s.alpha_bar(3) - 0.941192) < 1e-15);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.posterior_variance(1) == 0.0);
  const NoiseSchedule lin = make_linear_schedule(1000);
  CHECK(lin.alpha_bar(1000) < lin.alpha_bar(1));
  CHECK(lin.beta(1) == doctest::Approx(1e-4));
  CHECK(lin.beta(1000) == doctest::Approx(0.02));
}

TEST_CASE("schedule JSON round trip preserves the hash") {
  const NoiseSchedule s = make_linear_schedule(50);
  const NoiseSchedule r = NoiseSchedule::from_json(s.to_json());
  CHECK(r.hash() == s.hash());
  CHECK(r.betas() == s.betas());
  CHECK(make_linear_schedule(51).hash() != s.hash());
}

TEST_CASE("q_sample special cases and predict_x0 inverse") {
  const NoiseSchedule s = make_linear_schedule(1000);
  Rng rng(3);
  const StateVector x0{rng.normal_matrix(25, 10), 0};
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(25, 10);
  const StateVector a = q_sample(x0, 400, zero, s);
  CHECK((a.values - std::sqrt(s.alpha_bar(400)) * x0.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.timestep == 400);
  for (int t : {1, 500, 1000}) {
    const Eigen::MatrixXd eps = rng.normal_matrix(25, 10);
    const StateVector xt = q_sample(x0, t, eps, s);
    CHECK((predict_x0(xt.values, eps, t, s) - x0.values).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((predict_x0(xt.values, zero, t, s) - xt.values / std::sqrt(s.alpha_bar(t)))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
  const StateVector far = q_sample(x0, 1000, rng.normal_matrix(25, 10), s);
  CHECK(std::sqrt(s.alpha_bar(1000)) < 0.01);
  CHECK(far.values.allFinite());
}

TEST_CASE("predict_x0 Jacobian matches finite differences") {
  const NoiseSchedule s = make_linear_schedule(1000);
  Rng rng(4);
  for (int t : {1, 37, 500, 1000}) {
    const Eigen::MatrixXd x = rng.normal_matrix(3, 4);
    const Eigen::MatrixXd eps = rng.normal_matrix(3, 4);
    const Eigen::MatrixXd w = rng.normal_matrix(3, 4);
    const auto f = [&](const Eigen::MatrixXd& e) { return predict_x0(x, e, t, s).cwiseProduct(w).sum(); };
    const Eigen::MatrixXd num = testing::numeric_grad(f, eps);
    const Eigen::MatrixXd ana = predict_x0_eps_jacobian(t, s) * w;
    CHECK(testing::grad_rel_error(ana, num) <= 1e-6);
    CHECK(predict_x0_eps_jacobian(t, s) ==
          doctest::Approx(-std::sqrt(1 - s.alpha_bar(t)) / std::sqrt(s.alpha_bar(t))));
  }
}

TEST_CASE("q_sample moments match the closed form") {
  const NoiseSchedule s = make_linear_schedule(1000);
  Rng rng(5);
  const int draws = 100000;
  Eigen::MatrixXd x0v(1, 3);
  x0v << 0.7, -0.2, 1.5;
  const StateVector x0{x0v, 0};
  const int t = 300;
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(3), sq = Eigen::ArrayXd::Zero(3);
  for (int k = 0; k < draws; ++k) {
    const Eigen::ArrayXd v = q_sample(x0, t, rng.normal_matrix(1, 3), s).values.row(0).transpose().array();
    sum += v;
    sq += v * v;
  }
  const double var = 1 - s.alpha_bar(t);
  for (int c = 0; c < 3; ++c) {
    const double mean = sum(c) / draws;
    const double emp_var = sq(c) / draws - mean * mean;
    CHECK(std::abs(mean - std::sqrt(s.alpha_bar(t)) * x0v(0, c)) < 3 * std::sqrt(var / draws));
    CHECK(std::abs(emp_var - var) < 3 * var * std::sqrt(2.0 / draws));
  }
}

TEST_CASE("ddpm step conventions") {
  const NoiseSchedule s({0.02, 0.02, 0.02});
  Rng rng(6);
  const StateVector x0{rng.normal_matrix(4, 3), 0};
  const Eigen::MatrixXd eps = rng.normal_matrix(4, 3);
  const StateVector x1 = q_sample(x0, 1, eps, s);
  const StateVector back = ddpm_step(x1, eps, s, Eigen::MatrixXd::Zero(4, 3));
  CHECK(back.timestep == 0);
  CHECK((back.values - x0.values).cwiseAbs().maxCoeff() < 1e-12);
  // t = 1 ignores the noise draw.
  const StateVector again = ddpm_step(x1, eps, s, rng.normal_matrix(4, 3));
  CHECK(again.values == back.values);

  // With the true noise the mean equals the posterior mean.
  const StateVector x3 = q_sample(x0, 3, eps, s);
  const StateVector m = ddpm_step(x3, eps, s, Eigen::MatrixXd::Zero(4, 3));
  const double ab = s.alpha_bar(3), ab_prev = s.alpha_bar(2);
  const Eigen::MatrixXd mu = std::sqrt(ab_prev) * s.beta(3) / (1 - ab) * x0.values +
                             std::sqrt(s.alpha(3)) * (1 - ab_prev) / (1 - ab) * x3.values;
  CHECK((m.values - mu).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ddim timesteps") {
  const auto ts = ddim_timesteps(1000, 100);
  REQUIRE(ts.size() == 100);
  CHECK(ts.front() == 1000);
  for (size_t i = 1; i + 1 < ts.size(); ++i) CHECK(ts[i - 1] - ts[i] == 10);
  CHECK(ts.back() == 1);
  CHECK(ddim_timesteps(1000, 1) == std::vector<int>{1000});
  CHECK(ddim_timesteps(24, 24).size() == 24);
  CHECK_THROWS_AS(ddim_timesteps(10, 0), Error);
}

TEST_CASE("blend copies known entries bit-exactly") {
  Rng rng(8);
  const Eigen::MatrixXd known = rng.normal_matrix(5, 4);
  const Eigen::MatrixXd x = rng.normal_matrix(5, 4);
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(5, 4);
  mask(1, 2) = mask(3, 0) = 1.0;
  const Eigen::MatrixXd b = blend_masked(mask, known, x);
  for (Eigen::Index i = 0; i < b.size(); ++i) CHECK(b(i) == (mask(i) > 0.5 ? known(i) : x(i)));
  CHECK(blend_masked(Eigen::MatrixXd::Ones(5, 4), known, x) == known);
  CHECK(blend_masked(Eigen::MatrixXd::Zero(5, 4), known, x) == x);
}

TEST_CASE("ddim with the true-noise oracle recovers x0") {
  const NoiseSchedule s = make_linear_schedule(1000);
  Rng rng(9);
  const Eigen::MatrixXd x0 = rng.normal_matrix(6, 3);
  // Oracle: the noise implied by x_t and the known x0.
  const NoisePredictor oracle = [&](const Eigen::MatrixXd& x, const std::vector<int>& t) {
    const double ab = s.alpha_bar(t[0]);
    return Eigen::MatrixXd((x - std::sqrt(ab) * x0) / std::sqrt(1 - ab));
  };
  const StateVector out = ddim_sample(oracle, s, {50, 0.0, 11}, 6, 3);
  CHECK((out.values - x0).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("ddim determinism and conditioning") {
  const NoiseSchedule s = make_linear_schedule(100);
  const NoisePredictor pred = [](const Eigen::MatrixXd& x, const std::vector<int>&) {
    return Eigen::MatrixXd(0.3 * x.array().sin());
  };
  const StateVector a = ddim_sample(pred, s, {20, 0.0, 1}, 5, 4);
  const StateVector b = ddim_sample(pred, s, {20, 0.0, 1}, 5, 4);
  CHECK(a.values == b.values);
  const StateVector c = ddim_sample(pred, s, {20, 0.0, 2}, 5, 4);
  CHECK(a.values != c.values);
  const StateVector d1 = ddim_sample(pred, s, {20, 1.0, 3}, 5, 4);
  const StateVector d2 = ddim_sample(pred, s, {20, 1.0, 3}, 5, 4);
  CHECK(d1.values == d2.values);

  Rng rng(10);
  const Eigen::MatrixXd known = rng.normal_matrix(5, 4);
  const StateVector full = ddim_sample(pred, s, {20, 0.0, 1}, 5, 4,
                                       Condition{Eigen::MatrixXd::Ones(5, 4), known});
  CHECK(full.values == known);
}
