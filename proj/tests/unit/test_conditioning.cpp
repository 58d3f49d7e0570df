#include <doctest.h>

#include <array>
#include <cmath>

#include "lace/conditioning.hpp"
#include "lace/error.hpp"
#include "test_util.hpp"

using namespace lace;

namespace {
const LayoutShape kShape{5, 25};

int fully_known_real_rows(const ConditionMask& m, int n_real) {
  int k = 0;
  for (int i = 0; i < n_real; ++i) k += m.row(i).minCoeff() == 1.0;
  return k;
}
}  // namespace

TEST_CASE("task names round trip") {
  for (TaskKind t : {TaskKind::kUncond, TaskKind::kClassToSizePos, TaskKind::kClassSizeToPos,
                     TaskKind::kCompletion, TaskKind::kRefinement}) {
    CHECK(parse_task(task_name(t)) == t);
  }
  CHECK_THROWS_AS(parse_task("bogus"), Error);
}

TEST_CASE("mask layouts per task") {
  Rng rng(1);
  const Layout l = testing::random_layout(rng, kShape, 10);
  CHECK(make_mask(TaskKind::kUncond, l, rng).isZero(0.0));

  const ConditionMask csz = make_mask(TaskKind::kClassSizeToPos, l, rng);
  for (int i = 0; i < 10; ++i) {
    for (int c = 0; c <= 5; ++c) CHECK(csz(i, c) == 1.0);
    CHECK(csz(i, 6) == 0.0);
    CHECK(csz(i, 7) == 0.0);
    CHECK(csz(i, 8) == 1.0);
    CHECK(csz(i, 9) == 1.0);
  }
  for (int i = 10; i < 25; ++i) CHECK(csz.row(i).minCoeff() == 1.0);

  const ConditionMask c = make_mask(TaskKind::kClassToSizePos, l, rng);
  for (int i = 0; i < 10; ++i) {
    CHECK(c.row(i).head(6).minCoeff() == 1.0);
    CHECK(c.row(i).tail(4).maxCoeff() == 0.0);
  }
  CHECK(make_mask(TaskKind::kRefinement, l, rng) == c);
}

TEST_CASE("completion keeps floor(f * n) elements") {
  Rng rng(2);
  const Layout l = testing::random_layout(rng, kShape, 10);
  const ConditionMask m = make_completion_mask(l, 0.17, rng);
  CHECK(fully_known_real_rows(m, 10) == 1);
  for (int i = 0; i < 10; ++i) CHECK((m.row(i).minCoeff() == 1.0 || m.row(i).maxCoeff() == 0.0));
  CHECK(fully_known_real_rows(make_completion_mask(l, 0.0, rng), 10) == 0);
  CHECK(fully_known_real_rows(make_completion_mask(l, 0.55, rng), 10) == 5);

  const Layout one = testing::random_layout(rng, kShape, 1);
  for (int k = 0; k < 20; ++k) {
    const ConditionMask d = make_mask(TaskKind::kCompletion, one, rng);
    CHECK(d.row(0).maxCoeff() == 0.0);
  }
}

TEST_CASE("apply_mask selects entries") {
  Rng rng(3);
  const StateVector x0{rng.normal_matrix(25, 10), 0};
  const StateVector xt{rng.normal_matrix(25, 10), 17};
  CHECK(apply_mask(ConditionMask::Ones(25, 10), x0, xt).values == x0.values);
  CHECK(apply_mask(ConditionMask::Zero(25, 10), x0, xt).values == xt.values);
  const Layout l = testing::random_layout(rng, kShape, 6);
  const ConditionMask m = make_mask(TaskKind::kClassSizeToPos, l, rng);
  const StateVector b = apply_mask(m, x0, xt);
  CHECK(b.timestep == 17);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    CHECK(b.values(i) == (m(i) == 1.0 ? x0.values(i) : xt.values(i)));
  }
}

TEST_CASE("refinement perturbation") {
  Rng rng(4);
  const Layout l = testing::random_layout(rng, kShape, 8);
  Rng zero_rng(5);
  CHECK(perturb_for_refinement(l, zero_rng, 0.0) == l);

  const Layout base = testing::random_layout(rng, kShape, 1);
  const int draws = 100000;
  double sum = 0, sq = 0;
  for (int k = 0; k < draws; ++k) {
    const Layout p = perturb_for_refinement(base, rng);
    CHECK_EQ(p[0].label, base[0].label);
    const double d = p[0].box.cx - base[0].box.cx;
    sum += d;
    sq += d * d;
  }
  const double var = sq / draws - (sum / draws) * (sum / draws);
  CHECK(std::abs(var - 0.01) < 3 * 0.01 * std::sqrt(2.0 / draws));
}

TEST_CASE("training task frequencies") {
  Rng rng(6);
  const Layout l = testing::random_layout(rng, kShape, 5);
  std::array<int, 5> counts{};
  const int draws = 10000;
  for (int k = 0; k < draws; ++k) counts[static_cast<size_t>(sample_training_mask(rng, l).task)]++;
  for (TaskKind t : {TaskKind::kUncond, TaskKind::kClassToSizePos, TaskKind::kClassSizeToPos,
                     TaskKind::kCompletion}) {
    CHECK(std::abs(counts[static_cast<size_t>(t)] / double(draws) - 0.25) <= 0.02);
  }
  CHECK(counts[static_cast<size_t>(TaskKind::kRefinement)] == 0);
}
