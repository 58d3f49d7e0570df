#include <doctest.h>

#include <cmath>

#include "lace/error.hpp"
#include "lace/metrics.hpp"
#include "lace/postprocess.hpp"
#include "test_util.hpp"

using namespace lace;

namespace {
const LayoutShape kShape{5, 25};

Layout make(Canvas canvas, std::vector<Element> els) {
  return Layout::from_elements(kShape, canvas, std::move(els));
}
}  // namespace

TEST_CASE("canvas scaling") {
  Eigen::MatrixX4d b(1, 4);
  b << 0.3, 0.4, 0.2, 0.2;
  const Eigen::MatrixXd sq = scale_canvas_coords(b, {500, 500});
  Eigen::RowVectorXd expected(6);
  expected << 0.2, 0.3, 0.4, 0.3, 0.4, 0.5;
  CHECK((sq.row(0) - expected).cwiseAbs().maxCoeff() < 1e-15);
  const Eigen::MatrixXd portrait = scale_canvas_coords(b, {816, 1056});
  CHECK(portrait(0, 1) == doctest::Approx(0.3 * 816.0 / 1056.0).epsilon(1e-14));
  CHECK(816.0 / 1056.0 == doctest::Approx(0.7727).epsilon(1e-4));
  CHECK(portrait(0, 4) == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(PostConfig{}.delta == 0.015625);
}

TEST_CASE("alignment mask threshold") {
  const Canvas sq{100, 100};
  // Dyadic values: left edges differ by exactly delta.
  const double d = 1.0 / 64.0;
  const Layout l = make(sq, {{0, {0.375, 0.25, 0.25, 0.125}}, {1, {0.375 + d, 0.5, 0.25, 0.125}},
                             {2, {0.385, 0.75, 0.5, 0.125}}});
  const AlignmentMask m = infer_alignment_mask(l, d);
  CHECK(m.pairs[0](0, 1) == 0.0);  // difference equals delta
  CHECK(m.pairs[1](0, 2) == 1.0);  // centers 0.01 apart
  CHECK(m.pairs[1](2, 0) == 1.0);
  CHECK(m.pairs[1](0, 0) == 0.0);
  const Layout same = make(sq, {{0, {0.3, 0.2, 0.2, 0.1}}, {1, {0.3, 0.6, 0.2, 0.1}}});
  CHECK(infer_alignment_mask(same, 1e-12).pairs[0](0, 1) == 1.0);
}

TEST_CASE("aligned input is a fixed point") {
  const Layout l = make({816, 1056}, {{0, {0.3, 0.2, 0.2, 0.1}}, {1, {0.3, 0.6, 0.2, 0.1}}});
  const PostResult r = postprocess_layout(l, {});
  CHECK(r.layout == l);
  CHECK(r.final_loss == 0.0);
  CHECK(r.initial_loss == 0.0);
}

TEST_CASE("empty mask without overlap is the identity") {
  const Layout l = make({816, 1056}, {{0, {0.2, 0.2, 0.1, 0.1}}, {1, {0.7, 0.73, 0.33, 0.21}}});
  AlignmentMask empty;
  for (auto& p : empty.pairs) p = Eigen::MatrixXd::Zero(25, 25);
  CHECK(optimize_layout(l, empty, {}).layout == l);
  const Layout none = make({816, 1056}, {});
  CHECK(postprocess_layout(none, {}).layout == none);
}

TEST_CASE("a nearly aligned pair is equalized") {
  const Layout l = make({100, 100}, {{0, {0.40, 0.2, 0.2, 0.1}}, {1, {0.41, 0.7, 0.5, 0.2}}});
  const PostResult r = postprocess_layout(l, {});
  const double gap = std::abs(r.layout[0].box.cx - r.layout[1].box.cx);
  CHECK(gap < 1e-4);
  CHECK(std::abs(r.layout[0].box.cx - 0.40) <= 0.01);
  CHECK(std::abs(r.layout[1].box.cx - 0.41) <= 0.01);
  CHECK(r.final_loss < r.initial_loss);
  CHECK(r.layout.real_labels() == l.real_labels());
}

TEST_CASE("displacement bound and monotone objective on random layouts") {
  Rng rng(3);
  const PostConfig cfg;
  for (int k = 0; k < 50; ++k) {
    const Layout l = testing::random_layout(rng, kShape, rng.uniform_int(2, 12));
    const PostResult r = postprocess_layout(l, cfg);
    CHECK(r.final_loss <= r.initial_loss);
    CHECK(r.layout.n_real() == l.n_real());
    for (int i = 0; i < l.n_real(); ++i) {
      CHECK(r.layout[i].label == l[i].label);
      CHECK(std::abs(r.layout[i].box.cx - l[i].box.cx) <= 2 * cfg.delta + 1e-15);
      CHECK(std::abs(r.layout[i].box.cy - l[i].box.cy) <= 2 * cfg.delta + 1e-15);
      CHECK(std::abs(r.layout[i].box.w - l[i].box.w) <= 2 * cfg.delta + 1e-15);
      CHECK(std::abs(r.layout[i].box.h - l[i].box.h) <= 2 * cfg.delta + 1e-15);
    }
  }
}

TEST_CASE("overlap term reduces overlap") {
  const Layout l = make({100, 100}, {{0, {0.40, 0.4, 0.3, 0.3}}, {1, {0.5, 0.5, 0.3, 0.3}}});
  PostConfig cfg;
  cfg.use_overlap = true;
  const PostResult r = postprocess_layout(l, cfg);
  CHECK(r.final_loss < r.initial_loss);
  CHECK(overlap_metric({r.layout}) < overlap_metric({l}));
}

TEST_CASE("invalid config") {
  PostConfig cfg;
  cfg.delta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
