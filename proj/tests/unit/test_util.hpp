#pragma once

#include <cmath>
#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "lace/layout.hpp"
#include "lace/rng.hpp"
#include "lace/tape.hpp"

namespace lace::testing {

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Central differences of a scalar function of a matrix.
inline Eigen::MatrixXd numeric_grad(const std::function<double(const Eigen::MatrixXd&)>& f,
                                    Eigen::MatrixXd x, double h = 1e-5) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = f(x);
    x(i) = keep - h;
    const double down = f(x);
    x(i) = keep;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

/// Relative error of whole gradient arrays. `floor` bounds the denominator
/// from below so identically-zero gradients compare against FD noise.
inline double grad_rel_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric,
                             double floor = 1e-8) {
  const double scale = std::max({analytic.norm(), numeric.norm(), floor});
  return (analytic - numeric).norm() / scale;
}

using OpBuilder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

/// Worst relative gradient error over all inputs for loss = sum(W o f(inputs)).
inline double check_op(const OpBuilder& f, const std::vector<Eigen::MatrixXd>& inputs, Rng& rng) {
  Eigen::MatrixXd weights;
  {
    ad::Tape probe;
    std::vector<ad::Var> vars;
    for (const auto& x : inputs) vars.push_back(probe.constant(x));
    const ad::Var out = f(probe, vars);
    weights = rng.normal_matrix(probe.value(out).rows(), probe.value(out).cols());
  }
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
  tape.backward(f(tape, leaves), weights);

  double worst = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const auto loss = [&](const Eigen::MatrixXd& xk) {
      ad::Tape t;
      std::vector<ad::Var> vars;
      for (size_t i = 0; i < inputs.size(); ++i) vars.push_back(t.constant(i == k ? xk : inputs[i]));
      return t.value(f(t, vars)).cwiseProduct(weights).sum();
    };
    worst = std::max(worst, grad_rel_error(tape.grad(leaves[k]), numeric_grad(loss, inputs[k])));
  }
  return worst;
}

/// Overlap loss from cell counts on a uniform grid over [0, 1]^2.
inline double raster_overlap(const std::vector<Box>& boxes, double cell) {
  const int n = static_cast<int>(boxes.size());
  const int cells = static_cast<int>(std::round(1.0 / cell));
  auto inside = [](const Box& b, double x, double y) {
    return x >= b.cx - b.w / 2 && x < b.cx + b.w / 2 && y >= b.cy - b.h / 2 && y < b.cy + b.h / 2;
  };
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      long inter = 0, uni = 0;
      for (int a = 0; a < cells; ++a) {
        const double x = (a + 0.5) * cell;
        for (int b = 0; b < cells; ++b) {
          const double y = (b + 0.5) * cell;
          const bool pi = inside(boxes[i], x, y), pj = inside(boxes[j], x, y);
          inter += pi && pj;
          uni += pi || pj;
        }
      }
      const double iou = uni > 0 ? static_cast<double>(inter) / uni : 0.0;
      const double d = std::exp(-std::hypot(boxes[i].cx - boxes[j].cx, boxes[i].cy - boxes[j].cy));
      total += iou + (inter > 0 ? d : 0.0);
    }
  }
  return total / (n * (n - 1));
}

inline Layout random_layout(Rng& rng, const LayoutShape& shape, int n, Canvas canvas = {816, 1056}) {
  std::vector<Element> els;
  for (int i = 0; i < n; ++i) {
    const double w = rng.uniform(0.05, 0.5);
    const double h = rng.uniform(0.05, 0.5);
    els.push_back({rng.uniform_int(0, shape.num_classes - 1),
                   {rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h}});
  }
  return Layout::from_elements(shape, canvas, std::move(els));
}

/// Exhaustive within-category matching: best mean IoU over every
/// label-preserving permutation, summed in generated-element order.
inline double brute_force_max_iou(const Layout& gen, const Layout& ref) {
  const int n = gen.n_real();
  if (n == 0) return 1.0;
  std::map<int, std::vector<int>> g, r;
  for (int i = 0; i < n; ++i) g[gen[i].label].push_back(i);
  for (int i = 0; i < ref.n_real(); ++i) r[ref[i].label].push_back(i);
  auto iou = [](const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2));
    const double iy = std::max(0.0, std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
  };
  double total = 0.0;
  for (const auto& [label, gi] : g) {
    const auto& ri = r.at(label);
    std::vector<int> perm(gi.size());
    std::iota(perm.begin(), perm.end(), 0);
    double best = -1.0;
    do {
      double s = 0.0;
      for (size_t k = 0; k < gi.size(); ++k) s += iou(gen[gi[k]].box, ref[ri[static_cast<size_t>(perm[k])]].box);
      best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    total += best;
  }
  return total / n;
}

}  // namespace lace::testing
