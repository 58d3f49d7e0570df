#include "lace/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "lace/assignment.hpp"
#include "lace/constraints.hpp"
#include "lace/error.hpp"

namespace lace {

double alignment_metric(const std::vector<Layout>& layouts) {
  double total = 0.0;
  int counted = 0;
  for (const Layout& layout : layouts) {
    const int n = layout.n_real();
    if (n == 0) continue;
    total += local_alignment_loss(layout.real_boxes(), n).value / n;
    ++counted;
  }
  return counted == 0 ? 0.0 : 100.0 * total / counted;
}

namespace {

double pairwise_iou_sum(const Layout& layout) {
  double sum = 0.0;
  for (int i = 0; i < layout.n_real(); ++i) {
    for (int j = i + 1; j < layout.n_real(); ++j) sum += box_iou(layout[i].box, layout[j].box);
  }
  return sum;
}

}  // namespace

double overlap_metric(const std::vector<Layout>& layouts) {
  double total = 0.0;
  int counted = 0;
  for (const Layout& layout : layouts) {
    if (layout.n_real() == 0) continue;
    total += pairwise_iou_sum(layout) / layout.n_real();
    ++counted;
  }
  return counted == 0 ? 0.0 : 100.0 * total / counted;
}

MaxIouResult max_iou(const Layout& generated, const Layout& reference) {
  std::map<int, std::vector<int>> gen_groups, ref_groups;
  for (int i = 0; i < generated.n_real(); ++i) gen_groups[generated[i].label].push_back(i);
  for (int i = 0; i < reference.n_real(); ++i) ref_groups[reference[i].label].push_back(i);
  if (generated.n_real() != reference.n_real() || gen_groups.size() != ref_groups.size()) {
    return {0.0, true};
  }
  for (const auto& [label, idx] : gen_groups) {
    auto it = ref_groups.find(label);
    if (it == ref_groups.end() || it->second.size() != idx.size()) return {0.0, true};
  }
  if (generated.n_real() == 0) return {1.0, false};

  double total = 0.0;
  for (const auto& [label, gen_idx] : gen_groups) {
    const auto& ref_idx = ref_groups.at(label);
    const auto n = static_cast<Eigen::Index>(gen_idx.size());
    Eigen::MatrixXd cost(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        cost(i, j) = -box_iou(generated[gen_idx[static_cast<size_t>(i)]].box,
                              reference[ref_idx[static_cast<size_t>(j)]].box);
      }
    }
    const auto assign = solve_assignment(cost);
    double group = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) group -= cost(i, assign[static_cast<size_t>(i)]);
    total += group;
  }
  return {total / generated.n_real(), false};
}

double mean_max_iou(const std::vector<Layout>& generated, const std::vector<Layout>& reference,
                    int* mismatches) {
  const size_t n = std::min(generated.size(), reference.size());
  if (mismatches) *mismatches = 0;
  if (n == 0) return 0.0;
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const MaxIouResult r = max_iou(generated[i], reference[i]);
    total += r.score;
    if (r.mismatch && mismatches) ++*mismatches;
  }
  return total / static_cast<double>(n);
}

Eigen::VectorXd layout_summary(const Layout& layout) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kSummaryDim);
  const int n = layout.n_real();
  f(0) = n;
  if (n == 0) return f;
  const Eigen::MatrixX4d boxes = layout.real_boxes();
  const Eigen::RowVector4d mean = boxes.colwise().mean();
  const Eigen::RowVector4d sd =
      ((boxes.rowwise() - mean).array().square().colwise().sum() / n).sqrt();
  f.segment<4>(1) = mean.transpose();
  f.segment<4>(5) = sd.transpose();
  if (n > 1) f(9) = pairwise_iou_sum(layout) / (n * (n - 1) / 2.0);
  return f;
}

double frechet_distance(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a,
                        const Eigen::VectorXd& mu_b, const Eigen::MatrixXd& cov_b) {
  const auto d = mu_a.size();
  auto regularize = [d](Eigen::MatrixXd c) {
    c = 0.5 * (c + c.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < 1e-12) c += 1e-6 * Eigen::MatrixXd::Identity(d, d);
    return c;
  };
  const Eigen::MatrixXd a = regularize(cov_a);
  const Eigen::MatrixXd b = regularize(cov_b);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a);
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() *
                                 ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                                 ea.eigenvectors().transpose();
  // sqrt_a * b * sqrt_a is symmetric PSD and similar to a * b
  Eigen::MatrixXd middle = sqrt_a * b * sqrt_a;
  middle = 0.5 * (middle + middle.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(middle, Eigen::EigenvaluesOnly);
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_a - mu_b).squaredNorm() + a.trace() + b.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

double dist_distance(const std::vector<Layout>& set_a, const std::vector<Layout>& set_b) {
  if (set_a.empty() || set_b.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "dist_distance needs two non-empty sets");
  }
  auto fit = [](const std::vector<Layout>& set) {
    Eigen::MatrixXd feats(static_cast<Eigen::Index>(set.size()), kSummaryDim);
    for (size_t i = 0; i < set.size(); ++i) {
      feats.row(static_cast<Eigen::Index>(i)) = layout_summary(set[i]).transpose();
    }
    Eigen::VectorXd mu = feats.colwise().mean().transpose();
    Eigen::MatrixXd centered = feats.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(set.size());
    return std::pair{mu, cov};
  };
  const auto [mu_a, cov_a] = fit(set_a);
  const auto [mu_b, cov_b] = fit(set_b);
  return frechet_distance(mu_a, cov_a, mu_b, cov_b);
}

nlohmann::json EvalReport::to_json() const {
  return {{"alignment", alignment},
          {"overlap", overlap},
          {"max_iou", max_iou},
          {"dist_distance", dist_distance},
          {"n_layouts", n_layouts},
          {"max_iou_mismatches", max_iou_mismatches}};
}

EvalReport evaluate(const std::vector<Layout>& generated, const std::vector<Layout>& reference) {
  EvalReport r;
  r.n_layouts = static_cast<int>(generated.size());
  r.alignment = alignment_metric(generated);
  r.overlap = overlap_metric(generated);
  r.max_iou = mean_max_iou(generated, reference, &r.max_iou_mismatches);
  r.dist_distance = dist_distance(generated, reference);
  return r;
}

}  // namespace lace
