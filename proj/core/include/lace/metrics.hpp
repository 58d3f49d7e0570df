#pragma once

#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "lace/layout.hpp"

namespace lace {

/// Mean over layouts of 100 * local alignment loss / n_real. Layouts without
/// elements are skipped.
double alignment_metric(const std::vector<Layout>& layouts);

/// Mean over layouts of 100 * (sum of IoU over unordered pairs) / n_real.
double overlap_metric(const std::vector<Layout>& layouts);

struct MaxIouResult {
  double score = 0.0;
  bool mismatch = false;  // category multisets differ
};

/// Mean IoU under the best one-to-one matching within each category.
MaxIouResult max_iou(const Layout& generated, const Layout& reference);

/// Mean of max_iou over index-aligned pairs.
double mean_max_iou(const std::vector<Layout>& generated, const std::vector<Layout>& reference,
                    int* mismatches = nullptr);

inline constexpr int kSummaryDim = 10;

/// Per-layout summary: n_real, mean and std of cx, cy, w, h, mean pairwise IoU.
Eigen::VectorXd layout_summary(const Layout& layout);

/// Frechet distance between Gaussian fits of layout summaries. This is a
/// lightweight distribution distance, not an Inception-feature FID.
double dist_distance(const std::vector<Layout>& set_a, const std::vector<Layout>& set_b);

/// Frechet distance between two Gaussians given mean and covariance.
double frechet_distance(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a,
                        const Eigen::VectorXd& mu_b, const Eigen::MatrixXd& cov_b);

struct EvalReport {
  double alignment = 0.0;
  double overlap = 0.0;
  double max_iou = 0.0;
  double dist_distance = 0.0;
  int n_layouts = 0;
  int max_iou_mismatches = 0;

  nlohmann::json to_json() const;
};

EvalReport evaluate(const std::vector<Layout>& generated, const std::vector<Layout>& reference);

}  // namespace lace
