#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "lace/layout.hpp"

namespace lace {

/// Variance schedule beta_1..beta_T with the derived products. Arrays are
/// indexed by timestep; index 0 holds the t = 0 convention (alpha_bar = 1).
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);

  int steps() const { return static_cast<int>(betas_.size()) - 1; }
  double beta(int t) const { return betas_.at(static_cast<size_t>(t)); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bars_.at(static_cast<size_t>(t)); }
  double posterior_variance(int t) const { return posterior_vars_.at(static_cast<size_t>(t)); }

  /// beta_1..beta_T (no t = 0 slot).
  std::vector<double> betas() const { return {betas_.begin() + 1, betas_.end()}; }

  /// CRC32 over the little-endian beta bytes; stored in checkpoints.
  std::uint32_t hash() const;

  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::vector<double> posterior_vars_;
};

NoiseSchedule make_linear_schedule(int steps, double beta_start = 1e-4, double beta_end = 0.02);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
StateVector q_sample(const StateVector& x0, int t, const Eigen::MatrixXd& noise,
                     const NoiseSchedule& schedule);

/// One forward Markov step q(x_t | x_{t-1}).
StateVector q_step(const StateVector& x_prev, const Eigen::MatrixXd& noise,
                   const NoiseSchedule& schedule);

/// Clean-data estimate from a noisy state and predicted noise.
Eigen::MatrixXd predict_x0(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& eps_hat, int t,
                           const NoiseSchedule& schedule);

/// d predict_x0 / d eps_hat (a scalar multiple of the identity).
double predict_x0_eps_jacobian(int t, const NoiseSchedule& schedule);

/// Ancestral DDPM step to t-1. No noise is added when t = 1.
StateVector ddpm_step(const StateVector& x_t, const Eigen::MatrixXd& eps_hat,
                      const NoiseSchedule& schedule, const Eigen::MatrixXd& noise_draw);

/// Batched noise predictor: rows are stacked per item (items * L rows); one
/// timestep per item.
using NoisePredictor =
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd& x, const std::vector<int>& t)>;

struct SamplerConfig {
  int num_steps = 100;
  double eta = 0.0;
  std::uint64_t seed = 0;
};

/// Strictly decreasing timesteps, uniform stride, last step forced to 1.
std::vector<int> ddim_timesteps(int total_steps, int num_steps);

/// Fixed part of a conditional sample: m o x0_known + (1 - m) o x_t.
struct Condition {
  Eigen::MatrixXd mask;
  Eigen::MatrixXd x0_known;
};

/// Entrywise m o known + (1 - m) o x for a binary mask. Known entries are
/// copied bit-exactly.
Eigen::MatrixXd blend_masked(const Eigen::MatrixXd& mask, const Eigen::MatrixXd& known,
                             const Eigen::MatrixXd& x);

/// Runs the DDIM reverse process for a batch of items. `conditions` is either
/// empty (unconditional) or holds one entry per item. `start_state`, when
/// given, replaces the Gaussian x_T and the loop begins at `start_t`
/// (partial reverse process used for refinement).
struct DdimRequest {
  int batch = 1;
  int rows = 0;
  int cols = 0;
  std::vector<Condition> conditions;
  std::optional<Eigen::MatrixXd> start_state;
  int start_t = 0;
};

Eigen::MatrixXd ddim_sample(const NoisePredictor& denoiser, const NoiseSchedule& schedule,
                            const SamplerConfig& config, const DdimRequest& request);

/// Single-trajectory convenience wrapper.
StateVector ddim_sample(const NoisePredictor& denoiser, const NoiseSchedule& schedule,
                        const SamplerConfig& config, int rows, int cols,
                        const std::optional<Condition>& condition = std::nullopt);

}  // namespace lace
