#include "lace/schedule.hpp"

#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "lace/error.hpp"
#include "lace/rng.hpp"

namespace lace {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) {
  if (betas.empty()) throw Error(ErrorCode::kConfig, "schedule needs at least one step");
  betas_.reserve(betas.size() + 1);
  betas_.push_back(0.0);
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw Error(ErrorCode::kConfig, "every beta must lie in (0, 1)");
    betas_.push_back(b);
  }
  alpha_bars_.assign(betas_.size(), 1.0);
  posterior_vars_.assign(betas_.size(), 0.0);
  for (size_t t = 1; t < betas_.size(); ++t) {
    alpha_bars_[t] = alpha_bars_[t - 1] * (1.0 - betas_[t]);
    posterior_vars_[t] = (1.0 - alpha_bars_[t - 1]) / (1.0 - alpha_bars_[t]) * betas_[t];
  }
}

std::uint32_t NoiseSchedule::hash() const {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (size_t t = 1; t < betas_.size(); ++t) {
    unsigned char bytes[8];
    std::uint64_t bits;
    std::memcpy(&bits, &betas_[t], 8);
    for (int k = 0; k < 8; ++k) bytes[k] = static_cast<unsigned char>(bits >> (8 * k));
    crc = crc32(crc, bytes, 8);
  }
  return static_cast<std::uint32_t>(crc);
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"T", steps()}, {"betas", betas()}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  auto betas = j.at("betas").get<std::vector<double>>();
  if (j.at("T").get<int>() != static_cast<int>(betas.size())) {
    throw Error(ErrorCode::kConfig, "schedule T does not match the number of betas");
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw Error(ErrorCode::kConfig, "schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw Error(ErrorCode::kConfig, "linear schedule needs 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[static_cast<size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule(std::move(betas));
}

namespace {

void check_t(int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.steps()) {
    throw Error(ErrorCode::kOutOfRange,
                "timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.steps()) + "]");
  }
}

void check_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": shape mismatch");
  }
}

}  // namespace

StateVector q_sample(const StateVector& x0, int t, const Eigen::MatrixXd& noise,
                     const NoiseSchedule& schedule) {
  check_t(t, schedule);
  check_same_shape(x0.values, noise, "q_sample");
  const double ab = schedule.alpha_bar(t);
  return {std::sqrt(ab) * x0.values + std::sqrt(1.0 - ab) * noise, t};
}

StateVector q_step(const StateVector& x_prev, const Eigen::MatrixXd& noise,
                   const NoiseSchedule& schedule) {
  const int t = x_prev.timestep + 1;
  check_t(t, schedule);
  check_same_shape(x_prev.values, noise, "q_step");
  return {std::sqrt(schedule.alpha(t)) * x_prev.values + std::sqrt(schedule.beta(t)) * noise, t};
}

Eigen::MatrixXd predict_x0(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& eps_hat, int t,
                           const NoiseSchedule& schedule) {
  check_t(t, schedule);
  check_same_shape(x_t, eps_hat, "predict_x0");
  const double ab = schedule.alpha_bar(t);
  return (x_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

double predict_x0_eps_jacobian(int t, const NoiseSchedule& schedule) {
  check_t(t, schedule);
  const double ab = schedule.alpha_bar(t);
  return -std::sqrt(1.0 - ab) / std::sqrt(ab);
}

StateVector ddpm_step(const StateVector& x_t, const Eigen::MatrixXd& eps_hat,
                      const NoiseSchedule& schedule, const Eigen::MatrixXd& noise_draw) {
  const int t = x_t.timestep;
  check_t(t, schedule);
  check_same_shape(x_t.values, eps_hat, "ddpm_step");
  Eigen::MatrixXd mean = (x_t.values - schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t)) *
                                           eps_hat) /
                         std::sqrt(schedule.alpha(t));
  if (t > 1) {
    check_same_shape(x_t.values, noise_draw, "ddpm_step noise");
    mean += std::sqrt(schedule.posterior_variance(t)) * noise_draw;
  }
  return {std::move(mean), t - 1};
}

Eigen::MatrixXd blend_masked(const Eigen::MatrixXd& mask, const Eigen::MatrixXd& known,
                             const Eigen::MatrixXd& x) {
  check_same_shape(mask, known, "blend_masked");
  check_same_shape(mask, x, "blend_masked");
  return (mask.array() > 0.5).select(known, x);
}

std::vector<int> ddim_timesteps(int total_steps, int num_steps) {
  if (total_steps < 1 || num_steps < 1 || num_steps > total_steps) {
    throw Error(ErrorCode::kConfig, "DDIM needs 1 <= num_steps <= T");
  }
  if (num_steps == 1) return {total_steps};
  const int stride = total_steps / num_steps;
  std::vector<int> ts;
  ts.reserve(static_cast<size_t>(num_steps));
  for (int i = 0; i < num_steps - 1; ++i) ts.push_back(total_steps - i * stride);
  ts.push_back(1);
  return ts;
}

Eigen::MatrixXd ddim_sample(const NoisePredictor& denoiser, const NoiseSchedule& schedule,
                            const SamplerConfig& config, const DdimRequest& req) {
  const Eigen::Index rows = static_cast<Eigen::Index>(req.batch) * req.rows;
  if (req.batch < 1 || req.rows < 1 || req.cols < 1) {
    throw Error(ErrorCode::kInvalidArgument, "DDIM request needs a positive shape");
  }
  if (!req.conditions.empty() && req.conditions.size() != static_cast<size_t>(req.batch)) {
    throw Error(ErrorCode::kShapeMismatch, "one condition per batch item is required");
  }
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(rows, req.cols);
  Eigen::MatrixXd known = Eigen::MatrixXd::Zero(rows, req.cols);
  for (size_t b = 0; b < req.conditions.size(); ++b) {
    const Condition& c = req.conditions[b];
    if (c.mask.rows() != req.rows || c.mask.cols() != req.cols || c.x0_known.rows() != req.rows ||
        c.x0_known.cols() != req.cols) {
      throw Error(ErrorCode::kShapeMismatch, "condition shape does not match the state");
    }
    mask.middleRows(static_cast<Eigen::Index>(b) * req.rows, req.rows) = c.mask;
    known.middleRows(static_cast<Eigen::Index>(b) * req.rows, req.rows) = c.x0_known;
  }

  Rng rng(config.seed);
  int start_t = schedule.steps();
  Eigen::MatrixXd x;
  if (req.start_state) {
    start_t = req.start_t;
    if (start_t < 1 || start_t > schedule.steps()) {
      throw Error(ErrorCode::kOutOfRange, "partial reverse start step out of range");
    }
    x = *req.start_state;
    if (x.rows() != rows || x.cols() != req.cols) {
      throw Error(ErrorCode::kShapeMismatch, "start state shape does not match the request");
    }
  } else {
    x = rng.normal_matrix(rows, req.cols);
  }
  const auto ts = ddim_timesteps(start_t, std::min(config.num_steps, start_t));

  for (size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const int t_next = k + 1 < ts.size() ? ts[k + 1] : 0;
    Eigen::MatrixXd x_hat = blend_masked(mask, known, x);
    Eigen::MatrixXd eps = denoiser(x_hat, std::vector<int>(static_cast<size_t>(req.batch), t));
    if (eps.rows() != rows || eps.cols() != req.cols) {
      throw Error(ErrorCode::kShapeMismatch, "denoiser output shape does not match its input");
    }
    const double ab = schedule.alpha_bar(t);
    const double ab_next = t_next > 0 ? schedule.alpha_bar(t_next) : 1.0;
    Eigen::MatrixXd x0_hat = (x_hat - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    double sigma = 0.0;
    if (config.eta > 0.0 && t_next > 0) {
      sigma = config.eta * std::sqrt((1.0 - ab_next) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_next);
    }
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_next - sigma * sigma));
    x = std::sqrt(ab_next) * x0_hat + dir * eps;
    if (sigma > 0.0) x += sigma * rng.normal_matrix(rows, req.cols);
  }
  return blend_masked(mask, known, x);
}

StateVector ddim_sample(const NoisePredictor& denoiser, const NoiseSchedule& schedule,
                        const SamplerConfig& config, int rows, int cols,
                        const std::optional<Condition>& condition) {
  DdimRequest req;
  req.rows = rows;
  req.cols = cols;
  if (condition) req.conditions.push_back(*condition);
  return {ddim_sample(denoiser, schedule, config, req), 0};
}

}  // namespace lace
