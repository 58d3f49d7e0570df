#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "lace/conditioning.hpp"
#include "lace/constraints.hpp"
#include "lace/denoiser.hpp"
#include "lace/layout.hpp"
#include "lace/schedule.hpp"

namespace lace {

enum class AlignmentKind { kLocal, kGlobal };

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 1e-3;
  int warmup_steps = 200;
  int phase1_steps = 3000;
  int phase2_steps = 2000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  bool use_overlap = true;
  double alignment_weight = 1.0;
  double overlap_weight = 0.1;
  AlignmentKind alignment = AlignmentKind::kGlobal;
  /// Restrict the noise-prediction loss to entries not fixed by the mask.
  bool eps_loss_unmasked_only = false;
  MaskOptions masks;
  ConstraintWeightSchedule weights{0.02};
  DenoiserConfig model;
  int diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  int total_steps() const { return phase1_steps + phase2_steps; }
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Warmup then half-cycle cosine decay over the full run.
double learning_rate_at(int step, const TrainConfig& config);

struct AdamState {
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
  int step = 0;

  static AdamState for_model(const Denoiser& model);
};

/// Loss terms of one step, averaged over the batch.
struct StepReport {
  int step = 0;
  int phase = 1;
  double l_simple = 0.0;
  double l_mse = 0.0;
  double c_alg = 0.0;
  double c_olp = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

/// Per-item draws for a training step; exposed so tests can pin them.
struct ItemDraw {
  int t = 1;
  Eigen::MatrixXd noise;
  ConditionMask mask;
};

ItemDraw draw_item(const Layout& layout, std::uint64_t seed, const TrainConfig& config);

/// Loss and d loss / d eps_hat for a batch given the denoiser's output.
struct BatchLoss {
  StepReport terms;
  Eigen::MatrixXd eps_grad;
};

BatchLoss batch_loss(const std::vector<const Layout*>& batch, const std::vector<ItemDraw>& draws,
                     const Eigen::MatrixXd& x_hat, const Eigen::MatrixXd& eps_hat,
                     const NoiseSchedule& schedule, const TrainConfig& config, bool constraints_on);

/// Noisy, mask-augmented denoiser input for a batch (items stacked by rows).
Eigen::MatrixXd batch_input(const std::vector<const Layout*>& batch,
                            const std::vector<ItemDraw>& draws, const NoiseSchedule& schedule);

/// Total loss and parameter gradients without an update (used by the
/// optimizer step and by gradient checks).
struct LossAndGrad {
  BatchLoss loss;
  std::vector<Eigen::MatrixXd> grads;
};
LossAndGrad loss_and_grad(const Denoiser& model, const std::vector<const Layout*>& batch,
                          const std::vector<ItemDraw>& draws, const NoiseSchedule& schedule,
                          const TrainConfig& config, bool constraints_on);

/// One optimizer step: draws t, noise and masks per item from `step_seed`,
/// evaluates the loss, clips the gradient norm and applies Adam. Throws
/// kNonFinite (without updating) if any term is not finite.
StepReport training_step(Denoiser& model, AdamState& adam, const std::vector<const Layout*>& batch,
                         std::uint64_t step_seed, const TrainConfig& config,
                         const NoiseSchedule& schedule, int phase);

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_path;
  int checkpoint_every = 0;  // 0: only at the end
  std::optional<std::filesystem::path> log_csv;
  /// Unconditional sample-quality probe every K steps (0 disables).
  int eval_every = 0;
  int eval_samples = 32;
  int eval_ddim_steps = 50;
  std::function<void(const StepReport&)> on_step;
  /// Merged into the checkpoint metadata.
  nlohmann::json meta_extra = nlohmann::json::object();
};

struct EvalPoint {
  int step = 0;
  double alignment = 0.0;
  double overlap = 0.0;
};

struct TrainResult {
  Denoiser model;
  Denoiser phase1_model;
  NoiseSchedule schedule;
  std::vector<StepReport> log;
  std::vector<double> epoch_loss;
  std::vector<EvalPoint> evals;
};

/// Two-phase training: phase 1 with the constraint weight forced to 0, then
/// phase 2 with constraints enabled. Aborts with kDiverged if the loss stays
/// above 10x its initial level for 100 consecutive steps.
TrainResult train(const std::vector<Layout>& corpus, const TrainConfig& config,
                  const TrainOptions& options = {});

/// Checkpoint metadata for a trained model.
CheckpointMeta make_meta(const TrainConfig& config, const LayoutShape& shape,
                         const NoiseSchedule& schedule);

std::string log_to_csv(const std::vector<StepReport>& log);

}  // namespace lace
