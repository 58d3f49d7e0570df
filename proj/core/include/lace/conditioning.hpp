#pragma once

#include <string>

#include <Eigen/Core>

#include "lace/layout.hpp"
#include "lace/rng.hpp"

namespace lace {

enum class TaskKind { kUncond, kClassToSizePos, kClassSizeToPos, kCompletion, kRefinement };

TaskKind parse_task(const std::string& name);
std::string task_name(TaskKind task);

/// Binary L x (N+5) selector of attributes clamped to known values.
using ConditionMask = Eigen::MatrixXd;

struct MaskOptions {
  double complete_frac_max = 0.2;
};

/// Builds the condition mask for a task. Conditional tasks mark padding rows
/// as known so the element count is part of the condition. Refinement keeps
/// labels (and the element set) fixed, same as class-only conditioning.
ConditionMask make_mask(TaskKind task, const Layout& layout, Rng& rng,
                        const MaskOptions& options = {});

/// Completion mask with an explicit known-element fraction.
ConditionMask make_completion_mask(const Layout& layout, double fraction, Rng& rng);

/// m o x0 + (1 - m) o x_t; the timestep comes from x_t.
StateVector apply_mask(const ConditionMask& mask, const StateVector& x0, const StateVector& x_t);

/// Adds N(0, sigma^2) noise to the geometry of real elements. No clamping.
Layout perturb_for_refinement(const Layout& layout, Rng& rng, double sigma = 0.1);

/// Uniform draw over the four generation tasks used as training augmentation.
struct TrainingMask {
  TaskKind task;
  ConditionMask mask;
};
TrainingMask sample_training_mask(Rng& rng, const Layout& layout, const MaskOptions& options = {});

}  // namespace lace
