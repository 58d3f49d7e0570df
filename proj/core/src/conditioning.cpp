#include "lace/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lace/error.hpp"
#include "lace/schedule.hpp"

namespace lace {

TaskKind parse_task(const std::string& name) {
  if (name == "uncond") return TaskKind::kUncond;
  if (name == "c") return TaskKind::kClassToSizePos;
  if (name == "csz") return TaskKind::kClassSizeToPos;
  if (name == "complete") return TaskKind::kCompletion;
  if (name == "refine") return TaskKind::kRefinement;
  throw Error(ErrorCode::kInvalidArgument, "unknown task '" + name + "'");
}

std::string task_name(TaskKind task) {
  switch (task) {
    case TaskKind::kUncond: return "uncond";
    case TaskKind::kClassToSizePos: return "c";
    case TaskKind::kClassSizeToPos: return "csz";
    case TaskKind::kCompletion: return "complete";
    case TaskKind::kRefinement: return "refine";
  }
  return "unknown";
}

namespace {

ConditionMask padding_known(const Layout& layout) {
  const LayoutShape& shape = layout.shape();
  ConditionMask m = ConditionMask::Zero(shape.max_len, shape.state_dim());
  for (int i = layout.n_real(); i < shape.max_len; ++i) m.row(i).setOnes();
  return m;
}

}  // namespace

ConditionMask make_completion_mask(const Layout& layout, double fraction, Rng& rng) {
  ConditionMask m = padding_known(layout);
  const int n = layout.n_real();
  const int known = static_cast<int>(std::floor(fraction * n));
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  for (int k = 0; k < known; ++k) m.row(order[static_cast<size_t>(k)]).setOnes();
  return m;
}

ConditionMask make_mask(TaskKind task, const Layout& layout, Rng& rng, const MaskOptions& options) {
  const LayoutShape& shape = layout.shape();
  const int g = shape.geom_col();
  switch (task) {
    case TaskKind::kUncond:
      return ConditionMask::Zero(shape.max_len, shape.state_dim());
    case TaskKind::kClassToSizePos:
    case TaskKind::kRefinement: {
      ConditionMask m = padding_known(layout);
      m.leftCols(g).setOnes();
      return m;
    }
    case TaskKind::kClassSizeToPos: {
      ConditionMask m = padding_known(layout);
      m.leftCols(g).setOnes();
      m.col(g + 2).setOnes();
      m.col(g + 3).setOnes();
      return m;
    }
    case TaskKind::kCompletion:
      return make_completion_mask(layout, rng.uniform(0.0, options.complete_frac_max), rng);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown task");
}

StateVector apply_mask(const ConditionMask& mask, const StateVector& x0, const StateVector& x_t) {
  return {blend_masked(mask, x0.values, x_t.values), x_t.timestep};
}

Layout perturb_for_refinement(const Layout& layout, Rng& rng, double sigma) {
  std::vector<Element> real(layout.elements().begin(), layout.elements().begin() + layout.n_real());
  for (Element& e : real) {
    e.box.cx += sigma * rng.normal();
    e.box.cy += sigma * rng.normal();
    e.box.w += sigma * rng.normal();
    e.box.h += sigma * rng.normal();
  }
  return Layout::from_elements(layout.shape(), layout.canvas(), std::move(real), -1.0);
}

TrainingMask sample_training_mask(Rng& rng, const Layout& layout, const MaskOptions& options) {
  static constexpr TaskKind kTasks[] = {TaskKind::kUncond, TaskKind::kClassToSizePos,
                                        TaskKind::kClassSizeToPos, TaskKind::kCompletion};
  const TaskKind task = kTasks[rng.uniform_int(0, 3)];
  return {task, make_mask(task, layout, rng, options)};
}

}  // namespace lace
