#pragma once

#include <vector>

#include "lace/conditioning.hpp"
#include "lace/denoiser.hpp"
#include "lace/layout.hpp"
#include "lace/schedule.hpp"

namespace lace {

struct GenerationContext {
  const Denoiser& model;
  const NoiseSchedule& schedule;
  LayoutShape shape;
  Canvas canvas;
};

/// Wraps a denoiser as a batched noise predictor for the samplers.
NoisePredictor make_predictor(const Denoiser& model);

/// Items processed per denoiser call when sampling many layouts.
inline constexpr int kSampleChunk = 128;

std::vector<Layout> sample_unconditional(const GenerationContext& ctx, int count,
                                         const SamplerConfig& config);

/// Conditional generation from the known attributes of each reference layout.
/// Completion uses `options.complete_frac_max` as the known fraction.
std::vector<Layout> sample_conditional(const GenerationContext& ctx, TaskKind task,
                                       const std::vector<Layout>& references,
                                       const SamplerConfig& config, const MaskOptions& options = {});

/// Same with explicit per-reference masks.
std::vector<Layout> sample_with_masks(const GenerationContext& ctx,
                                      const std::vector<Layout>& references,
                                      const std::vector<ConditionMask>& masks,
                                      const SamplerConfig& config);

/// Partial reverse process treating each noisy layout as the state at step
/// `tau`, with labels held fixed.
std::vector<Layout> refine_layouts(const GenerationContext& ctx, const std::vector<Layout>& noisy,
                                   int tau, const SamplerConfig& config);

}  // namespace lace
