#include "lace/generate.hpp"

#include <algorithm>

#include "lace/error.hpp"
#include "lace/rng.hpp"

namespace lace {

NoisePredictor make_predictor(const Denoiser& model) {
  return [&model](const Eigen::MatrixXd& x, const std::vector<int>& t) { return model.predict(x, t); };
}

namespace {

std::vector<Layout> decode_batch(const Eigen::MatrixXd& states, int items, const GenerationContext& ctx) {
  std::vector<Layout> out;
  out.reserve(static_cast<size_t>(items));
  const Eigen::Index L = ctx.shape.max_len;
  for (int b = 0; b < items; ++b) {
    out.push_back(decode_layout({states.middleRows(b * L, L), 0}, ctx.shape, ctx.canvas));
  }
  return out;
}

void check_context(const GenerationContext& ctx) {
  const auto& mc = ctx.model.config();
  if (mc.input_dim != ctx.shape.state_dim() || mc.seq_len != ctx.shape.max_len) {
    throw Error(ErrorCode::kConfig, "model was built for a different layout shape");
  }
}

// Runs `fn(first, count, chunk_seed)` over chunks and concatenates the results.
template <class Fn>
std::vector<Layout> chunked(int count, std::uint64_t seed, Fn fn) {
  std::vector<Layout> out;
  out.reserve(static_cast<size_t>(count));
  for (int first = 0, chunk = 0; first < count; first += kSampleChunk, ++chunk) {
    const int n = std::min(kSampleChunk, count - first);
    auto part = fn(first, n, derive_seed(seed, static_cast<std::uint64_t>(chunk)));
    for (auto& l : part) out.push_back(std::move(l));
  }
  return out;
}

}  // namespace

std::vector<Layout> sample_unconditional(const GenerationContext& ctx, int count,
                                         const SamplerConfig& config) {
  if (count < 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be non-negative");
  check_context(ctx);
  const NoisePredictor predictor = make_predictor(ctx.model);
  return chunked(count, config.seed, [&](int, int n, std::uint64_t seed) {
    DdimRequest req;
    req.batch = n;
    req.rows = ctx.shape.max_len;
    req.cols = ctx.shape.state_dim();
    SamplerConfig sc = config;
    sc.seed = seed;
    return decode_batch(ddim_sample(predictor, ctx.schedule, sc, req), n, ctx);
  });
}

std::vector<Layout> sample_with_masks(const GenerationContext& ctx,
                                      const std::vector<Layout>& references,
                                      const std::vector<ConditionMask>& masks,
                                      const SamplerConfig& config) {
  if (references.size() != masks.size()) {
    throw Error(ErrorCode::kShapeMismatch, "one mask per reference layout is required");
  }
  check_context(ctx);
  const NoisePredictor predictor = make_predictor(ctx.model);
  return chunked(static_cast<int>(references.size()), config.seed,
                 [&](int first, int n, std::uint64_t seed) {
                   DdimRequest req;
                   req.batch = n;
                   req.rows = ctx.shape.max_len;
                   req.cols = ctx.shape.state_dim();
                   for (int b = first; b < first + n; ++b) {
                     const Layout& ref = references[static_cast<size_t>(b)];
                     if (!(ref.shape() == ctx.shape)) {
                       throw Error(ErrorCode::kShapeMismatch, "reference layout shape differs from the model");
                     }
                     req.conditions.push_back({masks[static_cast<size_t>(b)], encode_layout(ref).values});
                   }
                   SamplerConfig sc = config;
                   sc.seed = seed;
                   return decode_batch(ddim_sample(predictor, ctx.schedule, sc, req), n, ctx);
                 });
}

std::vector<Layout> sample_conditional(const GenerationContext& ctx, TaskKind task,
                                       const std::vector<Layout>& references,
                                       const SamplerConfig& config, const MaskOptions& options) {
  if (task == TaskKind::kUncond) {
    return sample_unconditional(ctx, static_cast<int>(references.size()), config);
  }
  Rng rng(derive_seed(config.seed, 0x3a5c));
  std::vector<ConditionMask> masks;
  masks.reserve(references.size());
  for (const Layout& ref : references) {
    masks.push_back(task == TaskKind::kCompletion
                        ? make_completion_mask(ref, options.complete_frac_max, rng)
                        : make_mask(task, ref, rng, options));
  }
  return sample_with_masks(ctx, references, masks, config);
}

std::vector<Layout> refine_layouts(const GenerationContext& ctx, const std::vector<Layout>& noisy,
                                   int tau, const SamplerConfig& config) {
  if (tau < 1 || tau > ctx.schedule.steps()) {
    throw Error(ErrorCode::kOutOfRange, "refinement start step out of range");
  }
  check_context(ctx);
  const NoisePredictor predictor = make_predictor(ctx.model);
  Rng mask_rng(0);
  return chunked(static_cast<int>(noisy.size()), config.seed, [&](int first, int n, std::uint64_t seed) {
    DdimRequest req;
    req.batch = n;
    req.rows = ctx.shape.max_len;
    req.cols = ctx.shape.state_dim();
    req.start_t = tau;
    Eigen::MatrixXd start(static_cast<Eigen::Index>(n) * req.rows, req.cols);
    for (int b = first; b < first + n; ++b) {
      const Layout& in = noisy[static_cast<size_t>(b)];
      if (!(in.shape() == ctx.shape)) {
        throw Error(ErrorCode::kShapeMismatch, "input layout shape differs from the model");
      }
      const Eigen::MatrixXd x = encode_layout(in).values;
      start.middleRows(static_cast<Eigen::Index>(b - first) * req.rows, req.rows) = x;
      req.conditions.push_back({make_mask(TaskKind::kRefinement, in, mask_rng), x});
    }
    req.start_state = std::move(start);
    SamplerConfig sc = config;
    sc.seed = seed;
    return decode_batch(ddim_sample(predictor, ctx.schedule, sc, req), n, ctx);
  });
}

}  // namespace lace
