#include "lace/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lace/error.hpp"
#include "lace/generate.hpp"
#include "lace/io_util.hpp"
#include "lace/metrics.hpp"
#include "lace/rng.hpp"

namespace lace {

void TrainConfig::validate() const {
  if (batch_size < 1 || phase1_steps < 0 || phase2_steps < 0 || total_steps() < 1 || warmup_steps < 0) {
    throw Error(ErrorCode::kConfig, "training needs positive batch size and step counts");
  }
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::kConfig, "learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
    throw Error(ErrorCode::kConfig, "Adam decays must lie in [0, 1) and eps > 0");
  }
  if (!(grad_clip > 0.0)) throw Error(ErrorCode::kConfig, "grad_clip must be positive");
  if (!(alignment_weight >= 0.0 && overlap_weight >= 0.0)) {
    throw Error(ErrorCode::kConfig, "constraint weights must be non-negative");
  }
  if (weights.steps != diffusion_steps) {
    throw Error(ErrorCode::kConfig, "constraint weight schedule and diffusion use different T");
  }
  model.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"warmup_steps", warmup_steps},
          {"phase1_steps", phase1_steps},
          {"phase2_steps", phase2_steps},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"grad_clip", grad_clip},
          {"seed", seed},
          {"use_overlap", use_overlap},
          {"alignment_weight", alignment_weight},
          {"overlap_weight", overlap_weight},
          {"alignment", alignment == AlignmentKind::kGlobal ? "global" : "local"},
          {"eps_loss_unmasked_only", eps_loss_unmasked_only},
          {"complete_frac_max", masks.complete_frac_max},
          {"beta_w", weights.beta_w},
          {"constraint_orientation", orientation_name(weights.orientation)},
          {"diffusion_steps", diffusion_steps},
          {"beta_start", beta_start},
          {"beta_end", beta_end},
          {"model", model.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("batch_size", c.batch_size);
  get("learning_rate", c.learning_rate);
  get("warmup_steps", c.warmup_steps);
  get("phase1_steps", c.phase1_steps);
  get("phase2_steps", c.phase2_steps);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_eps", c.adam_eps);
  get("grad_clip", c.grad_clip);
  get("seed", c.seed);
  get("use_overlap", c.use_overlap);
  get("alignment_weight", c.alignment_weight);
  get("overlap_weight", c.overlap_weight);
  get("eps_loss_unmasked_only", c.eps_loss_unmasked_only);
  get("complete_frac_max", c.masks.complete_frac_max);
  get("beta_w", c.weights.beta_w);
  get("diffusion_steps", c.diffusion_steps);
  get("beta_start", c.beta_start);
  get("beta_end", c.beta_end);
  c.weights.steps = c.diffusion_steps;
  if (j.contains("alignment")) {
    const auto a = j.at("alignment").get<std::string>();
    if (a != "global" && a != "local") throw Error(ErrorCode::kConfig, "alignment must be global or local");
    c.alignment = a == "global" ? AlignmentKind::kGlobal : AlignmentKind::kLocal;
  }
  if (j.contains("constraint_orientation")) {
    c.weights.orientation = parse_orientation(j.at("constraint_orientation").get<std::string>());
  }
  if (j.contains("model")) c.model = DenoiserConfig::from_json(j.at("model"));
  return c;
}

double learning_rate_at(int step, const TrainConfig& config) {
  const int total = config.total_steps();
  if (step < config.warmup_steps) {
    return config.learning_rate * (step + 1) / config.warmup_steps;
  }
  const int span = std::max(1, total - config.warmup_steps);
  const double progress = std::min(1.0, static_cast<double>(step - config.warmup_steps) / span);
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamState AdamState::for_model(const Denoiser& model) {
  AdamState s;
  for (const auto& p : model.params()) {
    s.m.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
    s.v.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
  }
  return s;
}

ItemDraw draw_item(const Layout& layout, std::uint64_t seed, const TrainConfig& config) {
  Rng rng(seed);
  ItemDraw d;
  d.t = rng.uniform_int(1, config.diffusion_steps);
  d.noise = rng.normal_matrix(layout.max_len(), layout.shape().state_dim());
  d.mask = sample_training_mask(rng, layout, config.masks).mask;
  return d;
}

Eigen::MatrixXd batch_input(const std::vector<const Layout*>& batch,
                            const std::vector<ItemDraw>& draws, const NoiseSchedule& schedule) {
  if (batch.empty() || batch.size() != draws.size()) {
    throw Error(ErrorCode::kInvalidArgument, "batch and draws must be non-empty and aligned");
  }
  const LayoutShape& shape = batch.front()->shape();
  const Eigen::Index L = shape.max_len;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(batch.size()) * L, shape.state_dim());
  for (size_t b = 0; b < batch.size(); ++b) {
    const StateVector x0 = encode_layout(*batch[b]);
    const StateVector xt = q_sample(x0, draws[b].t, draws[b].noise, schedule);
    x.middleRows(static_cast<Eigen::Index>(b) * L, L) = apply_mask(draws[b].mask, x0, xt).values;
  }
  return x;
}

BatchLoss batch_loss(const std::vector<const Layout*>& batch, const std::vector<ItemDraw>& draws,
                     const Eigen::MatrixXd& x_hat, const Eigen::MatrixXd& eps_hat,
                     const NoiseSchedule& schedule, const TrainConfig& config, bool constraints_on) {
  const LayoutShape& shape = batch.front()->shape();
  const Eigen::Index L = shape.max_len;
  const int g = shape.geom_col();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  BatchLoss out;
  out.eps_grad = Eigen::MatrixXd::Zero(eps_hat.rows(), eps_hat.cols());

  for (size_t b = 0; b < batch.size(); ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * L;
    const int t = draws[b].t;
    const Eigen::MatrixXd x0 = encode_layout(*batch[b]).values;
    const auto eps_b = eps_hat.middleRows(r0, L);
    auto grad_b = out.eps_grad.middleRows(r0, L);

    // noise prediction
    Eigen::MatrixXd diff = eps_b - draws[b].noise;
    if (config.eps_loss_unmasked_only) {
      const Eigen::MatrixXd free = (draws[b].mask.array() < 0.5).cast<double>().matrix();
      diff = diff.cwiseProduct(free);
      const double count = free.sum();
      if (count > 0) {
        out.terms.l_simple += inv_b * diff.squaredNorm() / count;
        grad_b += inv_b * 2.0 / count * diff;
      }
    } else {
      const double count = static_cast<double>(diff.size());
      out.terms.l_simple += inv_b * diff.squaredNorm() / count;
      grad_b += inv_b * 2.0 / count * diff;
    }

    // reconstruction of x0 and constraints on its geometry
    const double jac = predict_x0_eps_jacobian(t, schedule);
    Eigen::MatrixXd x0_pred = predict_x0(x_hat.middleRows(r0, L), eps_b, t, schedule);
    // conditioned entries are replaced by their known values and carry no gradient
    const Eigen::MatrixXd keep = (draws[b].mask.array() < 0.5).cast<double>().matrix();
    x0_pred = keep.cwiseProduct(x0_pred) + (1.0 - keep.array()).matrix().cwiseProduct(x0);
    const Eigen::MatrixXd rec = x0_pred - x0;
    const double count = static_cast<double>(rec.size());
    out.terms.l_mse += inv_b * rec.squaredNorm() / count;
    Eigen::MatrixXd x0_grad = 2.0 / count * rec;

    const int n = batch[b]->n_real();
    const Eigen::MatrixX4d pred_boxes = x0_pred.middleCols<4>(g);
    const Eigen::MatrixX4d true_boxes = x0.middleCols<4>(g);
    const ConstraintReport alg = config.alignment == AlignmentKind::kGlobal
                                     ? global_alignment_loss(pred_boxes, true_boxes, n)
                                     : local_alignment_loss(pred_boxes, n);
    out.terms.c_alg += inv_b * alg.value;
    ConstraintReport olp{0.0, Eigen::MatrixX4d::Zero(L, 4)};
    if (config.use_overlap) {
      olp = overlap_loss(pred_boxes, n);
      out.terms.c_olp += inv_b * olp.value;
    }
    const double omega = constraints_on ? constraint_weight(t, config.weights) : 0.0;
    if (omega > 0.0) {
      const double wa = omega * config.alignment_weight;
      const double wo = omega * config.overlap_weight;
      out.terms.total += inv_b * (wa * alg.value + wo * olp.value);
      x0_grad.middleCols<4>(g) += wa * alg.grad + wo * olp.grad;
    }
    grad_b += inv_b * jac * x0_grad.cwiseProduct(keep);
  }
  out.terms.total += out.terms.l_simple + out.terms.l_mse;

  const std::pair<const char*, double> terms[] = {{"l_simple", out.terms.l_simple},
                                                  {"l_mse", out.terms.l_mse},
                                                  {"c_alg", out.terms.c_alg},
                                                  {"c_olp", out.terms.c_olp}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::kNonFinite, std::string("training loss term ") + name + " is not finite");
    }
  }
  return out;
}

LossAndGrad loss_and_grad(const Denoiser& model, const std::vector<const Layout*>& batch,
                          const std::vector<ItemDraw>& draws, const NoiseSchedule& schedule,
                          const TrainConfig& config, bool constraints_on) {
  const Eigen::MatrixXd x_hat = batch_input(batch, draws, schedule);
  std::vector<int> ts;
  for (const auto& d : draws) ts.push_back(d.t);
  ad::Tape tape;
  const Denoiser::Pass pass = model.forward(tape, x_hat, ts);
  BatchLoss loss = batch_loss(batch, draws, x_hat, tape.value(pass.output), schedule, config,
                              constraints_on);
  Denoiser::Gradients grads = model.backward(tape, pass, loss.eps_grad);
  return {std::move(loss), std::move(grads.params)};
}

StepReport training_step(Denoiser& model, AdamState& adam, const std::vector<const Layout*>& batch,
                         std::uint64_t step_seed, const TrainConfig& config,
                         const NoiseSchedule& schedule, int phase) {
  if (batch.empty()) throw Error(ErrorCode::kInvalidArgument, "training step needs a non-empty batch");
  std::vector<ItemDraw> draws;
  draws.reserve(batch.size());
  for (size_t b = 0; b < batch.size(); ++b) {
    draws.push_back(draw_item(*batch[b], derive_seed(step_seed, b), config));
  }
  LossAndGrad lg = loss_and_grad(model, batch, draws, schedule, config, phase >= 2);

  double sq = 0.0;
  for (const auto& g : lg.grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw Error(ErrorCode::kNonFinite, "gradient norm is not finite");
  const double clip = norm > config.grad_clip ? config.grad_clip / norm : 1.0;

  const double lr = learning_rate_at(adam.step, config);
  ++adam.step;
  const double c1 = 1.0 - std::pow(config.beta1, adam.step);
  const double c2 = 1.0 - std::pow(config.beta2, adam.step);
  auto& params = model.params();
  for (size_t i = 0; i < params.size(); ++i) {
    const Eigen::MatrixXd g = clip * lg.grads[i];
    adam.m[i] = config.beta1 * adam.m[i] + (1.0 - config.beta1) * g;
    adam.v[i] = config.beta2 * adam.v[i] + (1.0 - config.beta2) * g.cwiseProduct(g);
    params[i].value.array() -=
        lr * (adam.m[i].array() / c1) / ((adam.v[i].array() / c2).sqrt() + config.adam_eps);
  }

  StepReport r = lg.loss.terms;
  r.step = adam.step;
  r.phase = phase;
  r.lr = lr;
  r.grad_norm = norm;
  return r;
}

CheckpointMeta make_meta(const TrainConfig& config, const LayoutShape& shape,
                         const NoiseSchedule& schedule) {
  CheckpointMeta meta;
  meta.num_classes = shape.num_classes;
  meta.max_len = shape.max_len;
  meta.schedule_hash = schedule.hash();
  meta.extra = {{"train_config", config.to_json()}, {"schedule", schedule.to_json()}};
  return meta;
}

std::string log_to_csv(const std::vector<StepReport>& log) {
  std::ostringstream os;
  os << "step,phase,l_simple,l_mse,c_alg,c_olp,total,lr,grad_norm\n";
  os << std::setprecision(9);
  for (const auto& r : log) {
    os << r.step << ',' << r.phase << ',' << r.l_simple << ',' << r.l_mse << ',' << r.c_alg << ','
       << r.c_olp << ',' << r.total << ',' << r.lr << ',' << r.grad_norm << '\n';
  }
  return os.str();
}

TrainResult train(const std::vector<Layout>& corpus, const TrainConfig& config_in,
                  const TrainOptions& options) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "cannot train on an empty corpus");
  const LayoutShape shape = corpus.front().shape();
  for (const Layout& l : corpus) {
    if (!(l.shape() == shape)) throw Error(ErrorCode::kConfig, "corpus mixes layout shapes");
  }
  TrainConfig config = config_in;
  config.model.input_dim = shape.state_dim();
  config.model.seq_len = shape.max_len;
  config.weights.steps = config.diffusion_steps;
  config.validate();

  TrainResult result;
  result.schedule = make_linear_schedule(config.diffusion_steps, config.beta_start, config.beta_end);
  result.model = Denoiser(config.model, derive_seed(config.seed, 0xd1ce));
  AdamState adam = AdamState::for_model(result.model);
  CheckpointMeta meta = make_meta(config, shape, result.schedule);
  meta.extra["canvas"] = {corpus.front().canvas().width, corpus.front().canvas().height};
  if (options.meta_extra.is_object()) meta.extra.update(options.meta_extra);

  Rng order_rng(derive_seed(config.seed, 0x5eed));
  std::vector<int> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();
  double epoch_sum = 0.0;
  int epoch_steps = 0;

  double initial_loss = 0.0;
  int above = 0;
  const Canvas canvas = corpus.front().canvas();

  for (int step = 0; step < config.total_steps(); ++step) {
    const int phase = step < config.phase1_steps ? 1 : 2;
    if (step == config.phase1_steps) result.phase1_model = result.model;

    std::vector<const Layout*> batch;
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        if (epoch_steps > 0) result.epoch_loss.push_back(epoch_sum / epoch_steps);
        epoch_sum = 0.0;
        epoch_steps = 0;
        std::shuffle(order.begin(), order.end(), order_rng.engine());
        cursor = 0;
      }
      batch.push_back(&corpus[static_cast<size_t>(order[cursor++])]);
    }

    const StepReport r = training_step(result.model, adam, batch, derive_seed(config.seed, 1000 + step),
                                       config, result.schedule, phase);
    result.log.push_back(r);
    epoch_sum += r.total;
    ++epoch_steps;
    if (options.on_step) options.on_step(r);

    if (step == 0) initial_loss = r.total;
    above = r.total > 10.0 * initial_loss ? above + 1 : 0;
    if (above >= 100) {
      throw Error(ErrorCode::kDiverged, "loss above 10x its initial value (" + std::to_string(initial_loss) +
                                            ") for 100 consecutive steps at step " +
                                            std::to_string(step + 1) + " (last " + std::to_string(r.total) +
                                            ")");
    }

    if (options.eval_every > 0 && (step + 1) % options.eval_every == 0) {
      SamplerConfig sc{options.eval_ddim_steps, 0.0, derive_seed(config.seed, 0xe7a1 + step)};
      const auto samples =
          sample_unconditional({result.model, result.schedule, shape, canvas}, options.eval_samples, sc);
      result.evals.push_back({step + 1, alignment_metric(samples), overlap_metric(samples)});
    }
    if (options.checkpoint_path && options.checkpoint_every > 0 &&
        (step + 1) % options.checkpoint_every == 0) {
      save_checkpoint(result.model, meta, *options.checkpoint_path);
    }
  }
  if (epoch_steps > 0) result.epoch_loss.push_back(epoch_sum / epoch_steps);
  if (config.phase2_steps == 0) result.phase1_model = result.model;
  if (options.checkpoint_path) save_checkpoint(result.model, meta, *options.checkpoint_path);
  if (options.log_csv) write_file_atomic(*options.log_csv, log_to_csv(result.log));
  return result;
}

}  // namespace lace
