#include "cli.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lace/conditioning.hpp"
#include "lace/corpus.hpp"
#include "lace/denoiser.hpp"
#include "lace/error.hpp"
#include "lace/generate.hpp"
#include "lace/io_util.hpp"
#include "lace/metrics.hpp"
#include "lace/postprocess.hpp"
#include "lace/svg.hpp"
#include "lace/training.hpp"

namespace lace::cli {

namespace {

using nlohmann::json;

// JSON config files: nested objects name subcommands, scalars and arrays
// become option values. Keys are long option names without dashes.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
      if (opt->count() > 0) {
        j[opt->get_lnames().front()] = opt->results().size() == 1 ? json(opt->results().front()) : json(opt->results());
      } else if (default_also && !opt->get_default_str().empty()) {
        j[opt->get_lnames().front()] = opt->get_default_str();
      }
    }
    return j.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kConfig, std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::kConfig, "config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number() || v.is_null()) return v.dump();
    throw Error(ErrorCode::kConfig, "config values must be scalars or arrays of scalars");
  }

  static void flatten(const json& obj, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        auto sub = parents;
        sub.push_back(key);
        flatten(value, sub, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }
};

struct ShapeOpts {
  int classes = 5;
  int max_len = 25;
  LayoutShape shape() const { return {classes, max_len}; }
};

void add_shape(CLI::App* app, ShapeOpts& s) {
  app->add_option("--classes", s.classes, "Number of element classes")->capture_default_str();
  app->add_option("--max-len", s.max_len, "Padded layout length")->capture_default_str();
}

bool on_off(const std::string& v) { return v == "on"; }

std::vector<Layout> read_layouts(const std::string& path, const LayoutShape& shape, double eps_geom,
                                 std::ostream& err) {
  const Corpus c = ingest(path, {shape, eps_geom});
  for (const auto& line : c.stats.log) err << path << ": " << line << "\n";
  return c.layouts;
}

struct LoadedModel {
  Checkpoint ckpt;
  NoiseSchedule schedule;
  LayoutShape shape;
  Canvas canvas{816, 1056};
  TrainConfig train;
};

LoadedModel load_model(const std::string& path) {
  LoadedModel m;
  m.ckpt = load_checkpoint(path);
  m.shape = {m.ckpt.meta.num_classes, m.ckpt.meta.max_len};
  check_checkpoint_shape(m.ckpt, m.shape.num_classes, m.shape.max_len);
  const json& extra = m.ckpt.meta.extra;
  if (extra.contains("train_config")) m.train = TrainConfig::from_json(extra.at("train_config"));
  m.schedule = extra.contains("schedule") ? NoiseSchedule::from_json(extra.at("schedule"))
                                          : make_linear_schedule(m.train.diffusion_steps);
  if (m.schedule.hash() != m.ckpt.meta.schedule_hash) {
    throw Error(ErrorCode::kCheckpointCorrupt, "stored noise schedule does not match its hash");
  }
  if (extra.contains("canvas")) {
    m.canvas = {extra.at("canvas").at(0).get<int>(), extra.at("canvas").at(1).get<int>()};
  }
  return m;
}

// ---- subcommands ----

struct SynthOpts {
  ShapeOpts shape;
  int cols = 2;
  int count = 1000;
  int rows_min = 2;
  int rows_max = 5;
  int width = 816;
  int height = 1056;
  std::uint64_t seed = 0;
  std::string out;
};

int run_synth(const SynthOpts& o, std::ostream& out) {
  SyntheticGridSpec s;
  s.columns = o.cols;
  s.rows_min = o.rows_min;
  s.rows_max = o.rows_max;
  s.num_classes = o.shape.classes;
  s.max_len = o.shape.max_len;
  s.canvas = {o.width, o.height};
  s.seed = o.seed;
  const auto layouts = generate_synthetic(s, o.count);
  write_jsonl(layouts, o.out);
  out << json{{"written", layouts.size()}, {"out", o.out}}.dump() << "\n";
  return 0;
}

struct IngestOpts {
  ShapeOpts shape;
  std::string in;
  std::string out;
  double eps_geom = 0.0;
};

int run_ingest(const IngestOpts& o, std::ostream& out, std::ostream& err) {
  const Corpus c = ingest(o.in, {o.shape.shape(), o.eps_geom});
  for (const auto& line : c.stats.log) err << o.in << ": " << line << "\n";
  if (!o.out.empty()) write_jsonl(c.layouts, o.out);
  json classes = json::object(), lengths = json::object();
  for (const auto& [k, v] : c.stats.class_histogram) classes[std::to_string(k)] = v;
  for (const auto& [k, v] : c.stats.length_histogram) lengths[std::to_string(k)] = v;
  out << json{{"count", c.stats.count},
              {"dropped", c.stats.dropped},
              {"skipped", c.stats.skipped},
              {"class_histogram", classes},
              {"length_histogram", lengths}}
             .dump()
      << "\n";
  return 0;
}

struct TrainOpts {
  ShapeOpts shape;
  std::string corpus;
  std::string ckpt;
  std::string log_csv;
  int steps1 = 3000;
  int steps2 = 2000;
  int batch = 32;
  double lr = 1e-3;
  int warmup = 200;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::string alignment = "global";
  std::string overlap = "on";
  double beta_w = TrainConfig{}.weights.beta_w;
  double alignment_weight = TrainConfig{}.alignment_weight;
  double overlap_weight = TrainConfig{}.overlap_weight;
  std::string orientation = "small-t-active";
  double complete_frac_max = 0.2;
  bool eps_unmasked_only = false;
  int checkpoint_every = 0;
  int log_every = 0;
  DenoiserConfig model;
};

int run_train(const TrainOpts& o, std::ostream& out, std::ostream& err) {
  const auto corpus = read_layouts(o.corpus, o.shape.shape(), 0.0, err);
  TrainConfig c;
  c.phase1_steps = o.steps1;
  c.phase2_steps = o.steps2;
  c.batch_size = o.batch;
  c.learning_rate = o.lr;
  c.warmup_steps = o.warmup;
  c.grad_clip = o.grad_clip;
  c.seed = o.seed;
  c.alignment = o.alignment == "local" ? AlignmentKind::kLocal : AlignmentKind::kGlobal;
  c.use_overlap = on_off(o.overlap);
  c.alignment_weight = o.alignment_weight;
  c.overlap_weight = o.overlap_weight;
  c.weights.beta_w = o.beta_w;
  c.weights.orientation = parse_orientation(o.orientation);
  c.masks.complete_frac_max = o.complete_frac_max;
  c.eps_loss_unmasked_only = o.eps_unmasked_only;
  c.model = o.model;

  TrainOptions opt;
  opt.checkpoint_path = o.ckpt;
  opt.checkpoint_every = o.checkpoint_every;
  if (!o.log_csv.empty()) opt.log_csv = o.log_csv;
  if (o.log_every > 0) {
    opt.on_step = [&err, every = o.log_every](const StepReport& r) {
      if (r.step % every == 0) {
        err << "step " << r.step << " phase " << r.phase << " loss " << r.total << " l_simple " << r.l_simple
            << " l_mse " << r.l_mse << " c_alg " << r.c_alg << " c_olp " << r.c_olp << "\n";
      }
    };
  }
  const TrainResult res = train(corpus, c, opt);
  out << json{{"steps", res.log.size()},
              {"final_loss", res.log.empty() ? 0.0 : res.log.back().total},
              {"checkpoint", o.ckpt}}
             .dump()
      << "\n";
  return 0;
}

struct SampleOpts {
  std::string ckpt;
  std::string task = "uncond";
  std::string cond;
  std::string out;
  int count = 16;
  int steps = 100;
  double eta = 0.0;
  std::uint64_t seed = 0;
  double complete_frac_max = 0.2;
};

int run_sample(const SampleOpts& o, std::ostream& out, std::ostream& err) {
  const TaskKind task = parse_task(o.task);
  if (task == TaskKind::kRefinement) {
    throw Error(ErrorCode::kConfig, "use the refine subcommand for refinement");
  }
  if (task == TaskKind::kUncond && !o.cond.empty()) {
    throw Error(ErrorCode::kConfig, "--cond conflicts with --task uncond");
  }
  if (task != TaskKind::kUncond && o.cond.empty()) {
    throw Error(ErrorCode::kConfig, "--task " + o.task + " needs --cond");
  }
  const LoadedModel m = load_model(o.ckpt);
  const SamplerConfig sc{o.steps, o.eta, o.seed};
  std::vector<Layout> result;
  if (task == TaskKind::kUncond) {
    result = sample_unconditional({m.ckpt.model, m.schedule, m.shape, m.canvas}, o.count, sc);
  } else {
    const auto refs = read_layouts(o.cond, m.shape, 0.0, err);
    MaskOptions mo;
    mo.complete_frac_max = o.complete_frac_max;
    result = sample_conditional({m.ckpt.model, m.schedule, m.shape, refs.front().canvas()}, task, refs, sc, mo);
  }
  write_jsonl(result, o.out);
  out << json{{"written", result.size()}, {"task", task_name(task)}, {"out", o.out}}.dump() << "\n";
  return 0;
}

struct RefineOpts {
  std::string ckpt;
  std::string in;
  std::string out;
  double tau_from_omega = 0.1;
  int tau = 0;
  std::optional<double> beta_w;
  std::string orientation;
  int steps = 100;
  std::uint64_t seed = 0;
  double perturb = 0.0;
};

int run_refine(const RefineOpts& o, std::ostream& out, std::ostream& err) {
  const LoadedModel m = load_model(o.ckpt);
  ConstraintWeightSchedule w;
  w.orientation = m.train.weights.orientation;
  w.steps = m.schedule.steps();
  if (o.beta_w) w.beta_w = *o.beta_w;
  if (!o.orientation.empty()) w.orientation = parse_orientation(o.orientation);
  const int tau = o.tau > 0 ? o.tau : weight_crossing_step(o.tau_from_omega, w);

  auto layouts = read_layouts(o.in, m.shape, -1.0, err);
  if (o.perturb > 0.0) {
    Rng rng(derive_seed(o.seed, 0x9e));
    for (auto& l : layouts) l = perturb_for_refinement(l, rng, o.perturb);
  }
  const auto refined = refine_layouts({m.ckpt.model, m.schedule, m.shape, layouts.front().canvas()}, layouts, tau,
                                      {o.steps, 0.0, o.seed});
  write_jsonl(refined, o.out);
  out << json{{"written", refined.size()}, {"tau", tau}, {"omega", constraint_weight(tau, w)}, {"out", o.out}}.dump()
      << "\n";
  return 0;
}

struct PostOpts {
  ShapeOpts shape;
  std::string in;
  std::string out;
  double delta = 1.0 / 64.0;
  std::string overlap = "off";
  int iters = 200;
};

int run_post(const PostOpts& o, std::ostream& out, std::ostream& err) {
  const auto layouts = read_layouts(o.in, o.shape.shape(), -1.0, err);
  PostConfig pc;
  pc.delta = o.delta;
  pc.use_overlap = on_off(o.overlap);
  pc.max_iters = o.iters;
  pc.validate();
  std::vector<Layout> result;
  int aborted = 0;
  for (const Layout& l : layouts) {
    PostResult r = postprocess_layout(l, pc);
    aborted += r.aborted;
    result.push_back(std::move(r.layout));
  }
  write_jsonl(result, o.out);
  out << json{{"written", result.size()},
              {"aborted", aborted},
              {"alignment_before", alignment_metric(layouts)},
              {"alignment_after", alignment_metric(result)},
              {"out", o.out}}
             .dump()
      << "\n";
  return 0;
}

struct EvalOpts {
  ShapeOpts shape;
  std::string gen;
  std::string ref;
  std::string out;
};

int run_eval(const EvalOpts& o, std::ostream& out, std::ostream& err) {
  const auto gen = read_layouts(o.gen, o.shape.shape(), -1.0, err);
  const auto ref = read_layouts(o.ref, o.shape.shape(), -1.0, err);
  const std::string report = evaluate(gen, ref).to_json().dump();
  if (!o.out.empty()) write_file_atomic(o.out, report + "\n");
  out << report << "\n";
  return 0;
}

struct RenderOpts {
  ShapeOpts shape;
  std::string in;
  std::string out_dir;
  int limit = 0;
};

int run_render(const RenderOpts& o, std::ostream& out, std::ostream& err) {
  const auto layouts = read_layouts(o.in, o.shape.shape(), -1.0, err);
  std::error_code ec;
  std::filesystem::create_directories(o.out_dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + o.out_dir + ": " + ec.message());
  const size_t n = o.limit > 0 ? std::min(layouts.size(), static_cast<size_t>(o.limit)) : layouts.size();
  for (size_t i = 0; i < n; ++i) {
    write_file_atomic(std::filesystem::path(o.out_dir) / ("layout_" + std::to_string(i) + ".svg"),
                      render_svg(layouts[i]));
  }
  out << json{{"written", n}, {"out_dir", o.out_dir}}.dump() << "\n";
  return 0;
}

void report(std::ostream& err, std::string_view code, int exit_code, const std::string& message) {
  err << json{{"error", {{"code", std::string(code)}, {"exit", exit_code}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layout generation with constrained continuous diffusion", "lace"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  SynthOpts synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic grid corpus");
  add_shape(s, synth.shape);
  s->add_option("--cols", synth.cols, "Columns per layout (1, 2, or 0 for mixed)")->capture_default_str();
  s->add_option("--count", synth.count, "Number of layouts")->capture_default_str();
  s->add_option("--rows-min", synth.rows_min)->capture_default_str();
  s->add_option("--rows-max", synth.rows_max)->capture_default_str();
  s->add_option("--width", synth.width, "Canvas width")->capture_default_str();
  s->add_option("--height", synth.height, "Canvas height")->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();
  s->add_option("--out", synth.out, "Output JSONL")->required();

  IngestOpts ing;
  auto* g = app.add_subcommand("ingest", "Validate a JSONL corpus and print statistics");
  add_shape(g, ing.shape);
  g->add_option("--in", ing.in, "Input JSONL")->required();
  g->add_option("--out", ing.out, "Write the validated corpus here");
  g->add_option("--eps-geom", ing.eps_geom, "Box range tolerance (negative disables checks)")->capture_default_str();

  TrainOpts tr;
  auto* t = app.add_subcommand("train", "Two-phase training");
  add_shape(t, tr.shape);
  t->add_option("--corpus", tr.corpus, "Training JSONL")->required();
  t->add_option("--ckpt", tr.ckpt, "Output checkpoint")->required();
  t->add_option("--log", tr.log_csv, "Per-step CSV log");
  t->add_option("--steps1", tr.steps1, "Phase 1 steps (constraints off)")->capture_default_str();
  t->add_option("--steps2", tr.steps2, "Phase 2 steps (constraints on)")->capture_default_str();
  t->add_option("--batch", tr.batch)->capture_default_str();
  t->add_option("--lr", tr.lr)->capture_default_str();
  t->add_option("--warmup", tr.warmup)->capture_default_str();
  t->add_option("--grad-clip", tr.grad_clip)->capture_default_str();
  t->add_option("--seed", tr.seed)->capture_default_str();
  t->add_option("--alignment", tr.alignment)->check(CLI::IsMember({"local", "global"}))->capture_default_str();
  t->add_option("--overlap", tr.overlap)->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  t->add_option("--alignment-weight", tr.alignment_weight)->capture_default_str();
  t->add_option("--overlap-weight", tr.overlap_weight)->capture_default_str();
  t->add_option("--beta-w", tr.beta_w, "Constraint weight rate")->capture_default_str();
  t->add_option("--constraint-orientation", tr.orientation)
      ->check(CLI::IsMember({"small-t-active", "large-t-active"}))
      ->capture_default_str();
  t->add_option("--complete-frac-max", tr.complete_frac_max)->capture_default_str();
  t->add_flag("--eps-unmasked-only", tr.eps_unmasked_only, "Noise loss on unmasked entries only");
  t->add_option("--checkpoint-every", tr.checkpoint_every)->capture_default_str();
  t->add_option("--log-every", tr.log_every, "Print progress to stderr every K steps")->capture_default_str();
  t->add_option("--embed-dim", tr.model.embed_dim)->capture_default_str();
  t->add_option("--layers", tr.model.n_layers)->capture_default_str();
  t->add_option("--heads", tr.model.n_heads)->capture_default_str();
  t->add_option("--ffn-dim", tr.model.ffn_dim)->capture_default_str();
  t->add_option("--time-dim", tr.model.time_embed_dim)->capture_default_str();

  SampleOpts sa;
  auto* p = app.add_subcommand("sample", "Unconditional or conditional generation");
  p->add_option("--ckpt", sa.ckpt)->required();
  p->add_option("--task", sa.task)->check(CLI::IsMember({"uncond", "c", "csz", "complete"}))->capture_default_str();
  p->add_option("--cond", sa.cond, "JSONL of layouts providing the known attributes");
  p->add_option("--out", sa.out)->required();
  p->add_option("--count", sa.count, "Layouts to draw (uncond)")->capture_default_str();
  p->add_option("--steps", sa.steps, "DDIM steps")->capture_default_str();
  p->add_option("--eta", sa.eta)->capture_default_str();
  p->add_option("--seed", sa.seed)->capture_default_str();
  p->add_option("--complete-frac-max", sa.complete_frac_max, "Known element fraction for completion")
      ->capture_default_str();

  RefineOpts rf;
  auto* r = app.add_subcommand("refine", "Partial reverse diffusion from a noisy layout");
  r->add_option("--ckpt", rf.ckpt)->required();
  r->add_option("--in", rf.in)->required();
  r->add_option("--out", rf.out)->required();
  auto* omega = r->add_option("--tau-from-omega", rf.tau_from_omega, "Start where the constraint weight equals this")
                    ->capture_default_str();
  r->add_option("--tau", rf.tau, "Explicit start step")->excludes(omega);
  r->add_option("--beta-w", rf.beta_w, "Constraint weight rate used to locate the start step");
  r->add_option("--constraint-orientation", rf.orientation)->check(CLI::IsMember({"small-t-active", "large-t-active"}));
  r->add_option("--steps", rf.steps, "Maximum DDIM steps")->capture_default_str();
  r->add_option("--seed", rf.seed)->capture_default_str();
  r->add_option("--perturb", rf.perturb, "Add Gaussian noise of this std to the input first")->capture_default_str();

  PostOpts po;
  auto* q = app.add_subcommand("post", "Alignment post-processing");
  add_shape(q, po.shape);
  q->add_option("--in", po.in)->required();
  q->add_option("--out", po.out)->required();
  q->add_option("--delta", po.delta, "Alignment threshold on the scaled canvas")->capture_default_str();
  q->add_option("--overlap", po.overlap)->check(CLI::IsMember({"on", "off"}))->capture_default_str();
  q->add_option("--iters", po.iters)->capture_default_str();

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "Metrics of generated layouts against references");
  add_shape(e, ev.shape);
  e->add_option("--gen", ev.gen)->required();
  e->add_option("--ref", ev.ref)->required();
  e->add_option("--out", ev.out, "Also write the JSON report here");

  RenderOpts re;
  auto* v = app.add_subcommand("render", "Write one SVG per layout");
  add_shape(v, re.shape);
  v->add_option("--in", re.in)->required();
  v->add_option("--out-dir", re.out_dir)->required();
  v->add_option("--limit", re.limit)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& pe) {
    report(err, "usage", kExitUsage, pe.what());
    return kExitUsage;
  } catch (const Error& ex) {
    report(err, error_code_name(ex.code()), static_cast<int>(ex.code()), ex.what());
    return static_cast<int>(ex.code());
  }

  try {
    if (s->parsed()) return run_synth(synth, out);
    if (g->parsed()) return run_ingest(ing, out, err);
    if (t->parsed()) return run_train(tr, out, err);
    if (p->parsed()) return run_sample(sa, out, err);
    if (r->parsed()) return run_refine(rf, out, err);
    if (q->parsed()) return run_post(po, out, err);
    if (e->parsed()) return run_eval(ev, out, err);
    if (v->parsed()) return run_render(re, out, err);
  } catch (const Error& ex) {
    report(err, error_code_name(ex.code()), static_cast<int>(ex.code()), ex.what());
    return static_cast<int>(ex.code());
  } catch (const json::exception& ex) {
    report(err, error_code_name(ErrorCode::kParse), static_cast<int>(ErrorCode::kParse), ex.what());
    return static_cast<int>(ErrorCode::kParse);
  } catch (const std::exception& ex) {
    report(err, "internal", kExitInternal, ex.what());
    return kExitInternal;
  }
  report(err, "usage", kExitUsage, "no subcommand given");
  return kExitUsage;
}

}  // namespace lace::cli
