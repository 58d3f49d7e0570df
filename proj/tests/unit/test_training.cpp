#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "lace/corpus.hpp"
#include "lace/error.hpp"
#include "lace/training.hpp"
#include "test_util.hpp"

using namespace lace;

namespace {

const LayoutShape kShape{5, 8};

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.phase1_steps = 6;
  c.phase2_steps = 6;
  c.warmup_steps = 2;
  c.model.input_dim = kShape.state_dim();
  c.model.seq_len = kShape.max_len;
  c.model.embed_dim = 8;
  c.model.n_heads = 2;
  c.model.ffn_dim = 16;
  c.model.time_embed_dim = 8;
  c.diffusion_steps = 100;
  c.weights.steps = 100;
  c.weights.beta_w = 0.02;
  return c;
}

std::vector<Layout> tiny_corpus(int count, std::uint64_t seed) {
  SyntheticGridSpec s;
  s.max_len = kShape.max_len;
  s.rows_max = 4;
  s.seed = seed;
  return generate_synthetic(s, count);
}

std::vector<const Layout*> pointers(const std::vector<Layout>& v) {
  std::vector<const Layout*> out;
  for (const auto& l : v) out.push_back(&l);
  return out;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.warmup_steps = 10;
  c.phase1_steps = 60;
  c.phase2_steps = 50;
  CHECK(learning_rate_at(0, c) == doctest::Approx(1e-4));
  CHECK(learning_rate_at(9, c) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(10, c) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(60, c) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(110, c) == doctest::Approx(0.0).epsilon(1e-12));
  for (int s = 11; s < 110; ++s) CHECK(learning_rate_at(s, c) <= learning_rate_at(s - 1, c));
}

TEST_CASE("config JSON round trip") {
  TrainConfig c = tiny_config();
  c.alignment = AlignmentKind::kLocal;
  c.weights.orientation = WeightOrientation::kLargeTActive;
  c.eps_loss_unmasked_only = true;
  c.alignment_weight = 2.0;
  c.overlap_weight = 0.5;
  const TrainConfig r = TrainConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  CHECK(r.to_json() == c.to_json());
  nlohmann::json bad = c.to_json();
  bad["alignment"] = "diagonal";
  CHECK_THROWS_AS(TrainConfig::from_json(bad), Error);
  c.overlap_weight = -1.0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("perfect noise oracle gives zero reconstruction losses") {
  const TrainConfig cfg = tiny_config();
  const NoiseSchedule s = make_linear_schedule(cfg.diffusion_steps);
  const auto corpus = tiny_corpus(3, 1);
  const auto batch = pointers(corpus);
  std::vector<ItemDraw> draws;
  Rng rng(2);
  for (size_t b = 0; b < batch.size(); ++b) {
    draws.push_back({rng.uniform_int(1, 100), rng.normal_matrix(kShape.max_len, kShape.state_dim()),
                     ConditionMask::Zero(kShape.max_len, kShape.state_dim())});
  }
  const Eigen::MatrixXd x_hat = batch_input(batch, draws, s);
  Eigen::MatrixXd eps(x_hat.rows(), x_hat.cols());
  for (size_t b = 0; b < batch.size(); ++b) eps.middleRows(b * kShape.max_len, kShape.max_len) = draws[b].noise;
  const BatchLoss l = batch_loss(batch, draws, x_hat, eps, s, cfg, true);
  CHECK(l.terms.l_simple == 0.0);
  CHECK(l.terms.l_mse < 1e-20);
  CHECK(l.terms.c_alg < 1e-9);
  CHECK(l.terms.c_olp == 0.0);
}

TEST_CASE("phase 1 loss has no constraint part") {
  const TrainConfig cfg = tiny_config();
  const NoiseSchedule s = make_linear_schedule(cfg.diffusion_steps);
  const auto corpus = tiny_corpus(4, 3);
  const auto batch = pointers(corpus);
  std::vector<ItemDraw> draws;
  for (size_t b = 0; b < batch.size(); ++b) draws.push_back(draw_item(*batch[b], 10 + b, cfg));
  Rng rng(4);
  const Eigen::MatrixXd x_hat = batch_input(batch, draws, s);
  const Eigen::MatrixXd eps = rng.normal_matrix(x_hat.rows(), x_hat.cols());
  const BatchLoss off = batch_loss(batch, draws, x_hat, eps, s, cfg, false);
  CHECK(off.terms.total == doctest::Approx(off.terms.l_simple + off.terms.l_mse).epsilon(1e-14));
  CHECK(off.terms.c_alg > 0.0);
  const BatchLoss on = batch_loss(batch, draws, x_hat, eps, s, cfg, true);
  CHECK(on.terms.total > off.terms.total);
}

TEST_CASE("training loss gradient matches finite differences") {
  Rng rng(5);
  for (AlignmentKind kind : {AlignmentKind::kGlobal, AlignmentKind::kLocal}) {
    for (bool unmasked : {false, true}) {
      TrainConfig cfg = tiny_config();
      cfg.alignment = kind;
      cfg.eps_loss_unmasked_only = unmasked;
      cfg.weights.beta_w = 0.05;
      const NoiseSchedule s = make_linear_schedule(cfg.diffusion_steps);
      const auto corpus = tiny_corpus(3, 6);
      const auto batch = pointers(corpus);
      std::vector<ItemDraw> draws;
      for (size_t b = 0; b < batch.size(); ++b) {
        draws.push_back(draw_item(*batch[b], 20 + b, cfg));
        draws.back().t = 1 + static_cast<int>(b) * 3;  // low t: constraints active
      }
      const Eigen::MatrixXd x_hat = batch_input(batch, draws, s);
      const Eigen::MatrixXd eps = 0.3 * rng.normal_matrix(x_hat.rows(), x_hat.cols());
      const BatchLoss l = batch_loss(batch, draws, x_hat, eps, s, cfg, true);
      const auto f = [&](const Eigen::MatrixXd& e) { return batch_loss(batch, draws, x_hat, e, s, cfg, true).terms.total; };
      CHECK(testing::grad_rel_error(l.eps_grad, testing::numeric_grad(f, eps)) <= 1e-4);
    }
  }
}

TEST_CASE("parameter gradient of the full loss") {
  TrainConfig cfg = tiny_config();
  cfg.weights.beta_w = 0.05;
  const NoiseSchedule s = make_linear_schedule(cfg.diffusion_steps);
  const auto corpus = tiny_corpus(2, 7);
  const auto batch = pointers(corpus);
  std::vector<ItemDraw> draws;
  for (size_t b = 0; b < batch.size(); ++b) draws.push_back(draw_item(*batch[b], 30 + b, cfg));
  Denoiser m(cfg.model, 8);
  Rng rng(9);
  for (auto& p : m.params()) p.value = 0.3 * rng.normal_matrix(p.value.rows(), p.value.cols());
  const LossAndGrad lg = loss_and_grad(m, batch, draws, s, cfg, true);
  for (size_t k : {size_t{0}, m.params().size() / 2, m.params().size() - 1}) {
    Eigen::MatrixXd& w = m.params()[k].value;
    const auto f = [&](const Eigen::MatrixXd& v) {
      const Eigen::MatrixXd keep = w;
      w = v;
      const double out = loss_and_grad(m, batch, draws, s, cfg, true).loss.terms.total;
      w = keep;
      return out;
    };
    INFO(m.params()[k].name);
    CHECK(testing::grad_rel_error(lg.grads[k], testing::numeric_grad(f, w)) <= 1e-3);
  }
}

TEST_CASE("a small gradient step decreases the loss") {
  const TrainConfig cfg = tiny_config();
  const NoiseSchedule s = make_linear_schedule(cfg.diffusion_steps);
  const auto corpus = tiny_corpus(4, 10);
  const auto batch = pointers(corpus);
  std::vector<ItemDraw> draws;
  for (size_t b = 0; b < batch.size(); ++b) draws.push_back(draw_item(*batch[b], 40 + b, cfg));
  Denoiser m(cfg.model, 11);
  const LossAndGrad before = loss_and_grad(m, batch, draws, s, cfg, true);
  double sq = 0.0;
  for (const auto& g : before.grads) sq += g.squaredNorm();
  for (size_t k = 0; k < m.params().size(); ++k) m.params()[k].value -= 1e-3 / std::sqrt(sq) * before.grads[k];
  CHECK(loss_and_grad(m, batch, draws, s, cfg, true).loss.terms.total < before.loss.terms.total);
}

TEST_CASE("seeded training is deterministic and phases differ by orientation") {
  const auto corpus = tiny_corpus(16, 12);
  TrainConfig cfg = tiny_config();
  const TrainResult a = train(corpus, cfg);
  const TrainResult b = train(corpus, cfg);
  REQUIRE(a.log.size() == 12);
  CHECK(log_to_csv(a.log) == log_to_csv(b.log));
  for (size_t k = 0; k < a.model.params().size(); ++k) {
    CHECK(a.model.params()[k].value == b.model.params()[k].value);
  }
  for (const auto& r : a.log) {
    CHECK(r.l_simple >= 0.0);
    CHECK(r.l_mse >= 0.0);
    CHECK(r.c_alg >= 0.0);
    CHECK(r.c_olp >= 0.0);
    CHECK(std::isfinite(r.total));
    CHECK(r.phase == (r.step <= 6 ? 1 : 2));
  }

  cfg.weights.orientation = WeightOrientation::kLargeTActive;
  const TrainResult c = train(corpus, cfg);
  for (int i = 0; i < 6; ++i) CHECK(c.log[i].total == a.log[i].total);
  bool differs = false;
  for (int i = 6; i < 12; ++i) differs |= c.log[i].total != a.log[i].total;
  CHECK(differs);
  CHECK(a.phase1_model.params()[0].value != a.model.params()[0].value);
}

TEST_CASE("non-finite parameters abort a step without updating") {
  const TrainConfig cfg = tiny_config();
  const NoiseSchedule s = make_linear_schedule(cfg.diffusion_steps);
  const auto corpus = tiny_corpus(4, 13);
  Denoiser m(cfg.model, 14);
  AdamState adam = AdamState::for_model(m);
  m.params()[2].value(0, 0) = std::numeric_limits<double>::infinity();
  const auto snapshot = m.params();
  try {
    training_step(m, adam, pointers(corpus), 1, cfg, s, 1);
    FAIL("non-finite step accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFinite);
  }
  CHECK(adam.step == 0);
  for (size_t k = 1; k < m.params().size(); ++k) CHECK(m.params()[k].value == snapshot[k].value);
}

TEST_CASE("training rejects empty corpora and bad configs") {
  CHECK_THROWS_AS(train({}, tiny_config()), Error);
  TrainConfig bad = tiny_config();
  bad.batch_size = 0;
  CHECK_THROWS_AS(train(tiny_corpus(2, 1), bad), Error);
}
