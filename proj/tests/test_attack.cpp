#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "warpfool/attack.hpp"
#include "warpfool/imagecore.hpp"
#include "warpfool/nn.hpp"

using namespace warpfool;

namespace {

ImageTensor test_image(std::uint64_t seed = 1) {
  const Dataset ds = synth_dataset(seed, 12, 10);
  return ds.train.images[0];
}

// Victim with all-zero weights: uniform probabilities, argmax 0.
nn::Network zero_victim(int classes = 10) {
  nn::Network net;
  net.in_shape = {1, 28, 28};
  net.head = nn::Head::Softmax;
  net.class_count = classes;
  net.name = "zero-victim";
  net.layers.push_back(std::make_unique<nn::Flatten>());
  net.layers.push_back(std::make_unique<nn::Dense>(784, classes));
  return net;
}

// Discriminator with all-zero weights: logit 0, q = 0.5 everywhere.
nn::Network zero_disc() {
  nn::Network net;
  net.in_shape = {1, 28, 28};
  net.head = nn::Head::Sigmoid;
  net.class_count = 2;
  net.name = "zero-disc";
  net.layers.push_back(std::make_unique<nn::Flatten>());
  net.layers.push_back(std::make_unique<nn::Dense>(784, 1));
  return net;
}

struct NoOpDisc {
  double adversarial_logit(const ImageTensor&) const { return 0.0; }
  void fit_batch(const std::vector<const ImageTensor*>&, const std::vector<int>&) {}
};

}  // namespace

TEST_CASE("objective closed form: uniform victim, indifferent discriminator",
          "[attack]") {
  const nn::Network victim = zero_victim(10);
  const nn::Network disc = zero_disc();
  AttackConfig cfg;
  cfg.disc_weight = 100.0;
  const ImageTensor img = test_image();

  const LossBreakdown loss = objective({0.5, 0.5, 0.5}, img, 3, victim, disc, cfg);
  REQUIRE(loss.victim_ce == Catch::Approx(std::log(10.0)).margin(1e-9));
  REQUIRE(loss.disc_bce == Catch::Approx(std::log(2.0)).margin(1e-9));
  REQUIRE(loss.objective ==
          Catch::Approx(2.302585 + 50.0 * 0.693147).margin(1e-4));
  REQUIRE(loss.objective == Catch::Approx(36.9600).margin(1e-3));
}

TEST_CASE("objective with W = 0 reduces to the victim term", "[attack]") {
  const nn::Network victim = zero_victim(10);
  const nn::Network disc = zero_disc();
  AttackConfig cfg;
  cfg.disc_weight = 0.0;
  const LossBreakdown loss =
      objective({0.7, 0.9, 0.4}, test_image(), 2, victim, disc, cfg);
  REQUIRE(loss.objective == loss.victim_ce);
  REQUIRE(loss.disc_bce > 0.0);  // still reported
}

TEST_CASE("objective is affine in W with slope disc_bce / 2", "[attack]") {
  const nn::Network victim = zero_victim(10);
  const nn::Network disc = zero_disc();
  AttackConfig c1, c2;
  c1.disc_weight = 10.0;
  c2.disc_weight = 170.0;
  const ImageTensor img = test_image(4);
  const LossBreakdown l1 = objective({0.5, 0.6, 0.7}, img, 1, victim, disc, c1);
  const LossBreakdown l2 = objective({0.5, 0.6, 0.7}, img, 1, victim, disc, c2);
  REQUIRE(l2.objective - l1.objective ==
          Catch::Approx((170.0 - 10.0) / 2.0 * l1.disc_bce).margin(1e-9));
}

TEST_CASE("objective is deterministic to the last bit", "[attack]") {
  const nn::Network victim = nn::build_victim_lenet(10, 3);
  const nn::Network disc = nn::build_discriminator({1, 28, 28}, 4);
  AttackConfig cfg;
  const ImageTensor img = test_image(9);
  const LossBreakdown a = objective({0.31, 0.77, 0.52}, img, 5, victim, disc, cfg);
  const LossBreakdown b = objective({0.31, 0.77, 0.52}, img, 5, victim, disc, cfg);
  REQUIRE(a.objective == b.objective);
  REQUIRE(a.victim_ce == b.victim_ce);
  REQUIRE(a.disc_bce == b.disc_bce);
}

TEST_CASE("fd_gradient_of matches a polynomial oracle", "[attack]") {
  auto f = [](const ScaleTriple& t) {
    return t.alpha * t.alpha + 2.0 * t.beta * t.beta + 3.0 * t.gamma * t.gamma;
  };
  const auto g = fd_gradient_of(f, {0.5, 0.5, 0.5}, 1e-3, 0.2, 1.0);
  REQUIRE(g[0] == Catch::Approx(1.0).margin(1e-6));
  REQUIRE(g[1] == Catch::Approx(2.0).margin(1e-6));
  REQUIRE(g[2] == Catch::Approx(3.0).margin(1e-6));
}

TEST_CASE("fd_gradient of a constant function is zero", "[attack]") {
  auto f = [](const ScaleTriple&) { return 4.2; };
  const auto g = fd_gradient_of(f, {0.5, 0.6, 0.7}, 1e-3, 0.2, 1.0);
  REQUIRE(g[0] == 0.0);
  REQUIRE(g[1] == 0.0);
  REQUIRE(g[2] == 0.0);
}

TEST_CASE("fd_gradient agrees with a five-point Richardson oracle", "[attack]") {
  // A briefly trained victim gives the objective real slopes; an
  // untrained one is nearly flat and starves the |g| > 1e-3 filter.
  const Dataset ds = synth_dataset(2, 256, 10);
  nn::Network victim = nn::build_victim_lenet(4, 12);
  nn::TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 32;
  tc.seed = 12;
  nn::train_classifier(victim, ds.train, tc);
  const nn::Network disc = nn::build_discriminator({1, 28, 28}, 13);
  AttackConfig cfg;
  const ImageTensor img = ds.train.images[0];
  const int label = ds.train.labels[0];

  auto j = [&](const ScaleTriple& t) {
    return objective(t, img, label, victim, disc, cfg).objective;
  };

  Rng rng(77);
  int compared = 0;
  // Scan random triples until enough coordinates pass the smoothness
  // filter to make the comparison meaningful.
  for (int trial = 0; trial < 40 && compared < 8; ++trial) {
    const ScaleTriple t{rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9),
                        rng.uniform(0.3, 0.9)};
    if (std::abs(t.alpha - 3.0 * t.gamma) < 0.02) continue;
    const auto g = fd_gradient(t, img, label, victim, disc, cfg);
    for (int i = 0; i < 3; ++i) {
      // Five-point Richardson stencil around coordinate i.
      auto rich_at = [&](double h) {
        ScaleTriple p1 = t, p2 = t, m1 = t, m2 = t;
        double* c1 = i == 0 ? &p1.alpha : i == 1 ? &p1.beta : &p1.gamma;
        double* c2 = i == 0 ? &p2.alpha : i == 1 ? &p2.beta : &p2.gamma;
        double* c3 = i == 0 ? &m1.alpha : i == 1 ? &m1.beta : &m1.gamma;
        double* c4 = i == 0 ? &m2.alpha : i == 1 ? &m2.beta : &m2.gamma;
        *c1 += h;
        *c2 += 2.0 * h;
        *c3 -= h;
        *c4 -= 2.0 * h;
        return (-j(p2) + 8.0 * j(p1) - 8.0 * j(m1) + j(m2)) / (12.0 * h);
      };
      const double rich = rich_at(cfg.fd_step);
      auto central_at = [&](double h) {
        ScaleTriple p = t, m = t;
        double* cp = i == 0 ? &p.alpha : i == 1 ? &p.beta : &p.gamma;
        double* cm = i == 0 ? &m.alpha : i == 1 ? &m.beta : &m.gamma;
        *cp += h;
        *cm -= h;
        return (j(p) - j(m)) / (2.0 * h);
      };
      // Bilinear sampling makes J only piecewise-smooth. The comparison
      // is meaningful only where the whole +-2h stencil sits inside one
      // smooth piece, diagnosed by mutual consistency of the central
      // estimates at h/2, h, and 2h; elsewhere it would measure
      // truncation error rather than correctness.
      const double c_half = central_at(cfg.fd_step / 2.0);
      const double c_twoh = central_at(cfg.fd_step * 2.0);
      const double scale = std::max(std::abs(g[std::size_t(i)]), 1e-3);
      const bool smooth = std::abs(g[std::size_t(i)] - c_half) / scale < 1e-3 &&
                          std::abs(c_twoh - g[std::size_t(i)]) / scale < 4e-3;
      if (smooth && std::abs(g[std::size_t(i)]) > 1e-3) {
        REQUIRE(std::abs(g[std::size_t(i)] - rich) /
                    std::abs(g[std::size_t(i)]) <
                1e-2);
        ++compared;
      }
    }
  }
  REQUIRE(compared > 5);
}

TEST_CASE("a victim that is always wrong succeeds at step zero", "[attack]") {
  const nn::Network victim = zero_victim(10);  // argmax always 0
  NoOpDisc disc;
  AttackConfig cfg;
  const AttackResult r = attack_image(test_image(), 1, victim, disc, cfg);
  REQUIRE(r.success);
  REQUIRE(r.triple.alpha == 1.0);
  REQUIRE(r.triple.beta == 1.0);
  REQUIRE(r.triple.gamma == 1.0);
  REQUIRE(r.mean_scale == 1.0);
  REQUIRE(r.steps_used == 1);
  REQUIRE(r.loss_trace.size() == 1);
  REQUIRE(r.adv_pred == 0);
  REQUIRE(r.clean_pred == 0);
}

TEST_CASE("a victim that is never wrong exhausts the budget", "[attack]") {
  const nn::Network victim = zero_victim(10);
  NoOpDisc disc;
  AttackConfig cfg;
  cfg.max_steps = 7;
  const AttackResult r = attack_image(test_image(), 0, victim, disc, cfg);
  REQUIRE_FALSE(r.success);
  REQUIRE(r.steps_used == 7);
  REQUIRE(r.loss_trace.size() == 7);
  REQUIRE(r.adv_pred == 0);  // still "correct"
  r.triple.validate();
}

TEST_CASE("returned triples stay inside the bounds", "[attack]") {
  const nn::Network victim = nn::build_victim_lenet(4, 21);
  NoOpDisc disc;
  AttackConfig cfg;
  cfg.max_steps = 12;
  const Dataset ds = synth_dataset(17, 16, 10);
  for (std::size_t i = 0; i < 8; ++i) {
    const AttackResult r =
        attack_image(ds.train.images[i], ds.train.labels[i], victim, disc, cfg);
    REQUIRE(r.triple.alpha >= 0.2);
    REQUIRE(r.triple.alpha <= 1.0);
    REQUIRE(r.triple.beta >= 0.2);
    REQUIRE(r.triple.beta <= 1.0);
    REQUIRE(r.triple.gamma >= 0.2);
    REQUIRE(r.triple.gamma <= 1.0);
    // Success must be consistent with re-running the victim.
    REQUIRE(r.success == (predict_class(victim, r.adv_image) != ds.train.labels[i]));
    REQUIRE(int(r.loss_trace.size()) == r.steps_used);
  }
}

TEST_CASE("worker count does not change attack results", "[attack]") {
  const Dataset ds = synth_dataset(31, 16, 10);
  LabeledBatch batch = ds.train.head(8);
  const nn::Network victim = nn::build_victim_lenet(4, 2);
  AttackConfig cfg;
  cfg.max_steps = 6;
  cfg.seed = 5;

  nn::Network d1 = nn::build_discriminator({1, 28, 28}, 8);
  nn::Network d2 = nn::build_discriminator({1, 28, 28}, 8);
  nn::TrainConfig dc = DiscCoTrainer::make_default_config();
  dc.seed = 5;
  DiscCoTrainer t1(d1, dc), t2(d2, dc);

  const auto r1 = attack_batch(batch, victim, t1, cfg, 1);
  const auto r2 = attack_batch(batch, victim, t2, cfg, 2);
  REQUIRE(r1.size() == r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) {
    REQUIRE(r1[i].success == r2[i].success);
    REQUIRE(r1[i].triple.alpha == r2[i].triple.alpha);
    REQUIRE(r1[i].triple.beta == r2[i].triple.beta);
    REQUIRE(r1[i].triple.gamma == r2[i].triple.gamma);
    REQUIRE(r1[i].adv_image.data == r2[i].adv_image.data);
    REQUIRE(r1[i].loss_trace == r2[i].loss_trace);
  }
  // The two discriminators saw identical pools in identical order.
  auto p1 = d1.layers[0]->params();
  auto p2 = d2.layers[0]->params();
  REQUIRE(std::equal(p1.begin(), p1.end(), p2.begin(), p2.end()));
}

TEST_CASE("empty batch yields an empty result list", "[attack]") {
  const nn::Network victim = zero_victim(4);
  NoOpDisc disc;
  AttackConfig cfg;
  const LabeledBatch batch;
  const auto rs = attack_batch(batch, victim, disc, cfg, 4);
  REQUIRE(rs.empty());
}

TEST_CASE("discriminator loss decreases over alternations", "[attack]") {
  const Dataset ds = synth_dataset(41, 24, 10);
  LabeledBatch batch = ds.train.head(16);
  const nn::Network victim = zero_victim(4);

  nn::Network disc_net = nn::build_discriminator({1, 28, 28}, 3);
  nn::TrainConfig dc = DiscCoTrainer::make_default_config();
  dc.seed = 3;
  DiscCoTrainer disc(disc_net, dc);

  AttackConfig cfg;
  cfg.max_steps = 2;

  auto pool_bce = [&](const std::vector<AttackResult>& rs) {
    std::vector<const ImageTensor*> pool;
    std::vector<int> tags;
    for (const auto& r : rs) {
      pool.push_back(&r.adv_image);
      tags.push_back(1);
    }
    for (const auto& img : batch.images) {
      pool.push_back(&img);
      tags.push_back(0);
    }
    return disc_pool_bce(disc, pool, tags);
  };

  double first = -1.0, last = -1.0;
  for (int round = 0; round < 10; ++round) {
    const auto rs = attack_batch(batch, victim, disc, cfg, 1);
    const double bce = pool_bce(rs);
    if (round == 0) first = bce;
    last = bce;
  }
  REQUIRE(last < first);
}

TEST_CASE("config validation rejects bad settings", "[attack]") {
  AttackConfig cfg;
  cfg.disc_weight = -1.0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.fd_step = 0.5;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.max_steps = 0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.bound_lo = 0.9;
  cfg.bound_hi = 0.3;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}
