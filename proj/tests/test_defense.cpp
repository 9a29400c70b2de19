#include <catch2/catch_amalgamated.hpp>

#include "warpfool/defense.hpp"
#include "warpfool/imagecore.hpp"
#include "warpfool/warp.hpp"

using namespace warpfool;

TEST_CASE("zero epochs returns the freshly initialized network", "[defense]") {
  const Dataset ds = synth_dataset(1, 32, 10);
  nn::TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 44;
  AttackConfig atk;
  const nn::Network net = adversarial_train(ds, cfg, atk);
  const nn::Network fresh = nn::build_victim_lenet(4, 44);
  REQUIRE(net.epochs_trained == 0);
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto pa = net.layers[li]->params();
    auto pb = fresh.layers[li]->params();
    REQUIRE(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
  }
}

TEST_CASE("a degenerate range evaluates the fixed unit triple", "[defense]") {
  const nn::Network victim = nn::build_victim_lenet(4, 3);
  const Dataset ds = synth_dataset(2, 24, 10);
  const LabeledBatch batch = ds.train.head(12);

  const double acc = eval_random_transform(victim, batch, 1.0, 1.0, 99, 1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ImageTensor adv = transform_with_triple(batch.images[i], {1, 1, 1}, {},
                                                  PaddingMode::ZeroPad);
    if (victim.predict(adv) == batch.labels[i]) ++correct;
  }
  REQUIRE(acc == Catch::Approx(100.0 * double(correct) / double(batch.size())));
}

TEST_CASE("random-transform evaluation is reproducible and validated", "[defense]") {
  const nn::Network victim = nn::build_victim_lenet(4, 3);
  const Dataset ds = synth_dataset(3, 24, 10);
  const LabeledBatch batch = ds.train.head(12);
  const double a = eval_random_transform(victim, batch, 0.5, 0.9, 7, 2);
  const double b = eval_random_transform(victim, batch, 0.5, 0.9, 7, 2);
  REQUIRE(a == b);

  REQUIRE_THROWS_AS(eval_random_transform(victim, batch, 0.1, 0.9, 7),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(eval_random_transform(victim, batch, 0.9, 0.5, 7),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(eval_random_transform(victim, LabeledBatch{}, 0.5, 0.9, 7),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(eval_random_transform(victim, batch, 0.5, 0.9, 7, 0),
                    std::invalid_argument);
}

TEST_CASE("a short adversarial training run completes and learns", "[defense]") {
  const Dataset ds = synth_dataset(4, 64, 24);
  nn::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.seed = 5;
  AttackConfig atk;
  atk.max_steps = 2;
  atk.seed = 5;
  const nn::Network net = adversarial_train(ds, cfg, atk);
  REQUIRE(net.epochs_trained == 1);
  // One epoch over 64 shapes on clean+adversarial batches should beat chance.
  REQUIRE(nn::accuracy_pct(net, ds.test) > 40.0);
}

TEST_CASE("adversarial training is seed-reproducible", "[defense]") {
  const Dataset ds = synth_dataset(5, 32, 10);
  nn::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.seed = 11;
  AttackConfig atk;
  atk.max_steps = 2;
  atk.seed = 11;
  const nn::Network a = adversarial_train(ds, cfg, atk);
  const nn::Network b = adversarial_train(ds, cfg, atk);
  for (std::size_t li = 0; li < a.layers.size(); ++li) {
    auto pa = a.layers[li]->params();
    auto pb = b.layers[li]->params();
    REQUIRE(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
  }
}
