#pragma once

// Adversarial training against the triple attack, and robustness
// evaluation under randomly sampled triples.

#include <functional>

#include "warpfool/attack.hpp"
#include "warpfool/eval.hpp"
#include "warpfool/imagecore.hpp"
#include "warpfool/nn.hpp"

namespace warpfool {

using VictimBuilder = std::function<nn::Network(int class_count, std::uint64_t seed)>;

inline VictimBuilder lenet_builder() {
  return [](int classes, std::uint64_t seed) {
    return nn::build_victim_lenet(classes, seed);
  };
}

// Interleaves clean and attack-generated batches: per iteration, one
// optimizer step on the clean batch, then UAEs generated for that batch
// against the current model (reduced attack budget), then one step on
// the adversarial batch with the original labels. The discriminator is
// re-initialized at the start and co-trains through the attack batches.
inline nn::Network adversarial_train(const Dataset& dataset,
                                     const nn::TrainConfig& cfg,
                                     const AttackConfig& atk_in, int workers = 1,
                                     const VictimBuilder& build = lenet_builder()) {
  dataset.validate();
  cfg.validate();
  nn::Network victim = build(dataset.class_count, cfg.seed);
  if (cfg.epochs == 0) return victim;

  AttackConfig atk = atk_in;
  atk.max_steps = std::min(atk.max_steps, 15);  // training-time budget

  nn::Network disc_net = nn::build_discriminator(victim.in_shape,
                                                 derive_seed(cfg.seed, 0xADD15C));
  nn::TrainConfig disc_cfg = DiscCoTrainer::make_default_config();
  disc_cfg.seed = cfg.seed;
  DiscCoTrainer disc(disc_net, disc_cfg);

  nn::Trainer trainer(victim, cfg);
  Rng shuffle_rng(derive_seed(cfg.seed, 0xADF));
  const LabeledBatch& train = dataset.train;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    for (std::size_t start = 0; start < order.size();
         start += std::size_t(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + std::size_t(cfg.batch_size));
      LabeledBatch part;
      std::vector<const ImageTensor*> clean_ptrs;
      std::vector<int> labels;
      for (std::size_t i = start; i < stop; ++i) {
        part.images.push_back(train.images[order[i]]);
        part.labels.push_back(train.labels[order[i]]);
        labels.push_back(train.labels[order[i]]);
      }
      for (const auto& img : part.images) clean_ptrs.push_back(&img);

      trainer.fit_classifier_batch(clean_ptrs, labels);

      const std::vector<AttackResult> uaes =
          attack_batch(part, victim, disc, atk, workers);

      std::vector<const ImageTensor*> adv_ptrs;
      adv_ptrs.reserve(uaes.size());
      for (const auto& r : uaes) adv_ptrs.push_back(&r.adv_image);
      trainer.fit_classifier_batch(adv_ptrs, labels);
    }
    victim.epochs_trained += 1;
  }
  return victim;
}

// Mean accuracy over n_trials random transformations per image, triples
// drawn iid uniform from [range_lo, range_hi]. Reproducible from seed.
template <VictimModel V>
double eval_random_transform(const V& victim, const LabeledBatch& batch,
                             double range_lo, double range_hi, std::uint64_t seed,
                             int n_trials = 1, PaddingMode padding = PaddingMode::ZeroPad,
                             const AuxConfig& aux = {}, int workers = 1) {
  if (batch.size() == 0)
    throw std::invalid_argument("eval_random_transform: empty batch");
  if (!(range_lo >= kScaleMin && range_lo <= range_hi && range_hi <= kScaleMax))
    throw std::invalid_argument("eval_random_transform: bad range");
  if (n_trials < 1) throw std::invalid_argument("eval_random_transform: n_trials < 1");

  std::vector<int> correct(batch.size() * std::size_t(n_trials), 0);
  parallel_for(correct.size(), workers, [&](std::size_t idx) {
    const std::size_t trial = idx / batch.size();
    const std::size_t i = idx % batch.size();
    Rng rng(derive_seed(seed, trial, i));
    const ScaleTriple t{rng.uniform(range_lo, range_hi),
                        rng.uniform(range_lo, range_hi),
                        rng.uniform(range_lo, range_hi)};
    const ImageTensor adv =
        transform_with_triple_total(batch.images[i], t, aux, padding);
    correct[idx] = predict_class(victim, adv) == batch.labels[i] ? 1 : 0;
  });
  std::size_t n = 0;
  for (int c : correct) n += std::size_t(c);
  return 100.0 * double(n) / double(correct.size());
}

}  // namespace warpfool
