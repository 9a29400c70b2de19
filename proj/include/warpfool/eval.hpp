#pragma once

// Experiment harness: proposed attack, equal-triple baseline, random
// triples, the scale sweep, the padding comparison, and transfer
// matrices, plus CSV / Markdown report emission. Accuracy is always the
// percentage of test images the victim still classifies correctly; a
// lower number means a stronger attack.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "warpfool/attack.hpp"
#include "warpfool/imagecore.hpp"
#include "warpfool/nn.hpp"
#include "warpfool/parallel.hpp"
#include "warpfool/rng.hpp"
#include "warpfool/warp.hpp"

namespace warpfool {

struct EvalRow {
  std::string experiment;
  std::string model;
  std::string dataset;
  std::string padding;
  double accuracy_pct = 0.0;
  std::optional<double> mean_scale;  // absent for fixed/random-triple runs
  int n_images = 0;
  std::uint64_t seed = 0;
  double wall_time_s = 0.0;  // manifest/markdown only; report.csv stays
                             // byte-identical across repeated seeded runs
};

struct EvalReport {
  std::vector<EvalRow> rows;
};

struct PerImageRow {
  std::string experiment;
  int index = 0;
  int label = -1;
  int clean_pred = -1;
  int adv_pred = -1;
  bool success = false;
  double alpha = 0.0, beta = 0.0, gamma = 0.0;
  double mean_scale = 0.0;
  int steps_used = 0;
};

// ---------------------------------------------------------------------------
// Experiments

struct ProposedOutcome {
  double accuracy_pct = 0.0;
  double mean_scale = 0.0;  // averaged over all attacked images
  std::vector<AttackResult> results;
};

// Runs attack_batch over the test images. By default the whole set is
// one batch: the per-image attacks all face the same frozen
// discriminator state and one discriminator step follows. A nonzero
// chunk gives the alternating cadence instead (as adversarial training
// gets naturally from its minibatches).
template <VictimModel V, TrainableDiscriminator D>
ProposedOutcome eval_proposed(const V& victim, D& disc, const LabeledBatch& batch,
                              const AttackConfig& atk, int workers = 1,
                              std::size_t chunk = 0) {
  if (batch.size() == 0) throw std::invalid_argument("eval_proposed: empty batch");
  if (chunk == 0) chunk = batch.size();
  ProposedOutcome out;
  out.results.reserve(batch.size());
  for (std::size_t start = 0; start < batch.size(); start += chunk) {
    LabeledBatch part;
    const std::size_t stop = std::min(batch.size(), start + chunk);
    part.images.assign(batch.images.begin() + long(start), batch.images.begin() + long(stop));
    part.labels.assign(batch.labels.begin() + long(start), batch.labels.begin() + long(stop));
    std::vector<AttackResult> rs = attack_batch(part, victim, disc, atk, workers);
    for (auto& r : rs) out.results.push_back(std::move(r));
  }
  std::size_t correct = 0;
  double mean_acc = 0.0;
  for (std::size_t i = 0; i < out.results.size(); ++i) {
    if (!out.results[i].success) ++correct;
    mean_acc += out.results[i].mean_scale;
  }
  out.accuracy_pct = 100.0 * double(correct) / double(out.results.size());
  out.mean_scale = mean_acc / double(out.results.size());
  return out;
}

// Accuracy with alpha = beta = gamma = mean for every image.
template <VictimModel V>
double eval_baseline(const V& victim, const LabeledBatch& batch, double mean,
                     PaddingMode padding, const AuxConfig& aux = {}, int workers = 1) {
  if (batch.size() == 0) throw std::invalid_argument("eval_baseline: empty batch");
  const ScaleTriple t{mean, mean, mean};
  t.validate();
  std::vector<int> correct(batch.size(), 0);
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    const ImageTensor adv = transform_with_triple_total(batch.images[i], t, aux, padding);
    correct[i] = predict_class(victim, adv) == batch.labels[i] ? 1 : 0;
  });
  std::size_t n = 0;
  for (int c : correct) n += std::size_t(c);
  return 100.0 * double(n) / double(batch.size());
}

// Accuracy with per-image triples drawn iid uniform from [0.2, 1].
template <VictimModel V>
double eval_random(const V& victim, const LabeledBatch& batch, std::uint64_t seed,
                   PaddingMode padding, const AuxConfig& aux = {}, int workers = 1) {
  if (batch.size() == 0) throw std::invalid_argument("eval_random: empty batch");
  std::vector<int> correct(batch.size(), 0);
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    Rng rng(derive_seed(seed, 0xAA11D, i));
    const ScaleTriple t{rng.uniform(kScaleMin, kScaleMax),
                        rng.uniform(kScaleMin, kScaleMax),
                        rng.uniform(kScaleMin, kScaleMax)};
    const ImageTensor adv = transform_with_triple_total(batch.images[i], t, aux, padding);
    correct[i] = predict_class(victim, adv) == batch.labels[i] ? 1 : 0;
  });
  std::size_t n = 0;
  for (int c : correct) n += std::size_t(c);
  return 100.0 * double(n) / double(batch.size());
}

// Accuracy at alpha = beta = gamma = C for each factor C in the list.
template <VictimModel V>
std::vector<double> scale_sweep(const V& victim, const LabeledBatch& batch,
                                const std::vector<double>& factors,
                                PaddingMode padding, const AuxConfig& aux = {},
                                int workers = 1) {
  std::vector<double> out;
  out.reserve(factors.size());
  for (double f : factors)
    out.push_back(eval_baseline(victim, batch, f, padding, aux, workers));
  return out;
}

inline std::vector<double> default_sweep_factors() {
  return {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
}

// Proposed / baseline / random under both padding modes on the same
// images and seeds. The discriminator is rebuilt per mode so both runs
// start from the same state. Note the padding mode enters the objective,
// so the two modes legitimately explore different triples.
inline std::vector<EvalRow> eval_padding_comparison(const nn::Network& victim,
                                                    const LabeledBatch& batch,
                                                    const AttackConfig& atk,
                                                    const std::string& dataset_name,
                                                    int workers = 1) {
  std::vector<EvalRow> rows;
  for (PaddingMode mode : {PaddingMode::ZeroPad, PaddingMode::BorderExtrapolate}) {
    AttackConfig cfg = atk;
    cfg.padding = mode;
    nn::Network disc_net =
        nn::build_discriminator(victim.in_shape, derive_seed(cfg.seed, 0xD15C0));
    nn::TrainConfig disc_cfg = DiscCoTrainer::make_default_config();
    disc_cfg.seed = cfg.seed;
    DiscCoTrainer disc(disc_net, disc_cfg);
    const ProposedOutcome proposed = eval_proposed(victim, disc, batch, cfg, workers);
    rows.push_back({"proposed", victim.name, dataset_name, to_string(mode),
                    proposed.accuracy_pct, proposed.mean_scale, int(batch.size()),
                    cfg.seed, 0.0});
    const double base =
        eval_baseline(victim, batch, proposed.mean_scale, mode, cfg.aux, workers);
    rows.push_back({"baseline", victim.name, dataset_name, to_string(mode), base,
                    std::nullopt, int(batch.size()), cfg.seed, 0.0});
    const double rnd = eval_random(victim, batch, cfg.seed, mode, cfg.aux, workers);
    rows.push_back({"random", victim.name, dataset_name, to_string(mode), rnd,
                    std::nullopt, int(batch.size()), cfg.seed, 0.0});
  }
  return rows;
}

struct TransferOutcome {
  std::vector<std::string> names;
  // accuracy[i][j]: accuracy of model j on UAEs generated against model i
  std::vector<std::vector<double>> accuracy;
};

// Square transfer matrix across models. The diagonal is the proposed
// attack evaluated on its own source model.
inline TransferOutcome transfer_matrix(const std::vector<const nn::Network*>& models,
                                       const LabeledBatch& batch,
                                       const AttackConfig& atk, int workers = 1) {
  if (models.empty()) throw std::invalid_argument("transfer_matrix: no models");
  TransferOutcome out;
  out.names.reserve(models.size());
  for (const auto* m : models) out.names.push_back(m->name);
  out.accuracy.assign(models.size(), std::vector<double>(models.size(), 0.0));
  for (std::size_t i = 0; i < models.size(); ++i) {
    AttackConfig cfg = atk;
    cfg.seed = derive_seed(atk.seed, 0x7245, i);
    nn::Network disc_net =
        nn::build_discriminator(models[i]->in_shape, derive_seed(cfg.seed, 0xD15C0));
    nn::TrainConfig disc_cfg = DiscCoTrainer::make_default_config();
    disc_cfg.seed = cfg.seed;
    DiscCoTrainer disc(disc_net, disc_cfg);
    const ProposedOutcome vs_source =
        eval_proposed(*models[i], disc, batch, cfg, workers);
    for (std::size_t j = 0; j < models.size(); ++j) {
      if (j == i) {
        out.accuracy[i][j] = vs_source.accuracy_pct;
        continue;
      }
      std::size_t correct = 0;
      for (std::size_t n = 0; n < batch.size(); ++n)
        if (predict_class(*models[j], vs_source.results[n].adv_image) ==
            batch.labels[n])
          ++correct;
      out.accuracy[i][j] = 100.0 * double(correct) / double(batch.size());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report emission

namespace detail {

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

inline std::string fmt(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

}  // namespace detail

// Writes report.csv (RFC-4180) and report.md. The CSV carries only
// seed-deterministic fields; wall times go to the Markdown table.
inline void emit_report(const EvalReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create " + out_dir.string());

  {
    std::ofstream csv(out_dir / "report.csv", std::ios::binary);
    if (!csv) throw io_error("cannot write report.csv in " + out_dir.string());
    csv << "experiment,model,dataset,padding,accuracy_pct,mean_scale,n_images,seed\n";
    for (const auto& r : report.rows) {
      csv << detail::csv_quote(r.experiment) << "," << detail::csv_quote(r.model)
          << "," << detail::csv_quote(r.dataset) << ","
          << detail::csv_quote(r.padding) << "," << detail::fmt(r.accuracy_pct, 2)
          << "," << (r.mean_scale ? detail::fmt(*r.mean_scale, 4) : std::string())
          << "," << r.n_images << "," << r.seed << "\n";
    }
  }
  {
    std::ofstream md(out_dir / "report.md", std::ios::binary);
    if (!md) throw io_error("cannot write report.md in " + out_dir.string());
    md << "| experiment | model | dataset | padding | accuracy % | mean scale | n | "
          "seed | wall s |\n";
    md << "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : report.rows) {
      md << "| " << r.experiment << " | " << r.model << " | " << r.dataset << " | "
         << r.padding << " | " << detail::fmt(r.accuracy_pct, 2) << " | "
         << (r.mean_scale ? detail::fmt(*r.mean_scale, 4) : std::string("-")) << " | "
         << r.n_images << " | " << r.seed << " | " << detail::fmt(r.wall_time_s, 1)
         << " |\n";
    }
  }
}

// Per-image audit trail; the summary accuracy is recomputable from the
// success column.
inline void emit_per_image(const std::vector<PerImageRow>& rows,
                           const std::filesystem::path& out_dir,
                           const std::string& filename = "per_image.csv") {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create " + out_dir.string());
  std::ofstream csv(out_dir / filename, std::ios::binary);
  if (!csv) throw io_error("cannot write " + filename);
  csv << "experiment,index,label,clean_pred,adv_pred,success,alpha,beta,gamma,"
         "mean_scale,steps_used\n";
  for (const auto& r : rows) {
    csv << detail::csv_quote(r.experiment) << "," << r.index << "," << r.label << ","
        << r.clean_pred << "," << r.adv_pred << "," << (r.success ? 1 : 0) << ","
        << detail::fmt(r.alpha, 6) << "," << detail::fmt(r.beta, 6) << ","
        << detail::fmt(r.gamma, 6) << "," << detail::fmt(r.mean_scale, 6) << ","
        << r.steps_used << "\n";
  }
}

inline std::vector<PerImageRow> per_image_rows(const std::string& experiment,
                                               const LabeledBatch& batch,
                                               const std::vector<AttackResult>& results) {
  std::vector<PerImageRow> rows;
  rows.reserve(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    const AttackResult& r = results[i];
    rows.push_back({experiment, int(i), batch.labels[i], r.clean_pred, r.adv_pred,
                    r.success, r.triple.alpha, r.triple.beta, r.triple.gamma,
                    r.mean_scale, r.steps_used});
  }
  return rows;
}

// Writes up to k original/adversarial image pairs as
// idx_{n}_clean.pgm / idx_{n}_adv_{predlabel}.pgm.
inline void emit_pairs_grid(const LabeledBatch& batch,
                            const std::vector<AttackResult>& results,
                            const std::filesystem::path& out_dir, std::size_t k) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create " + out_dir.string());
  const std::size_t n = std::min(k, results.size());
  for (std::size_t i = 0; i < n; ++i) {
    const char* ext = batch.images[i].channels == 3 ? ".ppm" : ".pgm";
    save_image(batch.images[i],
               out_dir / ("idx_" + std::to_string(i) + "_clean" + ext));
    save_image(results[i].adv_image,
               out_dir / ("idx_" + std::to_string(i) + "_adv_" +
                          std::to_string(results[i].adv_pred) + ext));
  }
}

}  // namespace warpfool
