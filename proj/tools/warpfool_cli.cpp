// Command-line front end: binds datasets, models, attack configs, and
// the experiment harness. Every run writes its artifacts plus a
// manifest.json with the effective configuration, the seed, and
// git-style content hashes of any weight files, enough to reproduce the
// run. Exit codes: 0 success, 2 usage error, 1 runtime error.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "warpfool/defense.hpp"
#include "warpfool/eval.hpp"
#include "warpfool/imagecore.hpp"
#include "warpfool/nn.hpp"
#include "warpfool/parallel.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace warpfool;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Hash a file the way git hashes a blob: sha1("blob <size>\0" + bytes).
std::string git_blob_sha1(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  std::string preimage = "blob " + std::to_string(bytes.size());
  preimage.push_back('\0');
  preimage += bytes;

  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(preimage.data(), preimage.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("sha1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

struct CommonOpts {
  std::string out_dir;
  std::string dataset = "synth";
  std::string images, labels;              // mnist test split
  std::string train_images, train_labels;  // mnist train split
  int synth_train = 2000;
  int synth_test = 500;
  std::uint64_t seed = 0;
  std::string padding = "zero";
  std::string aux_formula = "midpoint";
  int bias_px = 1;
  double w_disc = 100.0;
  double lr = 0.05;
  int steps = 60;
  int workers = hardware_workers();
  double range_min = kScaleMin;
  double range_max = kScaleMax;
  int n = 200;
};

std::uint64_t env_seed_default() {
  if (const char* env = std::getenv("WARPFOOL_SEED"))
    return std::strtoull(env, nullptr, 10);
  return 0;
}

void add_common(CLI::App* cmd, CommonOpts& o, bool with_dataset = true) {
  cmd->add_option("--out", o.out_dir, "output directory")->required();
  cmd->add_option("--seed", o.seed, "RNG seed (default: $WARPFOOL_SEED or 0)");
  cmd->add_option("--workers", o.workers, "parallel attack workers");
  if (with_dataset) {
    cmd->add_option("--dataset", o.dataset, "dataset: mnist or synth")
        ->check(CLI::IsMember({"mnist", "synth"}));
    cmd->add_option("--images", o.images, "IDX test images (mnist)");
    cmd->add_option("--labels", o.labels, "IDX test labels (mnist)");
    cmd->add_option("--train-images", o.train_images, "IDX train images (mnist)");
    cmd->add_option("--train-labels", o.train_labels, "IDX train labels (mnist)");
    cmd->add_option("--synth-train", o.synth_train, "synthetic train size");
    cmd->add_option("--synth-test", o.synth_test, "synthetic test size");
  }
}

void add_attack_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--padding", o.padding, "padding: zero or border")
      ->check(CLI::IsMember({"zero", "border"}));
  cmd->add_option("--aux-formula", o.aux_formula, "aux points: paper or midpoint")
      ->check(CLI::IsMember({"paper", "midpoint"}));
  cmd->add_option("--bias-px", o.bias_px, "aux bias in pixels")
      ->check(CLI::IsMember({1, 2}));
  cmd->add_option("--w-disc", o.w_disc, "discriminator weight W")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--lr", o.lr, "attack step size")->check(CLI::PositiveNumber);
  cmd->add_option("--steps", o.steps, "attack step budget")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--range-min", o.range_min, "lower scale bound")
      ->check(CLI::Range(kScaleMin, kScaleMax));
  cmd->add_option("--range-max", o.range_max, "upper scale bound")
      ->check(CLI::Range(kScaleMin, kScaleMax));
  cmd->add_option("--n", o.n, "number of test images")->check(CLI::PositiveNumber);
}

PaddingMode padding_of(const CommonOpts& o) {
  return o.padding == "zero" ? PaddingMode::ZeroPad : PaddingMode::BorderExtrapolate;
}

AuxConfig aux_of(const CommonOpts& o) {
  return {o.bias_px, o.aux_formula == "paper" ? AuxFormula::PaperVerbatim
                                              : AuxFormula::MidpointConsistent};
}

AttackConfig attack_of(const CommonOpts& o) {
  AttackConfig cfg;
  cfg.disc_weight = o.w_disc;
  cfg.lr = o.lr;
  cfg.max_steps = o.steps;
  cfg.padding = padding_of(o);
  cfg.aux = aux_of(o);
  cfg.seed = o.seed;
  cfg.bound_lo = o.range_min;
  cfg.bound_hi = o.range_max;
  cfg.validate();
  return cfg;
}

Dataset load_dataset(const CommonOpts& o, bool need_train) {
  if (o.dataset == "synth") return synth_dataset(o.seed, o.synth_train, o.synth_test);
  Dataset ds;
  ds.name = "mnist";
  ds.class_count = 10;
  if (o.images.empty() || o.labels.empty())
    throw std::invalid_argument("mnist dataset needs --images and --labels");
  ds.test = load_idx(o.images, o.labels);
  if (need_train) {
    if (o.train_images.empty() || o.train_labels.empty())
      throw std::invalid_argument(
          "mnist training needs --train-images and --train-labels");
    ds.train = load_idx(o.train_images, o.train_labels);
  }
  return ds;
}

json manifest_base(const std::string& subcommand, const CommonOpts& o) {
  json m;
  m["subcommand"] = subcommand;
  m["seed"] = o.seed;
  m["dataset"] = o.dataset;
  m["padding"] = o.padding;
  m["aux_formula"] = o.aux_formula;
  m["bias_px"] = o.bias_px;
  m["w_disc"] = o.w_disc;
  m["lr"] = o.lr;
  m["steps"] = o.steps;
  m["workers"] = o.workers;
  m["range"] = {o.range_min, o.range_max};
  m["n"] = o.n;
  if (o.dataset == "synth") {
    m["synth_train"] = o.synth_train;
    m["synth_test"] = o.synth_test;
  }
  return m;
}

void write_manifest(json m, const fs::path& out_dir,
                    const std::vector<fs::path>& weight_files) {
  json hashes = json::object();
  for (const auto& w : weight_files)
    hashes[w.filename().string()] = git_blob_sha1(w);
  m["weight_hashes"] = hashes;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create " + out_dir.string());
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  if (!out) throw io_error("cannot write manifest.json");
  out << m.dump(2) << "\n";
}

nn::Network build_arch(const std::string& arch, int classes, std::uint64_t seed) {
  if (arch == "lenet") return nn::build_victim_lenet(classes, seed);
  if (arch == "lenet-wide") return nn::build_victim_lenet_wide(classes, seed);
  throw std::invalid_argument("unknown arch " + arch);
}

DiscCoTrainer make_disc(nn::Network& disc_net, std::uint64_t seed) {
  nn::TrainConfig cfg = DiscCoTrainer::make_default_config();
  cfg.seed = seed;
  return DiscCoTrainer(disc_net, cfg);
}

// -------------------------------------------------------------------------
// Subcommand drivers

int run_train_victim(const CommonOpts& o, const std::string& arch, int epochs,
                     int batch_size, double train_lr) {
  const Dataset ds = load_dataset(o, true);
  nn::Network net = build_arch(arch, ds.class_count, o.seed);
  nn::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.lr = train_lr;
  cfg.seed = o.seed;

  const double t0 = now_s();
  const std::vector<double> losses = nn::train_classifier(net, ds.train, cfg);
  const double train_time = now_s() - t0;
  const double acc = nn::accuracy_pct(net, ds.test);

  fs::create_directories(o.out_dir);
  const fs::path weights = fs::path(o.out_dir) / "victim.bin";
  save_weights(net, weights);

  EvalReport report;
  report.rows.push_back({"clean", net.name, ds.name, "-", acc, std::nullopt,
                         int(ds.test.size()), o.seed, train_time});
  emit_report(report, o.out_dir);

  json m = manifest_base("train-victim", o);
  m["arch"] = arch;
  m["epochs"] = epochs;
  m["batch_size"] = batch_size;
  m["train_lr"] = train_lr;
  m["clean_accuracy_pct"] = acc;
  write_manifest(m, o.out_dir, {weights});

  std::cout << "trained " << net.name << " on " << ds.name << ": clean accuracy "
            << acc << "% (" << ds.test.size() << " images)\n";
  return 0;
}

int run_attack(const CommonOpts& o, const std::string& model_path, int pairs) {
  const Dataset ds = load_dataset(o, false);
  const nn::Network victim = nn::load_weights(model_path);
  const LabeledBatch batch = ds.test.head(std::size_t(o.n));
  const AttackConfig atk = attack_of(o);

  nn::Network disc_net =
      nn::build_discriminator(victim.in_shape, derive_seed(o.seed, 0xD15C0));
  DiscCoTrainer disc = make_disc(disc_net, o.seed);

  const double t0 = now_s();
  const ProposedOutcome out = eval_proposed(victim, disc, batch, atk, o.workers);
  const double dt = now_s() - t0;

  EvalReport report;
  report.rows.push_back({"proposed", victim.name, ds.name, o.padding,
                         out.accuracy_pct, out.mean_scale, int(batch.size()),
                         o.seed, dt});
  emit_report(report, o.out_dir);
  emit_per_image(per_image_rows("proposed", batch, out.results), o.out_dir);
  emit_pairs_grid(batch, out.results, fs::path(o.out_dir) / "pairs",
                  std::size_t(pairs));

  json m = manifest_base("attack", o);
  m["model"] = model_path;
  m["accuracy_pct"] = out.accuracy_pct;
  m["mean_scale"] = out.mean_scale;
  m["wall_time_s"] = dt;
  write_manifest(m, o.out_dir, {model_path});

  std::cout << "proposed attack: accuracy " << out.accuracy_pct << "% mean scale "
            << out.mean_scale << " over " << batch.size() << " images\n";
  return 0;
}

int run_baseline(const CommonOpts& o, const std::string& model_path, double mean) {
  const Dataset ds = load_dataset(o, false);
  const nn::Network victim = nn::load_weights(model_path);
  const LabeledBatch batch = ds.test.head(std::size_t(o.n));

  const double t0 = now_s();
  const double acc =
      eval_baseline(victim, batch, mean, padding_of(o), aux_of(o), o.workers);
  const double dt = now_s() - t0;

  EvalReport report;
  report.rows.push_back({"baseline", victim.name, ds.name, o.padding, acc, mean,
                         int(batch.size()), o.seed, dt});
  emit_report(report, o.out_dir);

  json m = manifest_base("baseline", o);
  m["model"] = model_path;
  m["mean"] = mean;
  m["accuracy_pct"] = acc;
  write_manifest(m, o.out_dir, {model_path});
  std::cout << "baseline(" << mean << "): accuracy " << acc << "%\n";
  return 0;
}

int run_random(const CommonOpts& o, const std::string& model_path) {
  const Dataset ds = load_dataset(o, false);
  const nn::Network victim = nn::load_weights(model_path);
  const LabeledBatch batch = ds.test.head(std::size_t(o.n));

  const double t0 = now_s();
  const double acc =
      eval_random(victim, batch, o.seed, padding_of(o), aux_of(o), o.workers);
  const double dt = now_s() - t0;

  EvalReport report;
  report.rows.push_back({"random", victim.name, ds.name, o.padding, acc,
                         std::nullopt, int(batch.size()), o.seed, dt});
  emit_report(report, o.out_dir);

  json m = manifest_base("random", o);
  m["model"] = model_path;
  m["accuracy_pct"] = acc;
  write_manifest(m, o.out_dir, {model_path});
  std::cout << "random triples: accuracy " << acc << "%\n";
  return 0;
}

std::vector<double> parse_factors(const std::string& spec) {
  // "lo:hi:step" or comma-separated values.
  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    double lo, hi, step;
    if (std::sscanf(spec.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 || step <= 0)
      throw std::invalid_argument("bad --factors spec " + spec);
    for (double f = lo; f <= hi + 1e-9; f += step) out.push_back(f);
  } else {
    std::istringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  }
  for (double f : out) ScaleTriple{f, f, f}.validate();
  return out;
}

int run_sweep(const CommonOpts& o, const std::string& model_path,
              const std::string& factors_spec) {
  const Dataset ds = load_dataset(o, false);
  const nn::Network victim = nn::load_weights(model_path);
  const LabeledBatch batch = ds.test.head(std::size_t(o.n));
  const std::vector<double> factors = parse_factors(factors_spec);

  EvalReport report;
  for (double f : factors) {
    const double t0 = now_s();
    const double acc =
        eval_baseline(victim, batch, f, padding_of(o), aux_of(o), o.workers);
    report.rows.push_back({"sweep", victim.name, ds.name, o.padding, acc, f,
                           int(batch.size()), o.seed, now_s() - t0});
  }
  emit_report(report, o.out_dir);

  json m = manifest_base("sweep", o);
  m["model"] = model_path;
  m["factors"] = factors;
  write_manifest(m, o.out_dir, {model_path});
  std::cout << "sweep over " << factors.size() << " factors written\n";
  return 0;
}

int run_advtrain(const CommonOpts& o, const std::string& arch, int epochs,
                 int batch_size, double train_lr, int train_n, int atk_steps) {
  Dataset ds = load_dataset(o, true);
  if (train_n > 0) ds.train = ds.train.head(std::size_t(train_n));
  const LabeledBatch eval_batch = ds.test.head(std::size_t(o.n));

  nn::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.lr = train_lr;
  cfg.seed = o.seed;

  AttackConfig atk = attack_of(o);
  atk.max_steps = atk_steps;

  const VictimBuilder builder = [&](int classes, std::uint64_t seed) {
    return build_arch(arch, classes, seed);
  };

  const double t0 = now_s();
  nn::Network plain = builder(ds.class_count, cfg.seed);
  nn::train_classifier(plain, ds.train, cfg);
  const double t_plain = now_s() - t0;

  const double t1 = now_s();
  nn::Network hardened = adversarial_train(ds, cfg, atk, o.workers, builder);
  const double t_adv = now_s() - t1;

  fs::create_directories(o.out_dir);
  const fs::path plain_w = fs::path(o.out_dir) / "victim_plain.bin";
  const fs::path adv_w = fs::path(o.out_dir) / "victim_advtrained.bin";
  save_weights(plain, plain_w);
  save_weights(hardened, adv_w);

  EvalReport report;
  report.rows.push_back({"clean", "plain-" + plain.name, ds.name, "-",
                         nn::accuracy_pct(plain, eval_batch), std::nullopt,
                         int(eval_batch.size()), o.seed, t_plain});
  report.rows.push_back({"clean", "adv-" + hardened.name, ds.name, "-",
                         nn::accuracy_pct(hardened, eval_batch), std::nullopt,
                         int(eval_batch.size()), o.seed, t_adv});
  const std::vector<std::pair<double, double>> ranges = {
      {0.2, 1.0}, {0.4, 1.0}, {0.6, 1.0}, {0.8, 1.0}};
  for (const auto& [lo, hi] : ranges) {
    char name[64];
    std::snprintf(name, sizeof(name), "random-transform %.1f-%.1f", lo, hi);
    const double p = eval_random_transform(plain, eval_batch, lo, hi, o.seed, 1,
                                           padding_of(o), aux_of(o), o.workers);
    const double a = eval_random_transform(hardened, eval_batch, lo, hi, o.seed, 1,
                                           padding_of(o), aux_of(o), o.workers);
    report.rows.push_back({name, "plain-" + plain.name, ds.name, o.padding, p,
                           std::nullopt, int(eval_batch.size()), o.seed, 0.0});
    report.rows.push_back({name, "adv-" + hardened.name, ds.name, o.padding, a,
                           std::nullopt, int(eval_batch.size()), o.seed, 0.0});
  }
  emit_report(report, o.out_dir);

  json m = manifest_base("advtrain", o);
  m["arch"] = arch;
  m["epochs"] = epochs;
  m["batch_size"] = batch_size;
  m["train_lr"] = train_lr;
  m["train_n"] = train_n;
  m["attack_steps_train"] = atk_steps;
  write_manifest(m, o.out_dir, {plain_w, adv_w});
  std::cout << "adversarial training done; report in " << o.out_dir << "\n";
  return 0;
}

int run_transfer(const CommonOpts& o, const std::vector<std::string>& model_paths) {
  const Dataset ds = load_dataset(o, false);
  const LabeledBatch batch = ds.test.head(std::size_t(o.n));

  std::vector<nn::Network> nets;
  nets.reserve(model_paths.size());
  for (const auto& p : model_paths) nets.push_back(nn::load_weights(p));
  std::vector<const nn::Network*> ptrs;
  for (const auto& n : nets) ptrs.push_back(&n);

  const double t0 = now_s();
  const TransferOutcome transfer = transfer_matrix(ptrs, batch, attack_of(o), o.workers);
  const double dt = now_s() - t0;

  EvalReport report;
  for (std::size_t i = 0; i < ptrs.size(); ++i)
    for (std::size_t j = 0; j < ptrs.size(); ++j)
      report.rows.push_back({"transfer from " + transfer.names[i],
                             transfer.names[j], ds.name, o.padding,
                             transfer.accuracy[i][j], std::nullopt,
                             int(batch.size()), o.seed, i == 0 && j == 0 ? dt : 0.0});
  emit_report(report, o.out_dir);

  json m = manifest_base("transfer", o);
  m["models"] = model_paths;
  std::vector<fs::path> files(model_paths.begin(), model_paths.end());
  write_manifest(m, o.out_dir, files);
  std::cout << "transfer matrix over " << ptrs.size() << " models written\n";
  return 0;
}

int run_demo_synth(const CommonOpts& o) {
  CommonOpts local = o;
  local.dataset = "synth";
  const Dataset ds = synth_dataset(local.seed, local.synth_train, local.synth_test);

  nn::Network victim = nn::build_victim_lenet(ds.class_count, local.seed);
  nn::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.seed = local.seed;
  nn::train_classifier(victim, ds.train, cfg);
  const double clean = nn::accuracy_pct(victim, ds.test);

  const LabeledBatch batch = ds.test.head(std::size_t(local.n));
  const AttackConfig atk = attack_of(local);
  nn::Network disc_net =
      nn::build_discriminator(victim.in_shape, derive_seed(local.seed, 0xD15C0));
  DiscCoTrainer disc = make_disc(disc_net, local.seed);

  const double t0 = now_s();
  const ProposedOutcome out = eval_proposed(victim, disc, batch, atk, local.workers);
  const double dt = now_s() - t0;

  EvalReport report;
  report.rows.push_back({"clean", victim.name, "synth", "-", clean, std::nullopt,
                         int(ds.test.size()), local.seed, 0.0});
  report.rows.push_back({"proposed", victim.name, "synth", local.padding,
                         out.accuracy_pct, out.mean_scale, int(batch.size()),
                         local.seed, dt});
  const double base = eval_baseline(victim, batch, out.mean_scale, padding_of(local),
                                    aux_of(local), local.workers);
  report.rows.push_back({"baseline", victim.name, "synth", local.padding, base,
                         out.mean_scale, int(batch.size()), local.seed, 0.0});
  const double rnd = eval_random(victim, batch, local.seed, padding_of(local),
                                 aux_of(local), local.workers);
  report.rows.push_back({"random", victim.name, "synth", local.padding, rnd,
                         std::nullopt, int(batch.size()), local.seed, 0.0});
  emit_report(report, local.out_dir);
  emit_per_image(per_image_rows("proposed", batch, out.results), local.out_dir);
  emit_pairs_grid(batch, out.results, fs::path(local.out_dir) / "pairs", 8);

  const fs::path weights = fs::path(local.out_dir) / "victim.bin";
  save_weights(victim, weights);

  json m = manifest_base("demo-synth", local);
  m["clean_accuracy_pct"] = clean;
  m["proposed_accuracy_pct"] = out.accuracy_pct;
  m["mean_scale"] = out.mean_scale;
  write_manifest(m, local.out_dir, {weights});

  std::cout << "demo: clean " << clean << "%, proposed " << out.accuracy_pct
            << "% (mean scale " << out.mean_scale << "), baseline " << base
            << "%, random " << rnd << "%\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"warpfool: three-parameter homographic adversarial examples"};
  app.require_subcommand(1);

  CommonOpts o;
  o.seed = env_seed_default();

  std::string arch = "lenet";
  std::string model_path;
  std::vector<std::string> model_paths;
  std::string factors_spec = "0.2:1.0:0.1";
  double baseline_mean = 0.6;
  int epochs = 5;
  int batch_size = 64;
  double train_lr = 1e-3;
  int pairs = 8;
  int train_n = 0;
  int atk_steps_train = 15;

  CLI::App* train = app.add_subcommand("train-victim", "train a victim classifier");
  add_common(train, o);
  train->add_option("--arch", arch, "lenet or lenet-wide")
      ->check(CLI::IsMember({"lenet", "lenet-wide"}));
  train->add_option("--epochs", epochs);
  train->add_option("--batch", batch_size);
  train->add_option("--train-lr", train_lr);

  CLI::App* attack = app.add_subcommand("attack", "run the proposed attack");
  add_common(attack, o);
  add_attack_flags(attack, o);
  attack->add_option("--model", model_path, "victim weights")->required();
  attack->add_option("--pairs", pairs, "clean/adv image pairs to emit");

  CLI::App* baseline = app.add_subcommand("baseline", "equal-triple baseline");
  add_common(baseline, o);
  add_attack_flags(baseline, o);
  baseline->add_option("--model", model_path)->required();
  baseline->add_option("--mean", baseline_mean, "scale factor for all three")
      ->check(CLI::Range(kScaleMin, kScaleMax));

  CLI::App* random_cmd = app.add_subcommand("random", "random-triple evaluation");
  add_common(random_cmd, o);
  add_attack_flags(random_cmd, o);
  random_cmd->add_option("--model", model_path)->required();

  CLI::App* sweep = app.add_subcommand("sweep", "accuracy over fixed scale factors");
  add_common(sweep, o);
  add_attack_flags(sweep, o);
  sweep->add_option("--model", model_path)->required();
  sweep->add_option("--factors", factors_spec, "lo:hi:step or comma list");

  CLI::App* advtrain = app.add_subcommand("advtrain", "adversarial training");
  add_common(advtrain, o);
  add_attack_flags(advtrain, o);
  advtrain->add_option("--arch", arch)->check(CLI::IsMember({"lenet", "lenet-wide"}));
  advtrain->add_option("--epochs", epochs);
  advtrain->add_option("--batch", batch_size);
  advtrain->add_option("--train-lr", train_lr);
  advtrain->add_option("--train-n", train_n, "cap on training images (0 = all)");
  advtrain->add_option("--attack-steps", atk_steps_train,
                       "attack budget during training");

  CLI::App* transfer = app.add_subcommand("transfer", "cross-model transferability");
  add_common(transfer, o);
  add_attack_flags(transfer, o);
  transfer->add_option("--models", model_paths, "two or more weight files")
      ->required()
      ->delimiter(',');

  CLI::App* demo = app.add_subcommand("demo-synth", "end-to-end demo, no downloads");
  add_common(demo, o, false);
  add_attack_flags(demo, o);
  demo->add_option("--synth-train", o.synth_train);
  demo->add_option("--synth-test", o.synth_test);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (o.range_min >= o.range_max)
      throw CLI::ValidationError("--range-min must be below --range-max");

    if (train->parsed())
      return run_train_victim(o, arch, epochs, batch_size, train_lr);
    if (attack->parsed()) return run_attack(o, model_path, pairs);
    if (baseline->parsed()) return run_baseline(o, model_path, baseline_mean);
    if (random_cmd->parsed()) return run_random(o, model_path);
    if (sweep->parsed()) return run_sweep(o, model_path, factors_spec);
    if (advtrain->parsed())
      return run_advtrain(o, arch, epochs, batch_size, train_lr, train_n,
                          atk_steps_train);
    if (transfer->parsed()) return run_transfer(o, model_paths);
    if (demo->parsed()) return run_demo_synth(o);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const CLI::Error&) {
    std::cerr << "usage error: invalid flag combination\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
