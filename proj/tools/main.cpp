// structssl command-line tool: train, probe, interpret, mi-bench.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "structssl/data.hpp"
#include "structssl/estimators.hpp"
#include "structssl/evaluation.hpp"
#include "structssl/exact_info.hpp"
#include "structssl/interpretation.hpp"
#include "structssl/models.hpp"
#include "structssl/training.hpp"

namespace fs = std::filesystem;
using namespace structssl;

namespace {

data::Dataset synth(std::uint64_t seed, std::size_t n) {
  data::ShapesSpec spec;
  spec.seed = seed;
  return data::synth_shapes(spec, n);
}

// A CIFAR directory yields its train (or test) split; a single file is read as is.
data::Dataset load_images(const std::string& where, const std::string& split) {
  if (fs::is_directory(where)) return data::load_cifar10(where, split);
  if (!fs::exists(where)) throw std::runtime_error("file not found: " + where);
  return data::load_cifar10_file(where);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory '" + dir + "'");
}

int run_train(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed) {
  training::TrainConfig cfg = training::parse_config(config_path);
  if (seed) cfg.seed = *seed;
  data::Dataset train_set, probe_set;
  if (cfg.dataset == "synth") {
    train_set = synth(cfg.seed, cfg.train_size);
    probe_set = synth(mix_seed(cfg.seed, 7), cfg.probe_samples);
  } else {
    train_set = load_images(cfg.dataset, "train");
    std::vector<std::size_t> head(std::min(cfg.probe_samples, train_set.size()));
    for (std::size_t i = 0; i < head.size(); ++i) head[i] = i;
    probe_set = train_set.subset(head);
  }
  ensure_dir(out);
  auto result = training::train(cfg, train_set, probe_set);
  result.model.save((fs::path(out) / "checkpoint.sslw").string());
  training::write_metrics_csv((fs::path(out) / "metrics.csv").string(), result.metrics);
  if (!result.metrics.empty()) {
    std::cerr << "trained " << result.iterations << " iterations, final bound " << result.metrics.back().bound << "\n";
  }
  return 0;
}

int run_probe(const std::string& checkpoint, const std::string& dataset, std::size_t epochs, std::uint64_t seed) {
  const auto model = models::Model::load(checkpoint);
  evaluation::ProbeConfig pc;
  pc.epochs = epochs;
  pc.seed = seed;
  evaluation::ProbeResult r;
  if (dataset == "synth") {
    const auto train = synth(mix_seed(seed, 11), 6000), test = synth(mix_seed(seed, 12), 1500);
    r = evaluation::linear_probe(evaluation::extract_features(model, train), train.labels,
                                 evaluation::extract_features(model, test), test.labels, train.num_classes, pc);
  } else if (fs::is_directory(dataset)) {
    const auto train = data::load_cifar10(dataset, "train"), test = data::load_cifar10(dataset, "test");
    r = evaluation::linear_probe(evaluation::extract_features(model, train), train.labels,
                                 evaluation::extract_features(model, test), test.labels, train.num_classes, pc);
  } else {
    const auto ds = load_images(dataset, "train");
    r = evaluation::linear_probe(evaluation::extract_features(model, ds), ds.labels, ds.num_classes, pc);
  }
  r.checkpoint_id = fs::path(checkpoint).filename().string();
  std::cout << evaluation::probe_csv_header() << "\n" << evaluation::probe_csv_row(r) << "\n";
  std::cerr << evaluation::probe_summary(r) << "\n";
  return 0;
}

int run_interpret(const std::string& checkpoint, const std::string& images, std::size_t iters, const std::string& out,
                  std::size_t count, double lr, std::uint64_t seed, const std::string& pairing) {
  const auto model = models::Model::load(checkpoint);
  data::Dataset ds = images == "synth" ? synth(mix_seed(seed, 13), count) : load_images(images, "test");
  if (ds.size() > count) {
    std::vector<std::size_t> head(count);
    for (std::size_t i = 0; i < count; ++i) head[i] = i;
    ds = ds.subset(head);
  }
  interpretation::MaskConfig mc;
  mc.iterations = iters;
  mc.learning_rate = lr;
  mc.seed = seed;
  if (pairing == "own") {
    mc.pairing = interpretation::Pairing::OwnImage;
  } else if (pairing != "product") {
    throw std::invalid_argument("--pairing must be product or own");
  }
  ensure_dir(out);
  const auto res = interpretation::learn_masks(model, ds, mc);
  interpretation::render_mask_grid(res.masks, ds, (fs::path(out) / "masks.ppm").string());
  interpretation::write_loss_trace_csv((fs::path(out) / "loss_trace.csv").string(), res.loss_trace);
  std::cerr << "final loss " << res.loss_trace.back() << ", mean mask " << res.masks.mean_mask();
  if (!ds.boxes.empty() && !ds.boxes.front().empty()) {
    std::cerr << ", localized share " << interpretation::localization(res.masks, ds).localized_share;
  }
  std::cerr << "\n";
  return 0;
}

int run_mi_bench(const std::string& dist, double rho, std::size_t n, std::uint64_t seed, std::size_t bins) {
  if (dist != "gaussian") throw std::invalid_argument("unknown distribution '" + dist + "' (supported: gaussian)");
  const double truth = exact::gaussian_mi({1, rho});
  estimators::GaussianBenchConfig bc;
  bc.bins = bins;
  const double est = estimators::gaussian_nwj_estimate(rho, n, seed, bc);
  std::printf("estimator,distribution,true_mi,estimate,sample_size,seed\n");
  std::printf("nwj-tabular,gaussian-d1-rho%g,%.4f,%.4f,%zu,%llu\n", rho, truth, est, n,
              static_cast<unsigned long long>(seed));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured self-supervised learning toolkit", "structssl"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, dataset = "synth", images = "synth", dist = "gaussian", pairing = "product";
  std::optional<std::uint64_t> train_seed;
  std::uint64_t seed = 0;
  std::size_t epochs = 100, iters = 2000, count = 16, n = 10000, bins = 20;
  double rho = 0.8, lr = 0.05;

  auto* train = app.add_subcommand("train", "Train encoder and critics");
  train->add_option("--config", config, "key=value config file")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--seed", train_seed, "Override the config seed");

  auto* probe = app.add_subcommand("probe", "Linear probe on frozen features");
  probe->add_option("--checkpoint", checkpoint)->required();
  probe->add_option("--dataset", dataset, "CIFAR-10 directory or batch file, or 'synth'");
  probe->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
  probe->add_option("--seed", seed);

  auto* interp = app.add_subcommand("interpret", "Learn masks explaining latent rows");
  interp->add_option("--checkpoint", checkpoint)->required();
  interp->add_option("--images", images, "CIFAR-10 directory or batch file, or 'synth'");
  interp->add_option("--iters", iters)->check(CLI::PositiveNumber);
  interp->add_option("--out", out)->required();
  interp->add_option("--count", count, "Number of images")->check(CLI::PositiveNumber);
  interp->add_option("--lr", lr)->check(CLI::PositiveNumber);
  interp->add_option("--seed", seed);
  interp->add_option("--pairing", pairing, "product or own");

  auto* bench = app.add_subcommand("mi-bench", "Sample-based MI estimate against the closed form");
  bench->add_option("--dist", dist);
  bench->add_option("--rho", rho);
  bench->add_option("--n", n)->check(CLI::PositiveNumber);
  bench->add_option("--seed", seed);
  bench->add_option("--bins", bins)->check(CLI::PositiveNumber);

  if (argc < 2) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*train) return run_train(config, out, train_seed);
    if (*probe) return run_probe(checkpoint, dataset, epochs, seed);
    if (*interp) return run_interpret(checkpoint, images, iters, out, count, lr, seed, pairing);
    if (*bench) return run_mi_bench(dist, rho, n, seed, bins);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
