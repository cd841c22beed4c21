// Command-line front end: train / infer / eval / inspect / gradcheck /
// ablation-list. Exit codes: 0 success, 1 verification or evaluation failure,
// 2 usage error, 3 I/O error.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lfa/data_io.hpp"
#include "lfa/evalx.hpp"
#include "lfa/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace lfa;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerification = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out << text;
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot finalize " + path + ": " + ec.message());
}

struct ModelSource {
  std::string config_path;
  std::string checkpoint_path;
  std::string ablation;
  uint64_t seed = 0;

  Model build() const {
    if (!checkpoint_path.empty()) return load_checkpoint(checkpoint_path);
    ModelConfig cfg;
    if (!ablation.empty()) {
      cfg = ablation_config(ablation);
    } else if (!config_path.empty()) {
      cfg = ModelConfig::parse(read_text_file(config_path));
    }
    return build_model(cfg, seed);
  }
};

void print_inspect(Model& model, int input_size, bool per_layer) {
  ComplexityReport report = estimate_flops(model, Shape{1, model.config.in_channels, input_size,
                                                        input_size});
  std::cout << std::fixed << std::setprecision(2);
  std::cout << "params: " << report.param_count / 1e6 << " M\n";
  std::cout << "flops: " << report.flops / 1e9 << " G (at 1x" << model.config.in_channels << "x"
            << input_size << "x" << input_size << ")\n";
  std::cout << "size: " << report.model_size_bytes / (1024.0 * 1024.0) << " MB\n";
  if (per_layer) {
    std::cout << "\n"
              << std::left << std::setw(18) << "layer" << std::right << std::setw(12) << "params"
              << std::setw(16) << "flops" << "\n";
    for (const LayerCost& lc : report.per_layer) {
      std::cout << std::left << std::setw(18) << lc.name << std::right << std::setw(12)
                << lc.params << std::setw(16) << lc.flops << "\n";
    }
    std::cout << std::left << std::setw(18) << "total" << std::right << std::setw(12)
              << report.param_count << std::setw(16) << report.flops << "\n";
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Lightweight retinal-vessel segmentation toolkit"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train = app.add_subcommand("train", "Train a model on a manifest");
  std::string tr_manifest, tr_config, tr_ablation, tr_ckpt_out = "model.ckpt", tr_log;
  TrainRunConfig run_cfg;
  float tr_lr = 0.002f;
  int tr_input_size = 512;
  train->add_option("--manifest", tr_manifest, "TSV manifest of image/mask pairs")->required();
  train->add_option("--config", tr_config, "Model config file");
  train->add_option("--ablation", tr_ablation, "Named ablation row instead of a config");
  train->add_option("--epochs", run_cfg.epochs, "Number of epochs");
  train->add_option("--seed", run_cfg.seed, "RNG seed");
  train->add_option("--batch-size", run_cfg.batch_size, "Mini-batch size");
  train->add_option("--input-size", tr_input_size, "Square resize target (multiple of 8)");
  train->add_option("--lr", tr_lr, "Adam learning rate");
  train->add_option("--split", run_cfg.split_fraction, "Train fraction of the manifest");
  train->add_option("--checkpoint-every", run_cfg.checkpoint_every,
                    "Save every N epochs (0 = only at the end)");
  train->add_option("--checkpoint-out", tr_ckpt_out, "Checkpoint output path");
  train->add_option("--augment", run_cfg.augment_multiplicity,
                    "Augmentation multiplicity (0 = off)");
  train->add_option("--threshold", run_cfg.threshold, "Binarization threshold for dice logging");
  train->add_option("--log", tr_log, "Write the per-epoch log to this file as well");
  train->add_flag("--clip-grads", run_cfg.clip_grads, "Clip gradients to a max global norm");

  // ---- infer ----
  auto* infer = app.add_subcommand("infer", "Segment one PNG or a directory of PNGs");
  std::string in_ckpt, in_input, in_output;
  float in_threshold = 0.5f;
  infer->add_option("--checkpoint", in_ckpt, "Trained checkpoint")->required();
  infer->add_option("--input", in_input, "Input PNG file or directory")->required();
  infer->add_option("--output", in_output, "Output mask path (file) or directory")->required();
  infer->add_option("--threshold", in_threshold, "Binarization threshold");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint against ground truth");
  std::string ev_ckpt, ev_manifest;
  float ev_threshold = 0.5f;
  int ev_input_size = 512;
  eval->add_option("--checkpoint", ev_ckpt, "Trained checkpoint")->required();
  eval->add_option("--manifest", ev_manifest, "TSV manifest with ground-truth masks")->required();
  eval->add_option("--threshold", ev_threshold, "Binarization threshold");
  eval->add_option("--input-size", ev_input_size, "Square resize target (multiple of 8)");

  // ---- inspect ----
  auto* inspect = app.add_subcommand("inspect", "Report parameter count, FLOPs and model size");
  std::string is_config, is_ckpt, is_ablation;
  int is_input_size = 512;
  bool is_per_layer = false;
  inspect->add_option("--config", is_config, "Model config file");
  inspect->add_option("--checkpoint", is_ckpt, "Checkpoint to inspect");
  inspect->add_option("--ablation", is_ablation, "Named ablation row");
  inspect->add_option("--input-size", is_input_size, "FLOPs input extent");
  inspect->add_flag("--per-layer", is_per_layer, "Per-layer params/FLOPs breakdown");

  // ---- gradcheck ----
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  GradCheckOptions gc_opts;
  gradcheck->add_option("--op", gc_opts.filter, "Only ops whose name contains this substring");
  gradcheck->add_option("--tolerance", gc_opts.tolerance, "Max relative error");
  gradcheck->add_option("--epsilon", gc_opts.epsilon, "Central-difference step");
  gradcheck->add_option("--seed", gc_opts.seed, "RNG seed");

  // ---- ablation-list ----
  auto* ablist = app.add_subcommand("ablation-list", "Enumerate the named ablation rows");

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) {
    Manifest manifest = read_manifest(tr_manifest);
    manifest.split_seed = run_cfg.seed;
    manifest.split_fraction = run_cfg.split_fraction;
    Dataset data = load_dataset(manifest, tr_input_size);

    ModelSource src{tr_config, "", tr_ablation, run_cfg.seed};
    Model model = src.build();
    NamedTensors params = model.trainable();
    AdamState adam;
    adam.learning_rate = tr_lr;
    adam.init(params);
    DiceLossConfig loss_cfg;

    std::ostringstream log;
    log << "epoch,mean_loss,train_dice,val_dice\n";
    for (int epoch = 1; epoch <= run_cfg.epochs; ++epoch) {
      EpochStats stats = train_epoch(model, data, run_cfg, loss_cfg, adam, epoch);
      if (!std::isfinite(stats.mean_loss)) {
        std::cerr << "non-finite loss at epoch " << epoch << "; aborting\n";
        return kExitVerification;
      }
      const std::string line = epoch_log_line(epoch, stats);
      std::cout << line << "\n";
      log << line << "\n";
      if (run_cfg.checkpoint_every > 0 && epoch % run_cfg.checkpoint_every == 0) {
        save_checkpoint(model, &adam, tr_ckpt_out);
      }
    }
    save_checkpoint(model, &adam, tr_ckpt_out);
    if (!tr_log.empty()) write_text_file_atomic(tr_log, log.str());
    return kExitOk;
  }

  if (infer->parsed()) {
    Model model = load_checkpoint(in_ckpt);
    std::vector<std::pair<std::string, std::string>> jobs;  // input, output
    if (fs::is_directory(in_input)) {
      for (const auto& entry : fs::directory_iterator(in_input)) {
        if (entry.path().extension() == ".png") {
          jobs.emplace_back(entry.path().string(),
                            (fs::path(in_output) / entry.path().filename()).string());
        }
      }
      std::sort(jobs.begin(), jobs.end());
      fs::create_directories(in_output);
    } else {
      jobs.emplace_back(in_input, in_output);
    }
    if (jobs.empty()) throw DataError("no PNG inputs found in " + in_input);
    for (const auto& [in_path, out_path] : jobs) {
      const auto t0 = std::chrono::steady_clock::now();
      Tensor image = load_image(in_path);
      Tensor probs = model_forward(model, image, Mode::Infer);
      write_mask_png(probs, in_threshold, out_path);
      const auto t1 = std::chrono::steady_clock::now();
      const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      std::cout << in_path << " -> " << out_path << "  (" << std::fixed << std::setprecision(1)
                << ms << " ms)\n";
    }
    return kExitOk;
  }

  if (eval->parsed()) {
    Model model = load_checkpoint(ev_ckpt);
    Manifest manifest = read_manifest(ev_manifest);
    if (manifest.entries.empty()) throw DataError("empty manifest " + ev_manifest);
    std::vector<std::pair<std::string, MetricsReport>> rows;
    ConfusionCounts overall;
    for (const ManifestEntry& e : manifest.entries) {
      Tensor image = resize(load_image(e.image_path), ev_input_size, ResizeFilter::Bilinear);
      Tensor mask = resize(load_mask(e.mask_path), ev_input_size, ResizeFilter::Nearest);
      Tensor probs = model_forward(model, image, Mode::Infer);
      ConfusionCounts c = confusion_counts(probs, mask, ev_threshold);
      overall += c;
      rows.emplace_back(fs::path(e.image_path).filename().string(), metrics(c));
    }
    rows.emplace_back("overall", metrics(overall));
    std::cout << metrics_table(rows);
    return kExitOk;
  }

  if (inspect->parsed()) {
    ModelSource src{is_config, is_ckpt, is_ablation, 0};
    Model model = src.build();
    print_inspect(model, is_input_size, is_per_layer);
    return kExitOk;
  }

  if (gradcheck->parsed()) {
    const std::vector<GradReport> reports = run_gradcheck_suite(gc_opts);
    if (reports.empty()) {
      std::cerr << "no gradient checks match filter '" << gc_opts.filter << "'\n";
      return kExitUsage;
    }
    bool all_passed = true;
    for (const GradReport& r : reports) {
      std::cout << (r.passed ? "PASS" : "FAIL") << "  " << std::left << std::setw(28) << r.op_name
                << "  rel=" << std::scientific << std::setprecision(2) << r.rel_error
                << "  max_rel=" << r.max_rel_error << "  max_abs=" << r.max_abs_error
                << "  coords=" << r.checked_count << "\n";
      all_passed = all_passed && r.passed;
    }
    if (!all_passed) {
      std::cerr << "gradient verification failed\n";
      return kExitVerification;
    }
    return kExitOk;
  }

  if (ablist->parsed()) {
    for (const auto& [name, description] : ablation_rows()) {
      std::cout << std::left << std::setw(32) << name << description << "\n";
    }
    return kExitOk;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVerification;
  }
}
