// Command-line front end: dataset generation, training, editing, evaluation
// and the HTTP service.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "roiedit/checkpoint.hpp"
#include "roiedit/data.hpp"
#include "roiedit/evaluation.hpp"
#include "roiedit/image_io.hpp"
#include "roiedit/pipeline.hpp"
#include "roiedit/service.hpp"
#include "roiedit/training.hpp"

namespace fs = std::filesystem;
using namespace roiedit;

namespace {

constexpr int kUsageExit = 2;

/// Errors that should exit like a usage error.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path checkpoint_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("ROIEDIT_CHECKPOINT_DIR"); env && *env) return env;
  throw UsageError("no checkpoint given (use --checkpoint or set ROIEDIT_CHECKPOINT_DIR)");
}

struct InferenceFlags {
  std::string checkpoint;
  std::string smn;
  std::string smpn;

  void add(CLI::App* cmd) {
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint root holding smn/ and smpn/ (default $ROIEDIT_CHECKPOINT_DIR)");
    cmd->add_option("--smn", smn, "SMN checkpoint directory (overrides <root>/smn)");
    cmd->add_option("--smpn", smpn, "SMPN checkpoint directory (overrides <root>/smpn)");
  }
  fs::path smn_dir() const { return smn.empty() ? checkpoint_root(checkpoint) / "smn" : fs::path(smn); }
  fs::path smpn_dir() const { return smpn.empty() ? checkpoint_root(checkpoint) / "smpn" : fs::path(smpn); }
};

struct TrainFlags {
  std::string dataset;
  std::string out;
  std::string log;
  TrainConfig cfg;
  int image_size = 64;
  int base_channels = 32;
  int data_seed = 1;
  int log_every = 100;

  void add(CLI::App* cmd, int default_steps) {
    cfg.steps = default_steps;
    cmd->add_option("--dataset", dataset, "Dataset root")->required();
    cmd->add_option("--out", out, "Output checkpoint directory");
    cmd->add_option("--checkpoint", root, "Checkpoint root; --out defaults to <root>/<phase>");
    cmd->add_option("--steps", cfg.steps, "Optimizer steps")->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size, "Batch size")->capture_default_str();
    cmd->add_option("--lr", cfg.learning_rate, "Learning rate")->capture_default_str();
    cmd->add_option("--r1-gamma", cfg.r1_gamma, "R1 weight")->capture_default_str();
    cmd->add_option("--r1-interval", cfg.r1_interval, "Steps between R1 updates")->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "Initialization and crop seed")->capture_default_str();
    cmd->add_option("--data-seed", data_seed, "Batch shuffling seed")->capture_default_str();
    cmd->add_option("--image-size", image_size, "Model resolution (smn only)")->capture_default_str();
    cmd->add_option("--base-channels", base_channels, "Model width (smn only)")->capture_default_str();
    cmd->add_option("--log", log, "JSON-lines training log");
    cmd->add_option("--log-every", log_every, "Progress line interval on stderr (0 = quiet)")->capture_default_str();
  }
  fs::path out_dir(Phase phase) const {
    if (!out.empty()) return out;
    return checkpoint_root(root) / phase_name(phase);
  }

  std::string root;
};

ImageTensor load_image(const fs::path& path, const ModelConfig& model) {
  const Raster8 r = read_png(path, 3);
  if (r.width != model.image_size || r.height != model.image_size) {
    throw std::runtime_error(path.string() + " is " + std::to_string(r.width) + "x" + std::to_string(r.height) +
                             ", model expects " + std::to_string(model.image_size) + "x" +
                             std::to_string(model.image_size));
  }
  return to_image_tensor(r, model.normalization);
}

RoiId parse_roi_flag(const std::string& name) {
  auto roi = parse_roi(name);
  if (!roi) throw UsageError("unknown roi '" + name + "' (expected hair, skin, nose, eyes or lips_mouth)");
  return *roi;
}

void write_image(const fs::path& path, const ImageTensor& image, const ModelConfig& model) {
  write_file(path, image_png(image, model.normalization));
}

TrainResult run_training(const TrainFlags& f, Phase phase, const std::optional<Checkpoint>& init) {
  const auto records = load_dataset(f.dataset);
  if (records.empty()) throw std::runtime_error("dataset " + f.dataset + " has no records");
  ModelConfig model;
  if (init) {
    model = init->manifest.model;
  } else {
    model.image_size = f.image_size;
    model.base_channels = f.base_channels;
  }
  if (records.front().image.dim(0) != model.image_size) {
    throw std::runtime_error("dataset images are " + std::to_string(records.front().image.dim(0)) +
                             " px, model expects " + std::to_string(model.image_size));
  }
  TrainConfig cfg = f.cfg;
  cfg.phase = phase;
  BatchStream stream(records, cfg.batch_size, static_cast<std::uint64_t>(f.data_seed));
  const BatchSource source = [&]() -> const TrainingBatch& { return stream.next(); };

  std::ofstream log;
  if (!f.log.empty()) {
    log.open(f.log, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + f.log);
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<StepLog> window;
  const StepCallback on_step = [&](const StepLog& s) {
    if (log) log << s.to_json().dump() << "\n";
    window.push_back(s);
    if (f.log_every > 0 && (s.step + 1) % f.log_every == 0) {
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << phase_name(phase) << " step " << s.step + 1 << "/" << cfg.steps << " l_rec(window) "
                << windowed_l_rec(window, 100) << " d_loss " << s.d_loss << " " << el << "s" << std::endl;
    }
  };
  if (phase == Phase::smn) return train_smn(source, cfg, model, nullptr, nullptr, on_step);
  return train_smpn(source, cfg, model, &init->autoencoder, &init->discriminators, on_step);
}

void save_result(const TrainResult& r, const fs::path& dir, Phase phase, const ModelConfig& model, int steps) {
  save_checkpoint(dir, r.autoencoder, r.discriminators, {kCheckpointVersion, model, phase, steps});
  std::cout << phase_name(phase) << " checkpoint written to " << dir.string();
  if (!r.log.empty()) std::cout << " (l_rec window " << windowed_l_rec(r.log, 100) << ")";
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ROI-selective face editing: training, editing and serving"};
  app.require_subcommand(1, 1);
  app.fallthrough(false);

  // make-synthetic
  SynthConfig synth;
  std::string synth_out;
  auto* make = app.add_subcommand("make-synthetic", "Write a procedural face dataset");
  make->add_option("--out", synth_out, "Dataset root")->required();
  make->add_option("--count", synth.count, "Number of faces")->capture_default_str();
  make->add_option("--size", synth.image_size, "Image size")->capture_default_str();
  make->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  make->add_option("--brightness-floor", synth.brightness_floor, "Minimum region channel value")->capture_default_str();

  TrainFlags smn_flags, smpn_flags;
  auto* train_smn_cmd = app.add_subcommand("train-smn", "Train the style network");
  smn_flags.add(train_smn_cmd, 2000);
  std::string init_checkpoint;
  auto* train_smpn_cmd = app.add_subcommand("train-smpn", "Fine-tune the mask network from SMN weights");
  smpn_flags.add(train_smpn_cmd, 3000);
  train_smpn_cmd->add_option("--init-checkpoint", init_checkpoint, "SMN checkpoint to start from");

  InferenceFlags inf;
  std::string image, style_image, roi_name_flag, out, mask_out;
  double mu = 1.0;
  std::uint64_t seed = 0;

  auto* segment_cmd = app.add_subcommand("segment", "Write the predicted ROI mask (0/255 PNG)");
  auto* edit_cmd = app.add_subcommand("edit", "ROI-selective style edit");
  auto* swap_cmd = app.add_subcommand("swap", "Move the style of a reference image into one ROI");
  auto* structure_cmd = app.add_subcommand("structure-edit", "Perturb the structure channels of one ROI");
  for (auto* cmd : {segment_cmd, edit_cmd, swap_cmd, structure_cmd}) {
    inf.add(cmd);
    cmd->add_option("--image", image, "Input PNG")->required();
    cmd->add_option("--roi", roi_name_flag, "hair, skin, nose, eyes or lips_mouth")->required();
    cmd->add_option("--out", out, "Output PNG")->required();
  }
  for (auto* cmd : {edit_cmd, structure_cmd}) {
    cmd->add_option("--mu", mu, "Noise scale")->capture_default_str();
    cmd->add_option("--seed", seed, "Noise seed")->capture_default_str();
  }
  for (auto* cmd : {edit_cmd, swap_cmd}) cmd->add_option("--mask-out", mask_out, "Also write the ROI mask PNG");
  swap_cmd->add_option("--style-image", style_image, "Style reference PNG")->required();

  std::string eval_dataset, eval_out;
  EvalOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "Mask IoU, locality and latency report");
  inf.add(eval_cmd);
  eval_cmd->add_option("--dataset", eval_dataset, "Dataset root")->required();
  eval_cmd->add_option("--out", eval_out, "Report JSON path")->required();
  eval_cmd->add_option("--trials", eval_opts.benchmark_trials, "Timed edits")->capture_default_str();
  eval_cmd->add_option("--edits", eval_opts.locality_edits, "Edits checked for locality")->capture_default_str();
  eval_cmd->add_option("--mu", eval_opts.mu, "Noise scale")->capture_default_str();
  eval_cmd->add_option("--seed", eval_opts.seed, "Edit sampling seed")->capture_default_str();

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP editing service");
  inf.add(serve_cmd);
  serve_cmd->add_option("--host", host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", port, "Port (0 picks a free one)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return kUsageExit;
  }

  try {
    if (make->parsed()) {
      synth.validate();
      const auto manifest = generate_synthetic(synth, synth_out);
      std::cout << "wrote " << synth.count << " faces to " << synth_out << "\n";
    } else if (train_smn_cmd->parsed()) {
      const auto r = run_training(smn_flags, Phase::smn, std::nullopt);
      ModelConfig model;
      model.image_size = smn_flags.image_size;
      model.base_channels = smn_flags.base_channels;
      save_result(r, smn_flags.out_dir(Phase::smn), Phase::smn, model, smn_flags.cfg.steps);
    } else if (train_smpn_cmd->parsed()) {
      if (init_checkpoint.empty()) throw UsageError("SMPN requires SMN weights (pass --init-checkpoint)");
      auto init = load_checkpoint(init_checkpoint);
      if (init.manifest.phase != Phase::smn) throw UsageError("SMPN requires SMN weights; " + init_checkpoint + " is an smpn checkpoint");
      const ModelConfig model = init.manifest.model;
      const auto r = run_training(smpn_flags, Phase::smpn, std::move(init));
      save_result(r, smpn_flags.out_dir(Phase::smpn), Phase::smpn, model, smpn_flags.cfg.steps);
    } else if (segment_cmd->parsed()) {
      const RoiId roi = parse_roi_flag(roi_name_flag);
      const auto smpn = load_checkpoint(inf.smpn_dir());
      const auto x = load_image(image, smpn.manifest.model);
      write_file(out, mask_png(predict_roi_mask(smpn.autoencoder, x, roi, smpn.manifest.model.slice_scheme)));
    } else if (edit_cmd->parsed() || swap_cmd->parsed()) {
      const RoiId roi = parse_roi_flag(roi_name_flag);
      const EditService service(load_checkpoint(inf.smn_dir()), load_checkpoint(inf.smpn_dir()));
      const auto& model = service.smn().manifest.model;
      const auto x = load_image(image, model);
      EditResult r;
      if (edit_cmd->parsed()) {
        if (!(mu >= 0) || !std::isfinite(mu)) throw UsageError("--mu must be finite and >= 0");
        r = edit(service.smn().autoencoder, service.smpn().autoencoder, x, EditConfig{roi, mu, seed}, service.scheme());
      } else {
        r = style_swap(service.smn().autoencoder, service.smpn().autoencoder, x, load_image(style_image, model), roi,
                       service.scheme());
      }
      write_image(out, r.edited, model);
      if (!mask_out.empty()) write_file(mask_out, mask_png(r.mask));
    } else if (structure_cmd->parsed()) {
      const RoiId roi = parse_roi_flag(roi_name_flag);
      if (!(mu >= 0) || !std::isfinite(mu)) throw UsageError("--mu must be finite and >= 0");
      const auto smpn = load_checkpoint(inf.smpn_dir());
      const auto& model = smpn.manifest.model;
      write_image(out, structure_edit(smpn.autoencoder, load_image(image, model), roi, mu, seed, model.slice_scheme),
                  model);
    } else if (eval_cmd->parsed()) {
      const auto smn = load_checkpoint(inf.smn_dir());
      const auto smpn = load_checkpoint(inf.smpn_dir());
      const auto records = load_dataset(eval_dataset, smn.manifest.model.normalization);
      const auto report = evaluate(smn.autoencoder, smpn.autoencoder, records, smpn.manifest.model.slice_scheme, eval_opts);
      write_report(report, eval_out);
      std::cout << report.to_json().dump() << "\n";
    } else if (serve_cmd->parsed()) {
      const EditService service(load_checkpoint(inf.smn_dir()), load_checkpoint(inf.smpn_dir()));
      HttpServer server(service);
      std::cerr << "serving on " << host << ":" << port << std::endl;
      server.listen(host, port);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageExit;
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return std::string(e.what()).find("SMPN requires SMN weights") != std::string::npos ? kUsageExit : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
