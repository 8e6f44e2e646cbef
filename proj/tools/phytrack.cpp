// phytrack: synthetic flowing-microscopy tracking pipeline.
// Subcommands: synth (dataset generation), train, track, eval.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "phytrack/config.hpp"
#include "phytrack/metrics.hpp"
#include "phytrack/train.hpp"
#include "phytrack/tracker.hpp"

namespace fs = std::filesystem;
using namespace phytrack;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_outdir(const std::string& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw DataError("output directory not empty (use --force): " + dir);
  fs::create_directories(dir);
}

RunConfig load_config(const std::string& config_path, int seed_flag) {
  RunConfig cfg;
  if (!config_path.empty()) {
    if (!fs::exists(config_path))
      throw DataError("config file not found: " + config_path);
    try {
      cfg.apply_file(config_path);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (seed_flag >= 0) cfg.apply("seed", std::to_string(seed_flag));
  return cfg;
}

// Noise variants per tier: the medium tier has three corruption kinds, the
// hard tier four (gray is hard-only).
std::vector<std::pair<std::string, NoiseSpec>> test_variants() {
  return {
      {"clean", NoiseSpec::make(NoiseKind::None, NoiseLevel::Medium)},
      {"occlusion_medium", NoiseSpec::make(NoiseKind::Occlusion, NoiseLevel::Medium)},
      {"blur_medium", NoiseSpec::make(NoiseKind::Blur, NoiseLevel::Medium)},
      {"salt_pepper_medium", NoiseSpec::make(NoiseKind::SaltPepper, NoiseLevel::Medium)},
      {"occlusion_hard", NoiseSpec::make(NoiseKind::Occlusion, NoiseLevel::Hard)},
      {"blur_hard", NoiseSpec::make(NoiseKind::Blur, NoiseLevel::Hard)},
      {"salt_pepper_hard", NoiseSpec::make(NoiseKind::SaltPepper, NoiseLevel::Hard)},
      {"gray_hard", NoiseSpec::make(NoiseKind::Gray, NoiseLevel::Hard)},
  };
}

int cmd_synth(const std::string& config_path, const std::string& out_dir,
              int seed_flag, bool force) {
  RunConfig cfg = load_config(config_path, seed_flag);
  try {
    validate(cfg.seq);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  require_outdir(out_dir, force);
  write_resolved_config(cfg, (fs::path(out_dir) / "config.resolved.txt").string());

  for (int i = 0; i < cfg.train_sequences; ++i) {
    SequenceConfig sc = cfg.seq;
    sc.seed = cfg.seed * 1000 + 1 + i;
    auto out = synth_sequence(sc);
    char name[32];
    std::snprintf(name, sizeof(name), "seq%02d", i + 1);
    write_sequence_dir((fs::path(out_dir) / "train" / name).string(), out.frames,
                       out.gt);
    std::cout << "train " << name << " easy frames=" << out.frames.size()
              << " gt_rows=" << out.gt.size() << "\n";
  }

  for (int i = 0; i < cfg.test_sequences; ++i) {
    SequenceConfig sc = cfg.seq;
    sc.seed = cfg.seed * 1000 + 500 + i;
    auto base = synth_sequence(sc);
    char name[32];
    std::snprintf(name, sizeof(name), "seq%02d", i + 1);
    int variant_idx = 0;
    for (const auto& [tag, spec] : test_variants()) {
      std::mt19937_64 noise_rng(sc.seed * 100 + variant_idx++);
      std::vector<Image> frames;
      frames.reserve(base.frames.size());
      for (const auto& f : base.frames)
        frames.push_back(apply_noise(f, spec, noise_rng));
      const std::string dir =
          (fs::path(out_dir) / "test" / (std::string(name) + "_" + tag)).string();
      write_sequence_dir(dir, frames, base.gt);
      const char* tier = tag == "clean"            ? "easy"
                         : tag.ends_with("medium") ? "medium"
                                                   : "hard";
      std::cout << "test " << name << "_" << tag << " " << tier
                << " frames=" << frames.size() << "\n";
    }
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, int seed_flag, bool force) {
  RunConfig cfg = load_config(config_path, seed_flag);
  if (!fs::is_directory(data_dir))
    throw DataError("training data directory not found: " + data_dir);

  std::vector<std::string> seq_dirs;
  for (const auto& e : fs::directory_iterator(data_dir))
    if (e.is_directory() && fs::exists(e.path() / "gt" / "gt.txt"))
      seq_dirs.push_back(e.path().string());
  std::sort(seq_dirs.begin(), seq_dirs.end());
  if (seq_dirs.empty())
    throw DataError("no training sequences with ground truth in " + data_dir);

  require_outdir(out_dir, force);
  write_resolved_config(cfg, (fs::path(out_dir) / "config.resolved.txt").string());

  std::vector<TrainSequence> data;
  for (const auto& d : seq_dirs) {
    try {
      data.push_back(load_train_sequence(d));
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
  }

  PhyModel model(cfg.model, cfg.seed);
  try {
    auto art = train_model(model, data, cfg.train,
                           (fs::path(out_dir) / "loss.csv").string(),
                           (fs::path(out_dir) / "best.ckpt").string(),
                           (fs::path(out_dir) / "final.ckpt").string(),
                           cfg.seed, cfg.memory_mode,
                           [](int epoch, const EpochStats& s) {
                             std::cout << "epoch " << epoch << " det=" << s.det
                                       << " cva=" << s.cva
                                       << " total=" << s.total << std::endl;
                           });
    std::cout << "best total loss " << art.best_total << "\n";
  } catch (const std::runtime_error& e) {
    if (std::string(e.what()).find("non-finite") != std::string::npos)
      throw NumericError(e.what());
    throw;
  }
  return 0;
}

int cmd_track(const std::string& config_path, const std::string& ckpt_path,
              const std::string& seq_dir, const std::string& out_file,
              const std::string& render_dir, int seed_flag) {
  RunConfig cfg = load_config(config_path, seed_flag);
  const auto frames = list_sequence_frames(seq_dir);
  if (frames.empty()) throw DataError("no frames found in " + seq_dir + "/img1");
  if (!fs::exists(ckpt_path)) throw DataError("checkpoint not found: " + ckpt_path);

  PhyModel model(cfg.model, cfg.seed);
  try {
    load_checkpoint(model.store(), ckpt_path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }

  if (!render_dir.empty()) fs::create_directories(render_dir);
  TrackerConfig tcfg = cfg.tracker;
  tcfg.memory_mode = cfg.memory_mode;
  Tracker tracker(model, tcfg);
  std::vector<MotRow> rows;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    Image frame = load_png(frames[i]);
    auto reported = tracker.step(frame, static_cast<int>(i) + 1);
    if (!render_dir.empty()) {
      std::vector<OverlayBox> boxes;
      for (const auto& r : reported)
        boxes.push_back({r.left, r.top, r.width, r.height, r.id});
      save_png(render_overlay(frame, boxes),
               (fs::path(render_dir) / frame_filename(static_cast<int>(i) + 1)).string());
    }
    rows.insert(rows.end(), reported.begin(), reported.end());
  }
  if (out_file.find('/') != std::string::npos)
    fs::create_directories(fs::path(out_file).parent_path());
  write_mot(rows, out_file);
  write_resolved_config(cfg, out_file + ".config");
  std::cout << "tracked " << frames.size() << " frames, " << rows.size()
            << " result rows -> " << out_file << "\n";
  return 0;
}

int cmd_eval(const std::string& gt_file, const std::string& pred_file,
             const std::string& report_file) {
  if (!fs::exists(gt_file)) throw DataError("ground-truth file not found: " + gt_file);
  if (!fs::exists(pred_file)) throw DataError("prediction file not found: " + pred_file);
  std::vector<std::string> warnings;
  EvalReport rep;
  try {
    const auto gt = read_mot(gt_file, &warnings);
    const auto pred = read_mot(pred_file, &warnings);
    rep = evaluate(gt, pred);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  if (!report_file.empty()) {
    if (report_file.find('/') != std::string::npos)
      fs::create_directories(fs::path(report_file).parent_path());
    write_report(rep, report_file);
  }
  char buf[64];
  std::cout << "num_gt=" << rep.num_gt << "\nfp=" << rep.fp << "\nfn=" << rep.fn
            << "\nids=" << rep.ids << "\n";
  std::snprintf(buf, sizeof(buf), "mota=%.6f\nidf1=%.6f\n", rep.mota, rep.idf1);
  std::cout << buf;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phytrack: synthetic flowing-microscopy multi-object tracking"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_dir, seq_dir, ckpt_path, render_dir;
  std::string gt_file, pred_file;
  int seed = -1;
  bool force = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", config_path, "key=value config file");
  synth->add_option("--out", out_path, "output dataset directory")->required();
  synth->add_option("--seed", seed, "override config seed");
  synth->add_flag("--force", force, "allow non-empty output directory");

  auto* train = app.add_subcommand("train", "train a model on a dataset");
  train->add_option("--config", config_path, "key=value config file");
  train->add_option("--data", data_dir, "directory of training sequences")->required();
  train->add_option("--out", out_path, "output directory for checkpoints")->required();
  train->add_option("--seed", seed, "override config seed");
  train->add_flag("--force", force, "allow non-empty output directory");

  auto* track = app.add_subcommand("track", "run the tracker on a sequence");
  track->add_option("--config", config_path, "key=value config file");
  track->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  track->add_option("--seq", seq_dir, "sequence directory (with img1/)")->required();
  track->add_option("--out", out_path, "output MOT results file")->required();
  track->add_option("--render", render_dir, "write overlay frames to this directory");
  track->add_option("--seed", seed, "override config seed");

  auto* eval = app.add_subcommand("eval", "evaluate results against ground truth");
  eval->add_option("--gt", gt_file, "ground-truth MOT file")->required();
  eval->add_option("--pred", pred_file, "predicted MOT file")->required();
  eval->add_option("--out", out_path, "report file (metric=value lines)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(config_path, out_path, seed, force);
    if (train->parsed()) return cmd_train(config_path, data_dir, out_path, seed, force);
    if (track->parsed())
      return cmd_track(config_path, ckpt_path, seq_dir, out_path, render_dir, seed);
    if (eval->parsed()) return cmd_eval(gt_file, pred_file, out_path);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
