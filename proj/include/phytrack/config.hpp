#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "phytrack/synth.hpp"
#include "phytrack/tracker.hpp"

namespace phytrack {

struct TrainConfig {
  int epochs = 12;
  int batch_size = 5;
  double learning_rate = 2.5e-4;
  int decay_epoch1 = 8, decay_epoch2 = 10;  // lr x0.1 at each
  int pair_stride = 1;    // subsample adjacent-frame pairs
  double flip_prob = 0.5;
  double shift_prob = 0.3;  // random translation of both frames
};

// Every run-affecting knob, flat key=value. Unknown keys are rejected; the
// fully resolved config is serializable next to each run's outputs.
struct RunConfig {
  SequenceConfig seq;
  ModelConfig model;
  MemoryMode memory_mode = MemoryMode::Mean;
  TrackerConfig tracker;
  TrainConfig train;
  int train_sequences = 4;
  int test_sequences = 2;
  std::uint64_t seed = 0;

  void apply(const std::string& key, const std::string& value);
  static RunConfig from_file(const std::string& path);
  void apply_file(const std::string& path);
  std::string resolved() const;
};

namespace detail {

inline int to_int(const std::string& k, const std::string& v) {
  try {
    std::size_t pos;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key " + k + " needs an integer, got '" + v + "'");
  }
}

inline double to_double(const std::string& k, const std::string& v) {
  try {
    std::size_t pos;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key " + k + " needs a number, got '" + v + "'");
  }
}

}  // namespace detail

inline void RunConfig::apply(const std::string& key, const std::string& v) {
  using detail::to_double;
  using detail::to_int;
  if (key == "width") seq.width = to_int(key, v);
  else if (key == "height") seq.height = to_int(key, v);
  else if (key == "num_frames") seq.num_frames = to_int(key, v);
  else if (key == "num_classes") { seq.num_classes = to_int(key, v); model.num_classes = seq.num_classes; }
  else if (key == "spawn_rate") seq.spawn_rate = to_double(key, v);
  else if (key == "flow_velocity") seq.flow_velocity = to_double(key, v);
  else if (key == "jitter_sigma") seq.jitter_sigma = to_double(key, v);
  else if (key == "size_min") seq.size_min = to_double(key, v);
  else if (key == "size_max") seq.size_max = to_double(key, v);
  else if (key == "impurity_count") seq.impurity_count = to_int(key, v);
  else if (key == "train_sequences") train_sequences = to_int(key, v);
  else if (key == "test_sequences") test_sequences = to_int(key, v);
  else if (key == "srm_mode") model.srm_mode = srm_mode_from_string(v);
  else if (key == "memory_mode") { memory_mode = memory_mode_from_string(v); tracker.memory_mode = memory_mode; }
  else if (key == "stem_channels") model.stem_channels = to_int(key, v);
  else if (key == "enc1") model.enc1 = to_int(key, v);
  else if (key == "enc2") model.enc2 = to_int(key, v);
  else if (key == "enc3") model.enc3 = to_int(key, v);
  else if (key == "enc4") model.enc4 = to_int(key, v);
  else if (key == "feat_channels") model.feat_channels = to_int(key, v);
  else if (key == "ata_inner") model.ata_inner = to_int(key, v);
  else if (key == "refined_channels") model.refined_channels = to_int(key, v);
  else if (key == "embed_channels") model.embed_channels = to_int(key, v);
  else if (key == "head_channels") model.head_channels = to_int(key, v);
  else if (key == "softmax_temperature") model.softmax_temperature = to_double(key, v);
  else if (key == "loss_weight_cva") model.loss_weight_cva = to_double(key, v);
  else if (key == "score_threshold") tracker.score_threshold = to_double(key, v);
  else if (key == "gate_radius") tracker.gate_radius = to_double(key, v);
  else if (key == "max_age") tracker.max_age = to_int(key, v);
  else if (key == "min_hits") tracker.min_hits = to_int(key, v);
  else if (key == "epochs") train.epochs = to_int(key, v);
  else if (key == "batch_size") train.batch_size = to_int(key, v);
  else if (key == "learning_rate") train.learning_rate = to_double(key, v);
  else if (key == "decay_epoch1") train.decay_epoch1 = to_int(key, v);
  else if (key == "decay_epoch2") train.decay_epoch2 = to_int(key, v);
  else if (key == "pair_stride") train.pair_stride = to_int(key, v);
  else if (key == "flip_prob") train.flip_prob = to_double(key, v);
  else if (key == "shift_prob") train.shift_prob = to_double(key, v);
  else if (key == "seed") { seed = static_cast<std::uint64_t>(to_int(key, v)); seq.seed = seed; }
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline void RunConfig::apply_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ": line " + std::to_string(lineno) +
                                  " is not key=value");
    auto trim = [](std::string s) {
      const auto b2 = s.find_first_not_of(" \t");
      if (b2 == std::string::npos) return std::string();
      const auto e2 = s.find_last_not_of(" \t");
      return s.substr(b2, e2 - b2 + 1);
    };
    apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

inline RunConfig RunConfig::from_file(const std::string& path) {
  RunConfig cfg;
  cfg.apply_file(path);
  return cfg;
}

inline std::string RunConfig::resolved() const {
  std::ostringstream o;
  o << "width=" << seq.width << "\n"
    << "height=" << seq.height << "\n"
    << "num_frames=" << seq.num_frames << "\n"
    << "num_classes=" << seq.num_classes << "\n"
    << "spawn_rate=" << seq.spawn_rate << "\n"
    << "flow_velocity=" << seq.flow_velocity << "\n"
    << "jitter_sigma=" << seq.jitter_sigma << "\n"
    << "size_min=" << seq.size_min << "\n"
    << "size_max=" << seq.size_max << "\n"
    << "impurity_count=" << seq.impurity_count << "\n"
    << "train_sequences=" << train_sequences << "\n"
    << "test_sequences=" << test_sequences << "\n"
    << "srm_mode=" << (model.srm_mode == SrmMode::Paper ? "paper" : "classic") << "\n"
    << "memory_mode=" << (memory_mode == MemoryMode::Mean ? "mean" : "sum") << "\n"
    << "stem_channels=" << model.stem_channels << "\n"
    << "enc1=" << model.enc1 << "\n"
    << "enc2=" << model.enc2 << "\n"
    << "enc3=" << model.enc3 << "\n"
    << "enc4=" << model.enc4 << "\n"
    << "feat_channels=" << model.feat_channels << "\n"
    << "ata_inner=" << model.ata_inner << "\n"
    << "refined_channels=" << model.refined_channels << "\n"
    << "embed_channels=" << model.embed_channels << "\n"
    << "head_channels=" << model.head_channels << "\n"
    << "softmax_temperature=" << model.softmax_temperature << "\n"
    << "loss_weight_cva=" << model.loss_weight_cva << "\n"
    << "score_threshold=" << tracker.score_threshold << "\n"
    << "gate_radius=" << tracker.gate_radius << "\n"
    << "max_age=" << tracker.max_age << "\n"
    << "min_hits=" << tracker.min_hits << "\n"
    << "epochs=" << train.epochs << "\n"
    << "batch_size=" << train.batch_size << "\n"
    << "learning_rate=" << train.learning_rate << "\n"
    << "decay_epoch1=" << train.decay_epoch1 << "\n"
    << "decay_epoch2=" << train.decay_epoch2 << "\n"
    << "pair_stride=" << train.pair_stride << "\n"
    << "flip_prob=" << train.flip_prob << "\n"
    << "shift_prob=" << train.shift_prob << "\n"
    << "seed=" << seed << "\n";
  return o.str();
}

inline void write_resolved_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write config: " + path);
  f << cfg.resolved();
}

}  // namespace phytrack
