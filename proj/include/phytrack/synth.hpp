#pragma once

#include <random>

#include "phytrack/image.hpp"
#include "phytrack/mot_io.hpp"

namespace phytrack {

// ---------------------------------------------------------------------------
// sequence generation

struct SequenceConfig {
  int width = 160, height = 96;
  int num_frames = 150;
  int num_classes = 6;
  double spawn_rate = 0.05;     // expected objects entering per frame
  double flow_velocity = 2.0;   // pixels/frame, rightward drift
  double jitter_sigma = 0.15;   // per-object per-frame deviation
  double size_min = 10.0, size_max = 22.0;  // pixels
  int impurity_count = 8;       // classless distractor blobs
  std::uint64_t seed = 0;
};

inline void validate(const SequenceConfig& c) {
  auto fail = [](const std::string& field) {
    throw std::invalid_argument("invalid sequence config: " + field);
  };
  if (c.width < 32) fail("width (must be >= 32)");
  if (c.height < 32) fail("height (must be >= 32)");
  if (c.num_frames < 2) fail("num_frames (must be >= 2)");
  if (c.num_classes < 1) fail("num_classes (must be >= 1)");
  if (!std::isfinite(c.flow_velocity)) fail("flow_velocity (must be finite)");
  if (c.spawn_rate < 0) fail("spawn_rate (must be >= 0)");
  if (c.jitter_sigma < 0) fail("jitter_sigma (must be >= 0)");
  if (c.size_min < 4 || c.size_max < c.size_min) fail("size_range");
  if (c.impurity_count < 0) fail("impurity_count (must be >= 0)");
}

struct SynthOutput {
  std::vector<Image> frames;
  std::vector<MotRow> gt;
};

// Optional frame-1 population with known geometry (replaces the random
// steady-state fill); used for closed-form kinematics checks.
struct SeedObject {
  double left, top, width, height;
  int class_id = 0;
};

namespace detail {

struct SynthObject {
  int id, class_id;
  double cx, cy, w, h;
  double phase;  // per-object texture phase
  bool alive = true;
};

struct Impurity {
  double cx, cy, r, shade;
};

// Renders one low-contrast sprite clipped to the frame. Shape family is
// class_id mod 3: ellipse, horizontal rod, chain of three lobes.
inline void draw_sprite(Image& img, const SynthObject& o) {
  const int family = ((o.class_id % 3) + 3) % 3;
  const double rx = o.w / 2.0, ry = o.h / 2.0;
  const int y0 = std::max(0, static_cast<int>(std::floor(o.cy - ry)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(o.cy + ry)));
  const int x0 = std::max(0, static_cast<int>(std::floor(o.cx - rx)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(o.cx + rx)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5 - o.cx) / rx, dy = (y + 0.5 - o.cy) / ry;
      double inside = 0.0;
      if (family == 0) {
        inside = 1.0 - (dx * dx + dy * dy);
      } else if (family == 1) {
        inside = 1.0 - (dx * dx + std::pow(std::abs(dy) * 1.8, 2.0));
      } else {
        for (double cx3 : {-0.6, 0.0, 0.6}) {
          const double ddx = (dx - cx3) / 0.38, ddy = dy / 0.9;
          inside = std::max(inside, 1.0 - (ddx * ddx + ddy * ddy));
        }
      }
      if (inside <= 0.0) continue;
      // interior texture: class-dependent stripes at low contrast
      const double tex =
          8.0 * std::sin(0.9 * (x + o.phase) + 0.35 * o.class_id * y);
      const double body = 120.0 + 12.0 * (o.class_id % 3) + tex;
      const double alpha = std::min(1.0, inside * 3.0);
      for (int c = 0; c < 3; ++c) {
        const double tint = (c == 1) ? 6.0 * ((o.class_id / 3) % 2) : 0.0;
        const double v = (1.0 - alpha) * img.at(y, x, c) + alpha * (body + tint);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
}

inline void draw_impurity(Image& img, const Impurity& b) {
  const int y0 = std::max(0, static_cast<int>(b.cy - b.r));
  const int y1 = std::min(img.height - 1, static_cast<int>(b.cy + b.r));
  const int x0 = std::max(0, static_cast<int>(b.cx - b.r));
  const int x1 = std::min(img.width - 1, static_cast<int>(b.cx + b.r));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double d2 = ((x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy)) /
                        (b.r * b.r);
      if (d2 > 1.0) continue;
      const double alpha = 0.35 * (1.0 - d2);
      for (int c = 0; c < 3; ++c) {
        const double v = (1.0 - alpha) * img.at(y, x, c) + alpha * b.shade;
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
}

}  // namespace detail

// Deterministic synthetic flowing-microscopy sequence: objects enter at the
// left edge, drift right at flow_velocity plus per-object jitter, and exit on
// the right. Ground-truth rows trace the rendered sprite boxes exactly.
inline SynthOutput synth_sequence(const SequenceConfig& cfg,
                                  const std::vector<SeedObject>& seeds = {}) {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::poisson_distribution<int> spawn_count(cfg.spawn_rate);

  SynthOutput out;
  std::vector<detail::SynthObject> objects;
  std::vector<detail::Impurity> impurities;
  int next_id = 1;

  auto spawn_at = [&](double cx_lo, double cx_hi) {
    detail::SynthObject o;
    o.id = next_id++;
    o.class_id = static_cast<int>(u01(rng) * cfg.num_classes) % cfg.num_classes;
    o.w = cfg.size_min + u01(rng) * (cfg.size_max - cfg.size_min);
    o.h = cfg.size_min + u01(rng) * (cfg.size_max - cfg.size_min);
    o.cx = cx_lo + u01(rng) * (cx_hi - cx_lo);
    o.cy = o.h / 2.0 + u01(rng) * (cfg.height - o.h);
    o.phase = u01(rng) * 100.0;
    objects.push_back(o);
  };

  if (!seeds.empty()) {
    for (const auto& s : seeds) {
      detail::SynthObject o;
      o.id = next_id++;
      o.class_id = s.class_id;
      o.w = s.width;
      o.h = s.height;
      o.cx = s.left + s.width / 2.0;
      o.cy = s.top + s.height / 2.0;
      o.phase = 0.0;
      objects.push_back(o);
    }
  } else {
    // steady-state initial population so frame 1 is not empty
    const double traverse = cfg.width / std::max(std::abs(cfg.flow_velocity), 0.5);
    const int initial = static_cast<int>(std::lround(cfg.spawn_rate * traverse));
    for (int i = 0; i < initial; ++i)
      spawn_at(cfg.size_max, cfg.width - cfg.size_max);
  }

  for (int i = 0; i < cfg.impurity_count; ++i) {
    detail::Impurity b;
    b.cx = u01(rng) * cfg.width;
    b.cy = u01(rng) * cfg.height;
    b.r = 1.5 + 2.5 * u01(rng);
    b.shade = 150.0 + 60.0 * u01(rng);
    impurities.push_back(b);
  }

  for (int frame = 1; frame <= cfg.num_frames; ++frame) {
    if (frame > 1) {
      // advance flow, clamp vertical drift to keep tracks inside the view
      for (auto& o : objects) {
        if (!o.alive) continue;
        o.cx += cfg.flow_velocity + cfg.jitter_sigma * jitter(rng);
        o.cy += cfg.jitter_sigma * jitter(rng);
        o.cy = std::clamp(o.cy, o.h / 2.0, cfg.height - o.h / 2.0);
        if (o.cx - o.w / 2.0 >= cfg.width) o.alive = false;  // fully exited
      }
      for (auto& b : impurities) {
        b.cx += 0.4 * cfg.flow_velocity + 0.3 * jitter(rng);
        b.cy += 0.3 * jitter(rng);
        if (b.cx - b.r > cfg.width) b.cx = -b.r;
      }
      const int n = spawn_count(rng);
      for (int i = 0; i < n; ++i) spawn_at(1.0, 4.0 + cfg.size_max / 2.0);
    }

    // background: light field with gentle deterministic mottle
    Image img(cfg.width, cfg.height);
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        const double v = 205.0 + 5.0 * std::sin(0.21 * x) * std::cos(0.17 * y);
        for (int c = 0; c < 3; ++c)
          img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    for (const auto& b : impurities) detail::draw_impurity(img, b);

    for (const auto& o : objects) {
      if (!o.alive) continue;
      detail::draw_sprite(img, o);
      const double left = o.cx - o.w / 2.0, top = o.cy - o.h / 2.0;
      const double cl = std::max(0.0, left), ct = std::max(0.0, top);
      const double cr = std::min(static_cast<double>(cfg.width), left + o.w);
      const double cb = std::min(static_cast<double>(cfg.height), top + o.h);
      if (cr - cl <= 0.0 || cb - ct <= 0.0) continue;
      MotRow row;
      row.frame = frame;
      row.id = o.id;
      row.left = cl;
      row.top = ct;
      row.width = cr - cl;
      row.height = cb - ct;
      row.conf = 1.0;
      row.class_id = o.class_id;
      row.visibility = ((cr - cl) * (cb - ct)) / (o.w * o.h);
      out.gt.push_back(row);
    }
    out.frames.push_back(std::move(img));
  }
  return out;
}

// ---------------------------------------------------------------------------
// noise corruptions

enum class NoiseKind { None, Occlusion, Gray, Blur, SaltPepper };
enum class NoiseLevel { Medium, Hard };

inline NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "none") return NoiseKind::None;
  if (s == "occlusion") return NoiseKind::Occlusion;
  if (s == "gray") return NoiseKind::Gray;
  if (s == "blur") return NoiseKind::Blur;
  if (s == "salt_pepper") return NoiseKind::SaltPepper;
  throw std::invalid_argument("unknown noise kind: " + s);
}

inline std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::None: return "none";
    case NoiseKind::Occlusion: return "occlusion";
    case NoiseKind::Gray: return "gray";
    case NoiseKind::Blur: return "blur";
    case NoiseKind::SaltPepper: return "salt_pepper";
  }
  return "?";
}

struct NoiseSpec {
  NoiseKind kind = NoiseKind::None;
  NoiseLevel level = NoiseLevel::Medium;
  int occluder_count = 0;
  double occluder_max_area = 0.0;  // fraction of frame area per rectangle
  double blur_sigma = 0.0;
  double salt_pepper_p = 0.0;

  // Level defaults chosen so hard strictly exceeds medium for every kind.
  static NoiseSpec make(NoiseKind kind, NoiseLevel level) {
    NoiseSpec s;
    s.kind = kind;
    s.level = level;
    const bool hard = (level == NoiseLevel::Hard);
    switch (kind) {
      case NoiseKind::None:
        break;
      case NoiseKind::Occlusion:
        s.occluder_count = hard ? 5 : 2;
        s.occluder_max_area = hard ? 0.20 : 0.10;
        break;
      case NoiseKind::Gray:
        if (!hard)
          throw std::invalid_argument("gray noise has no medium level");
        break;
      case NoiseKind::Blur:
        s.blur_sigma = hard ? 2.5 : 1.0;
        break;
      case NoiseKind::SaltPepper:
        s.salt_pepper_p = hard ? 0.10 : 0.02;
        break;
    }
    return s;
  }
};

namespace detail {

inline void gaussian_blur_inplace(Image& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double z = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    z += k[i + radius];
  }
  for (auto& v : k) v /= z;
  const int H = img.height, W = img.width;
  std::vector<double> tmp(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] * img.at(y, std::clamp(x + i, 0, W - 1), c);
        tmp[(static_cast<std::size_t>(y) * W + x) * 3 + c] = acc;
      }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, H - 1);
          acc += k[i + radius] * tmp[(static_cast<std::size_t>(yy) * W + x) * 3 + c];
        }
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(acc, 0.0, 255.0));
      }
}

}  // namespace detail

inline Image apply_noise(const Image& frame, const NoiseSpec& spec,
                         std::mt19937_64& rng) {
  if (frame.empty()) throw std::invalid_argument("apply_noise: empty frame");
  Image out = frame;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  switch (spec.kind) {
    case NoiseKind::None:
      break;
    case NoiseKind::Occlusion: {
      for (int i = 0; i < spec.occluder_count; ++i) {
        const double area = u01(rng) * spec.occluder_max_area *
                            frame.width * frame.height;
        const double aspect = 0.5 + u01(rng);
        int w = std::max(2, static_cast<int>(std::sqrt(area * aspect)));
        int h = std::max(2, static_cast<int>(std::sqrt(area / aspect)));
        w = std::min(w, frame.width);
        h = std::min(h, frame.height);
        const int x0 = static_cast<int>(u01(rng) * (frame.width - w));
        const int y0 = static_cast<int>(u01(rng) * (frame.height - h));
        const std::uint8_t shade = static_cast<std::uint8_t>(40 + 40 * u01(rng));
        for (int y = y0; y < y0 + h; ++y)
          for (int x = x0; x < x0 + w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = shade;
      }
      break;
    }
    case NoiseKind::Gray: {
      for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
          const double lum = 0.299 * out.at(y, x, 0) + 0.587 * out.at(y, x, 1) +
                             0.114 * out.at(y, x, 2);
          const std::uint8_t g = static_cast<std::uint8_t>(
              std::lround(std::clamp(lum, 0.0, 255.0)));
          out.at(y, x, 0) = out.at(y, x, 1) = out.at(y, x, 2) = g;
        }
      break;
    }
    case NoiseKind::Blur:
      if (spec.blur_sigma > 0) detail::gaussian_blur_inplace(out, spec.blur_sigma);
      break;
    case NoiseKind::SaltPepper: {
      for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x)
          if (u01(rng) < spec.salt_pepper_p) {
            const std::uint8_t v = (u01(rng) < 0.5) ? 0 : 255;
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = v;
          }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// dataset directory emission (MOTChallenge layout)

inline void write_sequence_dir(const std::string& dir,
                               const std::vector<Image>& frames,
                               const std::vector<MotRow>& gt, double framerate = 30.0) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "img1");
  fs::create_directories(fs::path(dir) / "gt");
  for (std::size_t i = 0; i < frames.size(); ++i)
    save_png(frames[i], (fs::path(dir) / "img1" /
                         frame_filename(static_cast<int>(i) + 1)).string());
  write_mot(gt, (fs::path(dir) / "gt" / "gt.txt").string());
  SeqInfo info;
  if (!frames.empty()) {
    info.width = frames[0].width;
    info.height = frames[0].height;
  }
  info.length = static_cast<int>(frames.size());
  info.framerate = framerate;
  write_seqinfo(info, (fs::path(dir) / "seqinfo.txt").string());
}

}  // namespace phytrack
