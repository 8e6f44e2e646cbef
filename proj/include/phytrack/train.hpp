#pragma once

#include <chrono>
#include <fstream>

#include "phytrack/config.hpp"
#include "phytrack/model.hpp"

namespace phytrack {

// One training sequence held in memory: frames as [0,1] tensors plus
// per-frame ground-truth boxes.
struct TrainSequence {
  std::vector<Tensor> frames01;
  std::vector<std::vector<MotRow>> boxes;  // index 0 = frame 1
};

inline TrainSequence load_train_sequence(const std::string& seq_dir) {
  TrainSequence seq;
  const auto paths = list_sequence_frames(seq_dir);
  if (paths.empty())
    throw std::runtime_error("no frames found in " + seq_dir + "/img1");
  for (const auto& p : paths) seq.frames01.push_back(image_to_tensor01(load_png(p)));
  seq.boxes.resize(seq.frames01.size());
  namespace fs = std::filesystem;
  const auto gt_path = (fs::path(seq_dir) / "gt" / "gt.txt").string();
  for (const auto& row : read_mot(gt_path))
    if (row.frame >= 1 && row.frame <= static_cast<int>(seq.frames01.size()))
      seq.boxes[row.frame - 1].push_back(row);
  return seq;
}

namespace detail {

inline Tensor flip_horizontal(const Tensor& t) {
  const int H = t.dim(0), W = t.dim(1), C = t.dim(2);
  Tensor out({H, W, C});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) out(y, x, c) = t(y, W - 1 - x, c);
  return out;
}

inline Tensor shift_replicate(const Tensor& t, int dy, int dx) {
  const int H = t.dim(0), W = t.dim(1), C = t.dim(2);
  Tensor out({H, W, C});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int sy = std::clamp(y - dy, 0, H - 1);
      const int sx = std::clamp(x - dx, 0, W - 1);
      for (int c = 0; c < C; ++c) out(y, x, c) = t(sy, sx, c);
    }
  return out;
}

inline std::vector<BoxLabel> to_labels(const std::vector<MotRow>& rows, int W,
                                       int H, bool flip, int dy, int dx) {
  std::vector<BoxLabel> out;
  for (const auto& r : rows) {
    double left = flip ? W - r.left - r.width : r.left;
    left += dx;
    double top = r.top + dy;
    const double right = std::min(left + r.width, static_cast<double>(W));
    const double bottom = std::min(top + r.height, static_cast<double>(H));
    left = std::max(0.0, left);
    top = std::max(0.0, top);
    if (right - left < 3.0 || bottom - top < 3.0) continue;
    out.push_back({left, top, right - left, bottom - top, r.class_id});
  }
  return out;
}

}  // namespace detail

struct EpochStats {
  double det = 0, cva = 0, total = 0;
};

struct TrainArtifacts {
  std::vector<EpochStats> epochs;
  double best_total = std::numeric_limits<double>::infinity();
};

// Optimizes L = 0.5*(L_det(prev) + L_det(cur)) + w * L_CVA over adjacent-frame
// pairs. Horizontal flips are decided once per (sequence, epoch) so the
// sequence-level offset memory sees a coherent flow direction; translations
// are per-pair (a common shift leaves inter-frame offsets unchanged).
inline TrainArtifacts train_model(PhyModel& model,
                                  const std::vector<TrainSequence>& data,
                                  const TrainConfig& tc,
                                  const std::string& loss_csv_path,
                                  const std::string& best_ckpt_path,
                                  const std::string& final_ckpt_path,
                                  std::uint64_t seed,
                                  MemoryMode memory_mode = MemoryMode::Mean,
                                  std::function<void(int, const EpochStats&)>
                                      on_epoch = nullptr) {
  if (data.empty()) throw std::invalid_argument("train: no sequences");
  std::mt19937_64 rng(seed ^ 0x7261696e);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> shift_px(-8, 8);

  AdamOptimizer opt(tc.learning_rate);
  const double w_cva = model.config().loss_weight_cva;

  std::ofstream csv(loss_csv_path);
  if (!csv) throw std::runtime_error("cannot write loss csv: " + loss_csv_path);
  csv << "epoch,det,cva,total\n";

  TrainArtifacts art;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    if (epoch == tc.decay_epoch1 || epoch == tc.decay_epoch2)
      opt.set_lr(opt.lr() * 0.1);

    EpochStats stats;
    long pair_count = 0;
    int in_batch = 0;
    model.store().zero_grads();

    for (const auto& seq : data) {
      const bool flip = u01(rng) < tc.flip_prob;
      OffsetMemory memory;
      bool memory_ready = false;

      const int n = static_cast<int>(seq.frames01.size());
      for (int t = 1; t < n; t += std::max(1, tc.pair_stride)) {
        const int W = seq.frames01[t].dim(1), H = seq.frames01[t].dim(0);
        int dy = 0, dx = 0;
        if (u01(rng) < tc.shift_prob) {
          dy = shift_px(rng);
          dx = shift_px(rng);
        }
        Tensor fa = seq.frames01[t - 1], fb = seq.frames01[t];
        if (flip) {
          fa = detail::flip_horizontal(fa);
          fb = detail::flip_horizontal(fb);
        }
        if (dy || dx) {
          fa = detail::shift_replicate(fa, dy, dx);
          fb = detail::shift_replicate(fb, dy, dx);
        }
        auto boxes_a = detail::to_labels(seq.boxes[t - 1], W, H, flip, dy, dx);
        auto boxes_b = detail::to_labels(seq.boxes[t], W, H, flip, dy, dx);

        Var f_a = model.tfe()(make_constant(fa));
        Var f_b = model.tfe()(make_constant(fb));
        const int h4 = f_a->val.dim(0), w4 = f_a->val.dim(1);
        const int h8 = (h4 + 1) / 2, w8 = (w4 + 1) / 2;

        // detection path on the previous frame (no propagated features yet)
        Var zero_prop =
            make_constant(Tensor({h8, w8, model.config().refined_channels}));
        HeadOutput head_a = model.head()(model.fmr().fuse(f_a, zero_prop));
        auto targets_a =
            render_targets(boxes_a, h4, w4, model.config().num_classes);
        Var det_a = det_loss(head_a, targets_a);

        // temporal path
        auto ts = model.ata().tsca(f_a, f_b);
        Var s = model.ata().similarity_volume(ts.omega_cur, ts.omega_prev);
        auto dec = offsets_from_similarity(s, 8.0,
                                           model.config().softmax_temperature);

        if (!memory_ready) {
          memory.reset(h8, w8, memory_mode);
          memory_ready = true;
        }
        memory.absorb(dec.ox->val, dec.oy->val);
        Var wx = flow_agnostic_offset(dec.ox, memory.mean_ox);
        Var wy = flow_agnostic_offset(dec.oy, memory.mean_oy);

        Tensor p_a8 = ops::maxpool2x2(
                          make_constant(head_a.center_heatmap->val))
                          ->val;  // stop-gradient gate
        Var gated =
            gate_previous_features(ts.omega_prev, make_constant(p_a8));
        Var prop = model.fmr().propagate(gated, wx, wy, 8.0);
        HeadOutput head_b = model.head()(model.fmr().fuse(f_b, prop));
        auto targets_b =
            render_targets(boxes_b, h4, w4, model.config().num_classes);
        Var det_b = det_loss(head_b, targets_b);

        // correspondence supervision for objects visible in both frames
        std::vector<Correspondence> corr;
        for (const auto& rb : seq.boxes[t]) {
          const MotRow* ra = nullptr;
          for (const auto& cand : seq.boxes[t - 1])
            if (cand.id == rb.id) {
              ra = &cand;
              break;
            }
          if (!ra) continue;
          auto cell = [&](const MotRow& r, int& ci, int& cj) {
            double cx = r.left + r.width / 2.0, cy = r.top + r.height / 2.0;
            if (flip) cx = W - cx;
            cx += dx;
            cy += dy;
            ci = std::clamp(static_cast<int>(cy / 8.0), 0, h8 - 1);
            cj = std::clamp(static_cast<int>(cx / 8.0), 0, w8 - 1);
          };
          Correspondence c;
          cell(rb, c.cur_i, c.cur_j);
          cell(*ra, c.prev_i, c.prev_j);
          corr.push_back(c);
        }
        Var cva = corr.empty()
                      ? make_constant(Tensor::scalar(0.0))
                      : ops::scale(cva_loss(dec, corr),
                                   1.0 / static_cast<double>(corr.size()));

        Var det_term = ops::scale(ops::add(det_a, det_b), 0.5);
        Var total = ops::add(det_term, ops::scale(cva, w_cva));

        if (!std::isfinite(det_term->val[0]))
          throw std::runtime_error("training aborted: non-finite detection loss at epoch " +
                                   std::to_string(epoch));
        if (!std::isfinite(cva->val[0]))
          throw std::runtime_error("training aborted: non-finite correspondence loss at epoch " +
                                   std::to_string(epoch));

        backward(total);
        stats.det += det_term->val[0];
        stats.cva += cva->val[0];
        stats.total += total->val[0];
        ++pair_count;
        if (++in_batch >= tc.batch_size) {
          opt.step(model.store());
          model.store().zero_grads();
          in_batch = 0;
        }
      }
    }
    if (in_batch > 0) {
      opt.step(model.store());
      model.store().zero_grads();
    }

    if (pair_count > 0) {
      stats.det /= pair_count;
      stats.cva /= pair_count;
      stats.total /= pair_count;
    }
    char line[128];
    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f\n", epoch, stats.det,
                  stats.cva, stats.total);
    csv << line;
    csv.flush();
    art.epochs.push_back(stats);
    if (stats.total < art.best_total) {
      art.best_total = stats.total;
      save_checkpoint(model.store(), best_ckpt_path);
    }
    if (on_epoch) on_epoch(epoch, stats);
  }
  save_checkpoint(model.store(), final_ckpt_path);
  return art;
}

}  // namespace phytrack
