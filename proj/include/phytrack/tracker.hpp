#pragma once

#include "phytrack/image.hpp"
#include "phytrack/model.hpp"
#include "phytrack/mot_io.hpp"

namespace phytrack {

struct TrackerConfig {
  double score_threshold = 0.4;
  double gate_radius = 30.0;  // pixels, association distance bound
  int max_age = 5;            // frames a track may go unmatched
  int min_hits = 2;           // confirmations before a track is reported
  MemoryMode memory_mode = MemoryMode::Mean;

  void validate() const {
    if (score_threshold <= 0.0 || score_threshold >= 1.0)
      throw std::invalid_argument("tracker config: score_threshold outside (0,1)");
    if (gate_radius <= 0.0)
      throw std::invalid_argument("tracker config: gate_radius must be > 0");
    if (max_age < 1) throw std::invalid_argument("tracker config: max_age < 1");
    if (min_hits < 1) throw std::invalid_argument("tracker config: min_hits < 1");
  }
};

struct TrackState {
  int track_id;
  double last_left, last_top, last_width, last_height;
  double last_cx, last_cy;
  std::vector<int> class_votes;
  int miss_count = 0;
  int hits = 0;
  struct HistoryEntry {
    int frame;
    double left, top, width, height, score;
  };
  std::vector<HistoryEntry> history;

  int majority_class() const {
    int best = 0;
    for (std::size_t c = 1; c < class_votes.size(); ++c)
      if (class_votes[c] > class_votes[best]) best = static_cast<int>(c);
    return best;
  }
};

// Temporarily disables gradient recording so tracking builds no tape.
class InferenceGuard {
 public:
  explicit InferenceGuard(ParamStore& store) : store_(store) {
    for (const auto& [name, p] : store_.all()) p->requires_grad = false;
  }
  ~InferenceGuard() {
    for (const auto& [name, p] : store_.all()) p->requires_grad = true;
  }

 private:
  ParamStore& store_;
};

struct AssociationResult {
  std::vector<std::pair<int, int>> matches;  // (detection idx, track idx)
  std::vector<int> unmatched_dets;
  std::vector<int> unmatched_tracks;
};

// Greedy nearest-neighbour matching: each detection's center is moved by the
// decoded backward offset at its cell to predict its previous-frame position;
// pairs are taken in ascending distance order inside the gate.
inline AssociationResult associate(const std::vector<Detection>& dets,
                                   const std::vector<TrackState>& tracks,
                                   const Tensor* offset_x, const Tensor* offset_y,
                                   double offset_stride, double gate_radius) {
  AssociationResult res;
  std::vector<char> det_used(dets.size(), 0), track_used(tracks.size(), 0);
  struct Cand {
    double dist;
    int d, t;
  };
  std::vector<Cand> cands;
  for (std::size_t d = 0; d < dets.size(); ++d) {
    double px = dets[d].cx, py = dets[d].cy;
    if (offset_x && offset_y) {
      const int i = std::clamp(static_cast<int>(dets[d].cy / offset_stride), 0,
                               offset_x->dim(0) - 1);
      const int j = std::clamp(static_cast<int>(dets[d].cx / offset_stride), 0,
                               offset_x->dim(1) - 1);
      px += (*offset_x)(i, j);
      py += (*offset_y)(i, j);
    }
    for (std::size_t t = 0; t < tracks.size(); ++t) {
      const double dx = px - tracks[t].last_cx, dy = py - tracks[t].last_cy;
      const double dist = std::sqrt(dx * dx + dy * dy);
      if (dist <= gate_radius)
        cands.push_back({dist, static_cast<int>(d), static_cast<int>(t)});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.d != b.d) return a.d < b.d;
    return a.t < b.t;
  });
  for (const auto& c : cands) {
    if (det_used[c.d] || track_used[c.t]) continue;
    det_used[c.d] = 1;
    track_used[c.t] = 1;
    res.matches.emplace_back(c.d, c.t);
  }
  for (std::size_t d = 0; d < dets.size(); ++d)
    if (!det_used[d]) res.unmatched_dets.push_back(static_cast<int>(d));
  for (std::size_t t = 0; t < tracks.size(); ++t)
    if (!track_used[t]) res.unmatched_tracks.push_back(static_cast<int>(t));
  return res;
}

// The online loop. Owns all cross-frame state for one sequence; per-frame
// outputs never change once emitted.
class Tracker {
 public:
  Tracker(PhyModel& model, TrackerConfig cfg) : model_(model), cfg_(cfg) {
    cfg_.validate();
  }

  // Processes frame `frame_index` (1-based, strictly sequential) and returns
  // the result rows reported for it.
  std::vector<MotRow> step(const Image& frame, int frame_index) {
    if (frame_index != frames_done_ + 1)
      throw std::invalid_argument("tracker: out-of-order frame " +
                                  std::to_string(frame_index));
    InferenceGuard guard(model_.store());

    Var image = make_constant(image_to_tensor01(frame));
    Var f_t = model_.tfe()(image);
    const int h8 = (f_t->val.dim(0) + 1) / 2, w8 = (f_t->val.dim(1) + 1) / 2;

    Var fused;
    Tensor offset_x, offset_y;
    bool have_offsets = false;
    if (frames_done_ == 0) {
      // detection-only first frame; zero-seeded memory
      memory_.reset(h8, w8, cfg_.memory_mode);
      Var zero_prop = make_constant(
          Tensor({h8, w8, model_.config().refined_channels}));
      fused = model_.fmr().fuse(f_t, zero_prop);
    } else {
      auto ts = model_.ata().tsca(f_prev_, f_t);
      Var s = model_.ata().similarity_volume(ts.omega_cur, ts.omega_prev);
      auto dec = offsets_from_similarity(s, 8.0,
                                         model_.config().softmax_temperature);
      memory_.absorb(dec.ox->val, dec.oy->val);
      Var wx = flow_agnostic_offset(dec.ox, memory_.mean_ox);
      Var wy = flow_agnostic_offset(dec.oy, memory_.mean_oy);
      Var gated = gate_previous_features(ts.omega_prev, make_constant(p_prev8_));
      Var prop = model_.fmr().propagate(gated, wx, wy, 8.0);
      fused = model_.fmr().fuse(f_t, prop);
      offset_x = dec.ox->val;
      offset_y = dec.oy->val;
      have_offsets = true;
    }

    HeadOutput head = model_.head()(fused);
    std::vector<Detection> dets =
        decode(head, cfg_.score_threshold, frame.width, frame.height);

    // cache for the next step
    f_prev_ = f_t;
    p_prev8_ = ops::maxpool2x2(head.center_heatmap)->val;

    auto assoc = associate(dets, tracks_,
                           have_offsets ? &offset_x : nullptr,
                           have_offsets ? &offset_y : nullptr, 8.0,
                           cfg_.gate_radius);

    std::vector<MotRow> reported;
    auto report = [&](const TrackState& tr, const Detection& d) {
      MotRow row;
      row.frame = frame_index;
      row.id = tr.track_id;
      row.left = d.left;
      row.top = d.top;
      row.width = d.width;
      row.height = d.height;
      row.conf = d.score;
      row.class_id = tr.majority_class();
      row.visibility = 1.0;
      reported.push_back(row);
    };

    for (const auto& [di, ti] : assoc.matches) {
      TrackState& tr = tracks_[ti];
      const Detection& d = dets[di];
      tr.last_left = d.left;
      tr.last_top = d.top;
      tr.last_width = d.width;
      tr.last_height = d.height;
      tr.last_cx = d.cx;
      tr.last_cy = d.cy;
      ++tr.class_votes[d.class_id];
      tr.miss_count = 0;
      ++tr.hits;
      tr.history.push_back({frame_index, d.left, d.top, d.width, d.height, d.score});
      if (tr.hits >= cfg_.min_hits) report(tr, d);
    }

    for (int di : assoc.unmatched_dets) {
      const Detection& d = dets[di];
      TrackState tr;
      tr.track_id = next_id_++;
      tr.last_left = d.left;
      tr.last_top = d.top;
      tr.last_width = d.width;
      tr.last_height = d.height;
      tr.last_cx = d.cx;
      tr.last_cy = d.cy;
      tr.class_votes.assign(model_.config().num_classes, 0);
      ++tr.class_votes[d.class_id];
      tr.hits = 1;
      tr.history.push_back({frame_index, d.left, d.top, d.width, d.height, d.score});
      if (tr.hits >= cfg_.min_hits) report(tr, d);
      tracks_.push_back(std::move(tr));
    }

    // age unmatched tracks; retire at the bound
    std::vector<TrackState> kept;
    std::vector<char> missed(tracks_.size(), 0);
    for (int ti : assoc.unmatched_tracks) missed[ti] = 1;
    for (std::size_t t = 0; t < tracks_.size(); ++t) {
      if (missed[t]) ++tracks_[t].miss_count;
      if (tracks_[t].miss_count < cfg_.max_age) kept.push_back(std::move(tracks_[t]));
    }
    tracks_ = std::move(kept);

    ++frames_done_;
    std::sort(reported.begin(), reported.end(),
              [](const MotRow& a, const MotRow& b) { return a.id < b.id; });
    return reported;
  }

  const std::vector<TrackState>& tracks() const { return tracks_; }
  int frames_done() const { return frames_done_; }
  const OffsetMemory& memory() const { return memory_; }

 private:
  PhyModel& model_;
  TrackerConfig cfg_;
  int frames_done_ = 0;
  int next_id_ = 1;
  Var f_prev_;
  Tensor p_prev8_;
  OffsetMemory memory_;
  std::vector<TrackState> tracks_;
};

}  // namespace phytrack
