#pragma once

#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "phytrack/mot_io.hpp"

namespace phytrack {

inline double box_iou(double l1, double t1, double w1, double h1, double l2,
                      double t2, double w2, double h2) {
  const double ix = std::max(0.0, std::min(l1 + w1, l2 + w2) - std::max(l1, l2));
  const double iy = std::max(0.0, std::min(t1 + h1, t2 + h2) - std::max(t1, t2));
  const double inter = ix * iy;
  const double uni = w1 * h1 + w2 * h2 - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double box_iou(const MotRow& a, const MotRow& b) {
  return box_iou(a.left, a.top, a.width, a.height, b.left, b.top, b.width, b.height);
}

// Maximum-total-weight bipartite assignment (O(n^3) Hungarian with potentials).
// weights is n x m row-major; entries < min_weight are forbidden. Returns for
// each row the assigned column or -1.
inline std::vector<int> max_weight_assignment(const std::vector<double>& weights,
                                              int n, int m, double min_weight) {
  const int dim = std::max(n, m);
  // square min-cost matrix: allowed pairs cost -weight, forbidden pairs and
  // padding cost 0, so the optimum is exactly the maximum-total-weight
  // matching (no cardinality preference)
  std::vector<double> a(static_cast<std::size_t>(dim + 1) * (dim + 1), 0.0);
  for (int i = 1; i <= dim; ++i)
    for (int j = 1; j <= dim; ++j) {
      double c = 0.0;
      if (i <= n && j <= m) {
        const double w = weights[static_cast<std::size_t>(i - 1) * m + (j - 1)];
        if (w >= min_weight) c = -w;
      }
      a[static_cast<std::size_t>(i) * (dim + 1) + j] = c;
    }

  std::vector<double> u(dim + 1, 0.0), v(dim + 1, 0.0);
  std::vector<int> p(dim + 1, 0), way(dim + 1, 0);
  for (int i = 1; i <= dim; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(dim + 1, std::numeric_limits<double>::infinity());
    std::vector<char> used(dim + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = std::numeric_limits<double>::infinity();
      int j1 = 0;
      for (int j = 1; j <= dim; ++j) {
        if (used[j]) continue;
        const double cur =
            a[static_cast<std::size_t>(i0) * (dim + 1) + j] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= dim; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> match(n, -1);
  for (int j = 1; j <= dim; ++j) {
    const int i = p[j];
    if (i >= 1 && i <= n && j <= m) {
      const double w = weights[static_cast<std::size_t>(i - 1) * m + (j - 1)];
      if (w >= min_weight) match[i - 1] = j - 1;
    }
  }
  return match;
}

struct EvalReport {
  long num_gt = 0;  // ground-truth box count
  long fp = 0, fn = 0, ids = 0;
  double mota = 0.0, idf1 = 0.0;
};

// CLEAR-MOT evaluation. Per frame, matches from the previous frame are kept
// while they still overlap; the remainder is matched by maximum-total-IoU
// optimal assignment. IDF1 comes from one global identity matching.
inline EvalReport evaluate(const std::vector<MotRow>& gt,
                           const std::vector<MotRow>& hyp,
                           double iou_threshold = 0.5) {
  if (gt.empty()) throw std::invalid_argument("evaluate: no ground truth");

  std::map<int, std::vector<MotRow>> gt_frames, hyp_frames;
  std::set<int> frames;
  for (const auto& r : gt) {
    gt_frames[r.frame].push_back(r);
    frames.insert(r.frame);
  }
  for (const auto& r : hyp) {
    hyp_frames[r.frame].push_back(r);
    frames.insert(r.frame);
  }

  EvalReport rep;
  rep.num_gt = static_cast<long>(gt.size());

  std::map<int, int> last_match;  // gt id -> last matched hyp id
  std::map<int, int> prev_frame_match;  // matches alive in the previous frame

  for (int frame : frames) {
    const auto& G = gt_frames[frame];
    const auto& H = hyp_frames[frame];
    std::vector<char> g_used(G.size(), 0), h_used(H.size(), 0);
    std::map<int, int> cur_match;

    // carry over previous-frame pairs that still overlap
    for (std::size_t gi = 0; gi < G.size(); ++gi) {
      const auto it = prev_frame_match.find(G[gi].id);
      if (it == prev_frame_match.end()) continue;
      for (std::size_t hj = 0; hj < H.size(); ++hj) {
        if (h_used[hj] || H[hj].id != it->second) continue;
        if (box_iou(G[gi], H[hj]) >= iou_threshold) {
          g_used[gi] = 1;
          h_used[hj] = 1;
          cur_match[G[gi].id] = H[hj].id;
        }
        break;
      }
    }

    // optimal assignment for the remainder
    std::vector<int> g_rest, h_rest;
    for (std::size_t i = 0; i < G.size(); ++i)
      if (!g_used[i]) g_rest.push_back(static_cast<int>(i));
    for (std::size_t j = 0; j < H.size(); ++j)
      if (!h_used[j]) h_rest.push_back(static_cast<int>(j));
    if (!g_rest.empty() && !h_rest.empty()) {
      std::vector<double> w(g_rest.size() * h_rest.size(), 0.0);
      for (std::size_t i = 0; i < g_rest.size(); ++i)
        for (std::size_t j = 0; j < h_rest.size(); ++j)
          w[i * h_rest.size() + j] = box_iou(G[g_rest[i]], H[h_rest[j]]);
      auto match = max_weight_assignment(w, static_cast<int>(g_rest.size()),
                                         static_cast<int>(h_rest.size()),
                                         iou_threshold);
      for (std::size_t i = 0; i < g_rest.size(); ++i)
        if (match[i] >= 0) {
          g_used[g_rest[i]] = 1;
          h_used[h_rest[match[i]]] = 1;
          cur_match[G[g_rest[i]].id] = H[h_rest[match[i]]].id;
        }
    }

    for (const auto& [gid, hid] : cur_match) {
      const auto it = last_match.find(gid);
      if (it != last_match.end() && it->second != hid) ++rep.ids;
      last_match[gid] = hid;
    }
    for (std::size_t i = 0; i < G.size(); ++i)
      if (!g_used[i]) ++rep.fn;
    for (std::size_t j = 0; j < H.size(); ++j)
      if (!h_used[j]) ++rep.fp;
    prev_frame_match = std::move(cur_match);
  }

  rep.mota = 1.0 - static_cast<double>(rep.fp + rep.fn + rep.ids) /
                       static_cast<double>(rep.num_gt);

  // IDF1: global matching between gt identities and hyp identities
  std::vector<int> gt_ids, hyp_ids;
  std::map<int, int> gt_index, hyp_index;
  for (const auto& r : gt)
    if (!gt_index.count(r.id)) {
      gt_index[r.id] = static_cast<int>(gt_ids.size());
      gt_ids.push_back(r.id);
    }
  for (const auto& r : hyp)
    if (!hyp_index.count(r.id)) {
      hyp_index[r.id] = static_cast<int>(hyp_ids.size());
      hyp_ids.push_back(r.id);
    }
  long idtp = 0;
  if (!hyp_ids.empty()) {
    // idtp_matrix[g][h] = frames where identity g and h overlap with IoU >= thr
    std::vector<double> w(gt_ids.size() * hyp_ids.size(), 0.0);
    for (int frame : frames) {
      const auto& G = gt_frames[frame];
      const auto& H = hyp_frames[frame];
      for (const auto& g : G)
        for (const auto& h : H)
          if (box_iou(g, h) >= iou_threshold)
            w[static_cast<std::size_t>(gt_index[g.id]) * hyp_ids.size() +
              hyp_index[h.id]] += 1.0;
    }
    auto match = max_weight_assignment(w, static_cast<int>(gt_ids.size()),
                                       static_cast<int>(hyp_ids.size()), 1.0);
    for (std::size_t i = 0; i < gt_ids.size(); ++i)
      if (match[i] >= 0)
        idtp += static_cast<long>(w[i * hyp_ids.size() + match[i]]);
  }
  const long idfn = static_cast<long>(gt.size()) - idtp;
  const long idfp = static_cast<long>(hyp.size()) - idtp;
  rep.idf1 = (2 * idtp + idfp + idfn) > 0
                 ? 2.0 * idtp / static_cast<double>(2 * idtp + idfp + idfn)
                 : 0.0;
  return rep;
}

// Plain-text report: one metric=value per line, fixed order, 6 decimals for
// the ratios.
inline void write_report(const EvalReport& rep, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write report: " + path);
  char buf[64];
  f << "num_gt=" << rep.num_gt << "\n"
    << "fp=" << rep.fp << "\n"
    << "fn=" << rep.fn << "\n"
    << "ids=" << rep.ids << "\n";
  std::snprintf(buf, sizeof(buf), "mota=%.6f\n", rep.mota);
  f << buf;
  std::snprintf(buf, sizeof(buf), "idf1=%.6f\n", rep.idf1);
  f << buf;
}

}  // namespace phytrack
