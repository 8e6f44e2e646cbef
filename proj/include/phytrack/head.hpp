#pragma once

#include "phytrack/ata.hpp"
#include "phytrack/nn.hpp"

namespace phytrack {

struct HeadOutput {
  Var class_heatmap;  // (h/4, w/4, K), post-sigmoid
  Var center_heatmap; // (h/4, w/4), max over classes
  Var size;           // (h/4, w/4, 2): box width, height in pixels
  Var local_offset;   // (h/4, w/4, 2): sub-stride x, y in feature units
};

struct Detection {
  double left, top, width, height;  // pixels
  double score;
  int class_id;
  double cx, cy;  // center, pixels
};

// CenterNet-style head: shared 3x3 trunk, then sigmoid heatmap, size and
// local-offset branches.
class Head {
 public:
  Head(ParamStore& store, const ModelConfig& cfg)
      : trunk_(store, "head.trunk", 3, 3, cfg.feat_channels, cfg.head_channels),
        heat_(store, "head.heat", 1, 1, cfg.head_channels, cfg.num_classes),
        size_(store, "head.size", 1, 1, cfg.head_channels, 2),
        off_(store, "head.off", 1, 1, cfg.head_channels, 2) {
    // bias the heatmap towards background so early focal terms stay sane;
    // checkpoint loads overwrite this after construction
    Tensor& b = heat_.bias()->val;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = -2.19;
  }

  HeadOutput operator()(Var fused) const {
    Var t = ops::relu(trunk_(fused));
    Var heat = ops::sigmoid(heat_(t));
    HeadOutput out;
    out.class_heatmap = heat;
    out.center_heatmap = ops::max_channels(heat);
    out.size = size_(t);
    out.local_offset = off_(t);
    return out;
  }

 private:
  Conv2d trunk_, heat_, size_, off_;
};

// Peak decoding: a cell fires when its class-agnostic value beats every 3x3
// neighbour (ties go to the lexicographically smallest cell) and exceeds the
// threshold. Detections come out sorted by (row, column, class).
inline std::vector<Detection> decode(const HeadOutput& out, double threshold,
                                     int image_w, int image_h, int stride = 4) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw std::invalid_argument("decode: threshold must lie in (0,1)");
  const Tensor& p = out.center_heatmap->val;
  const Tensor& heat = out.class_heatmap->val;
  const int h = p.dim(0), w = p.dim(1), K = heat.dim(2);
  std::vector<Detection> dets;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double v = p(i, j);
      if (v <= threshold) continue;
      bool peak = true;
      for (int di = -1; di <= 1 && peak; ++di)
        for (int dj = -1; dj <= 1 && peak; ++dj) {
          if (di == 0 && dj == 0) continue;
          const int ni = i + di, nj = j + dj;
          if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
          const double nv = p(ni, nj);
          if (nv > v || (nv == v && (ni < i || (ni == i && nj < j)))) peak = false;
        }
      if (!peak) continue;
      int cls = 0;
      for (int c = 1; c < K; ++c)
        if (heat(i, j, c) > heat(i, j, cls)) cls = c;
      Detection d;
      d.score = v;
      d.class_id = cls;
      d.cx = (j + out.local_offset->val(i, j, 0)) * stride;
      d.cy = (i + out.local_offset->val(i, j, 1)) * stride;
      d.width = std::max(0.0, out.size->val(i, j, 0));
      d.height = std::max(0.0, out.size->val(i, j, 1));
      d.left = d.cx - d.width / 2.0;
      d.top = d.cy - d.height / 2.0;
      // clip to image bounds
      const double right = std::min(d.left + d.width, static_cast<double>(image_w));
      const double bottom = std::min(d.top + d.height, static_cast<double>(image_h));
      d.left = std::max(0.0, d.left);
      d.top = std::max(0.0, d.top);
      d.width = std::max(0.0, right - d.left);
      d.height = std::max(0.0, bottom - d.top);
      dets.push_back(d);
    }
  return dets;
}

// ---------------------------------------------------------------------------
// training targets and losses

struct BoxLabel {
  double left, top, width, height;  // pixels
  int class_id;
};

struct RenderedTargets {
  Tensor heatmap;  // (h, w, K)
  std::vector<ops::PointTarget> size_targets;    // pixels
  std::vector<ops::PointTarget> offset_targets;  // feature units in [0,1)
  std::vector<std::pair<int, int>> center_cells;
  int num_pos = 0;
};

// Size-adaptive Gaussian radius (CenterNet rule, min IoU overlap 0.7).
inline double gaussian_radius(double height, double width, double min_overlap = 0.7) {
  const double a1 = 1, b1 = height + width, c1 = width * height * (1 - min_overlap) / (1 + min_overlap);
  const double r1 = (b1 - std::sqrt(std::max(0.0, b1 * b1 - 4 * a1 * c1))) / 2;
  const double a2 = 4, b2 = 2 * (height + width), c2 = (1 - min_overlap) * width * height;
  const double r2 = (b2 - std::sqrt(std::max(0.0, b2 * b2 - 4 * a2 * c2))) / 2;
  const double a3 = 4 * min_overlap, b3 = -2 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1) * width * height;
  const double r3 = (b3 + std::sqrt(std::max(0.0, b3 * b3 - 4 * a3 * c3))) / 2;
  return std::max(0.0, std::min({r1, r2, r3}));
}

inline RenderedTargets render_targets(const std::vector<BoxLabel>& boxes, int grid_h,
                                      int grid_w, int num_classes, int stride = 4) {
  RenderedTargets t;
  t.heatmap.reshape({grid_h, grid_w, num_classes});
  for (const auto& b : boxes) {
    const double cx = (b.left + b.width / 2.0) / stride;
    const double cy = (b.top + b.height / 2.0) / stride;
    const int jx = static_cast<int>(cx), iy = static_cast<int>(cy);
    if (jx < 0 || jx >= grid_w || iy < 0 || iy >= grid_h) continue;
    if (b.class_id < 0 || b.class_id >= num_classes) continue;
    const double r =
        std::max(0.0, gaussian_radius(b.height / stride, b.width / stride));
    const int ri = std::max(0, static_cast<int>(r));
    const double sigma = (2.0 * ri + 1.0) / 6.0;
    for (int dy = -ri; dy <= ri; ++dy)
      for (int dx = -ri; dx <= ri; ++dx) {
        const int y = iy + dy, x = jx + dx;
        if (y < 0 || y >= grid_h || x < 0 || x >= grid_w) continue;
        const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        t.heatmap(y, x, b.class_id) = std::max(t.heatmap(y, x, b.class_id), g);
      }
    t.heatmap(iy, jx, b.class_id) = 1.0;
    t.size_targets.push_back({iy, jx, b.width, b.height});
    t.offset_targets.push_back({iy, jx, cx - jx, cy - iy});
    t.center_cells.emplace_back(iy, jx);
    ++t.num_pos;
  }
  return t;
}

// L_det = focal(heatmap) + 0.1 * L1(size) + L1(local offset).
inline Var det_loss(const HeadOutput& out, const RenderedTargets& targets) {
  Var l = ops::focal_loss(out.class_heatmap, targets.heatmap, targets.num_pos);
  l = ops::add(l, ops::scale(ops::l1_at_points(out.size, targets.size_targets), 0.1));
  return ops::add(l, ops::l1_at_points(out.local_offset, targets.offset_targets));
}

struct Correspondence {
  int cur_i, cur_j;    // center cell at frame t (stride-8 grid)
  int prev_i, prev_j;  // center cell at frame t-1
};

// Cross-entropy of the soft-argmax likelihoods against the true
// previous-frame row/column, summed over annotated objects.
inline Var cva_loss(const OffsetDecode& dec,
                    const std::vector<Correspondence>& corr) {
  const int h = dec.cx->val.dim(0), w = dec.cx->val.dim(1);
  std::vector<ops::IndexTarget> xs, ys;
  for (const auto& c : corr) {
    if (c.cur_i < 0 || c.cur_i >= h || c.cur_j < 0 || c.cur_j >= w ||
        c.prev_i < 0 || c.prev_i >= h || c.prev_j < 0 || c.prev_j >= w)
      throw std::invalid_argument("cva_loss: correspondence outside grid");
    xs.push_back({c.cur_i, c.cur_j, c.prev_j});
    ys.push_back({c.cur_i, c.cur_j, c.prev_i});
  }
  return ops::add(ops::nll_at_points(dec.cx, xs), ops::nll_at_points(dec.cy, ys));
}

}  // namespace phytrack
