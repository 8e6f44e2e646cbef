#pragma once

#include "phytrack/nn.hpp"
#include "phytrack/tfe.hpp"

namespace phytrack {

enum class MemoryMode { Mean, Sum };

inline MemoryMode memory_mode_from_string(const std::string& s) {
  if (s == "mean") return MemoryMode::Mean;
  if (s == "sum") return MemoryMode::Sum;
  throw std::invalid_argument("unknown memory mode: " + s);
}

// Running per-cell offset statistic lambda_t. Mean mode keeps the arithmetic
// average of every absorbed field; sum mode is the ablation's accumulator.
// Sequentially owned by the tracker loop; reset at sequence start.
struct OffsetMemory {
  Tensor mean_ox, mean_oy;
  long count = 0;
  MemoryMode mode = MemoryMode::Mean;

  void reset(int h, int w, MemoryMode m) {
    mean_ox.reshape({h, w});
    mean_oy.reshape({h, w});
    count = 0;
    mode = m;
  }

  void absorb(const Tensor& ox, const Tensor& oy) {
    if (!ox.same_shape(mean_ox) || !oy.same_shape(mean_oy))
      throw std::invalid_argument("update_memory: offset shape mismatch");
    if (mode == MemoryMode::Mean) {
      const double c = static_cast<double>(count);
      for (std::size_t i = 0; i < mean_ox.size(); ++i) {
        mean_ox[i] = (mean_ox[i] * c + ox[i]) / (c + 1.0);
        mean_oy[i] = (mean_oy[i] * c + oy[i]) / (c + 1.0);
      }
    } else {
      for (std::size_t i = 0; i < mean_ox.size(); ++i) {
        mean_ox[i] += ox[i];
        mean_oy[i] += oy[i];
      }
    }
    ++count;
  }
};

// Omega = 2*O - lambda, elementwise, no clamping. lambda enters as a
// constant: the memory is a cross-frame statistic, not a training variable.
inline Var flow_agnostic_offset(Var o, const Tensor& lambda) {
  if (!o->val.same_shape(lambda))
    throw std::invalid_argument("flow_agnostic_offset: shape mismatch");
  return ops::sub(ops::scale(o, 2.0), make_constant(lambda));
}

// H = omega_prev o P_prev (Hadamard over channels).
inline Var gate_previous_features(Var omega_prev, Var p_prev) {
  for (std::size_t i = 0; i < p_prev->val.size(); ++i)
    if (p_prev->val[i] < 0.0 || p_prev->val[i] > 1.0)
      throw std::invalid_argument("gate_previous_features: heatmap outside [0,1]");
  return ops::gate_spatial(omega_prev, p_prev);
}

// Offset-guided propagation of gated previous-frame features to the current
// frame: bilinear sampling along Omega followed by a learnable 3x3 conv.
class Fmr {
 public:
  Fmr(ParamStore& store, const ModelConfig& cfg)
      : prop_conv_(store, "fmr.prop", 3, 3, cfg.refined_channels,
                   cfg.refined_channels),
        fuse_conv_(store, "fmr.fuse", 1, 1,
                   cfg.feat_channels + cfg.refined_channels, cfg.feat_channels) {}

  Var propagate(Var h_prev, Var omega_x, Var omega_y, double stride) const {
    return prop_conv_(ops::sample_by_offset(h_prev, omega_x, omega_y, stride));
  }

  // Upsamples the stride-8 propagated feature to stride 4, concatenates with
  // f_t and projects back to the feature width.
  Var fuse(Var f_t, Var propagated) const {
    Var up = ops::resize_bilinear(propagated, f_t->val.dim(0), f_t->val.dim(1));
    return fuse_conv_(ops::concat_channels(f_t, up));
  }

  Conv2d& prop_conv() { return prop_conv_; }
  Conv2d& fuse_conv() { return fuse_conv_; }

 private:
  Conv2d prop_conv_, fuse_conv_;
};

}  // namespace phytrack
