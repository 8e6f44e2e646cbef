#pragma once

#include <stdexcept>

#include "phytrack/ops.hpp"

namespace phytrack {

enum class SrmMode { Paper, Classic };

// Bank of three fixed 5x5 residual kernels. Paper mode holds the
// second-order / square / edge residual set; classic mode holds the
// horizontal-edge, vertical-edge and sharpening alternates.
struct SrmKernelBank {
  Tensor kernels;  // (3, 5, 5)
  SrmMode mode;

  static SrmKernelBank make(SrmMode mode) {
    static const double paper[3][5][5] = {
        {{0, 0, 0, 0, 0},
         {0, -1, 2, -1, 0},
         {0, 2, -4, 2, 0},
         {0, -1, 2, -1, 0},
         {0, 0, 0, 0, 0}},
        {{-1, 2, -2, 2, -1},
         {2, -6, 8, -6, 2},
         {-2, 8, -12, 8, -2},
         {2, -6, 8, -6, 2},
         {-1, 2, -2, 2, -1}},
        {{-1, -1, -1, -1, -1},
         {-1, 0, 0, 0, -1},
         {-1, 0, 8, 0, -1},
         {-1, 0, 0, 0, -1},
         {-1, -1, -1, -1, -1}}};
    static const double classic[3][5][5] = {
        {{-1, -2, -4, -2, -1},
         {0, 0, 0, 0, 0},
         {0, 0, 0, 0, 0},
         {0, 0, 0, 0, 0},
         {1, 2, 4, 2, 1}},
        {{-1, 0, 0, 0, 1},
         {-2, 0, 0, 0, 2},
         {-4, 0, 0, 0, 4},
         {-2, 0, 0, 0, 2},
         {-1, 0, 0, 0, 1}},
        {{0, 0, -1, 0, 0},
         {0, 0, -1, 0, 0},
         {-1, -1, 9, -1, -1},
         {0, 0, -1, 0, 0},
         {0, 0, -1, 0, 0}}};
    SrmKernelBank bank;
    bank.mode = mode;
    bank.kernels.reshape({3, 5, 5});
    const auto& src = (mode == SrmMode::Paper) ? paper : classic;
    for (int k = 0; k < 3; ++k)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) bank.kernels(k, y, x) = src[k][y][x];
    return bank;
  }
};

inline SrmMode srm_mode_from_string(const std::string& s) {
  if (s == "paper") return SrmMode::Paper;
  if (s == "classic") return SrmMode::Classic;
  throw std::invalid_argument("unknown srm mode: " + s);
}

// Cross-correlates every input channel with each of the three fixed kernels
// (same padding, replicate border). C channels in -> 3*C channels out, ordered
// (c0k0, c0k1, c0k2, c1k0, ...). The kernels never receive gradient.
inline Var srm_filter(Var x, const SrmKernelBank& bank) {
  const int H = x->val.dim(0), W = x->val.dim(1), C = x->val.dim(2);
  if (C < 1) throw std::invalid_argument("srm_filter: input needs >= 1 channel");
  auto kb = std::make_shared<Tensor>(bank.kernels);
  Tensor out({H, W, 3 * C});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int ky = 0; ky < 5; ++ky) {
        const int iy = std::clamp(y + ky - 2, 0, H - 1);
        for (int kx = 0; kx < 5; ++kx) {
          const int ix = std::clamp(xx + kx - 2, 0, W - 1);
          const double* xin = &x->val(iy, ix, 0);
          double* orow = &out(y, xx, 0);
          for (int k = 0; k < 3; ++k) {
            const double kv = (*kb)(k, ky, kx);
            if (kv == 0.0) continue;
            for (int c = 0; c < C; ++c) orow[3 * c + k] += kv * xin[c];
          }
        }
      }
  return make_result(std::move(out), {x}, [x, kb, H, W, C](Node& nd) {
    if (!x->requires_grad) return;
    Tensor& g = x->ensure_grad();
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int ky = 0; ky < 5; ++ky) {
          const int iy = std::clamp(y + ky - 2, 0, H - 1);
          for (int kx = 0; kx < 5; ++kx) {
            const int ix = std::clamp(xx + kx - 2, 0, W - 1);
            const double* drow = &nd.grad(y, xx, 0);
            double* grow = &g(iy, ix, 0);
            for (int k = 0; k < 3; ++k) {
              const double kv = (*kb)(k, ky, kx);
              if (kv == 0.0) continue;
              for (int c = 0; c < C; ++c) grow[c] += kv * drow[3 * c + k];
            }
          }
        }
  });
}

}  // namespace phytrack
