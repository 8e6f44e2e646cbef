#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "phytrack/autodiff.hpp"

namespace phytrack::ops {

enum class PadMode { Zero, Replicate };

// ---------------------------------------------------------------------------
// elementwise

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->val.same_shape(b->val))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a->val.shape_str() + " vs " + b->val.shape_str());
}

inline Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tensor out = a->val;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->val[i];
  return make_result(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad().add_scaled(n.grad, 1.0);
    if (b->requires_grad) b->ensure_grad().add_scaled(n.grad, 1.0);
  });
}

inline Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->val;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->val[i];
  return make_result(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) a->ensure_grad().add_scaled(n.grad, 1.0);
    if (b->requires_grad) b->ensure_grad().add_scaled(n.grad, -1.0);
  });
}

inline Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->val;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->val[i];
  return make_result(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      Tensor& g = a->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * b->val[i];
    }
    if (b->requires_grad) {
      Tensor& g = b->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * a->val[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a->val;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return make_result(std::move(out), {a}, [a, s](Node& n) {
    if (a->requires_grad) a->ensure_grad().add_scaled(n.grad, s);
  });
}

inline Var relu(Var a) {
  Tensor out = a->val;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
  return make_result(std::move(out), {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    Tensor& g = a->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (a->val[i] > 0.0) g[i] += n.grad[i];
  });
}

inline Var sigmoid(Var a) {
  Tensor out = a->val;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  auto r = make_result(out, {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    Tensor& g = a->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = n.val[i];
      g[i] += n.grad[i] * y * (1.0 - y);
    }
  });
  return r;
}

inline Var sum(Var a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a->val.size(); ++i) s += a->val[i];
  return make_result(Tensor::scalar(s), {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    Tensor& g = a->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0];
  });
}

// Scalar readout sum_i weights[i] * x[i]; used by gradient-check harnesses.
inline Var weighted_sum(Var a, Tensor weights) {
  if (weights.size() != a->val.size())
    throw std::invalid_argument("weighted_sum: weight size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a->val.size(); ++i) s += a->val[i] * weights[i];
  auto w = std::make_shared<Tensor>(std::move(weights));
  return make_result(Tensor::scalar(s), {a}, [a, w](Node& n) {
    if (!a->requires_grad) return;
    Tensor& g = a->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0] * (*w)[i];
  });
}

// ---------------------------------------------------------------------------
// shape plumbing

inline Var reshape(Var a, std::vector<int> shape) {
  Tensor out(shape);  // Tensor::reshape allocates zeroed storage
  if (out.size() != a->val.size())
    throw std::invalid_argument("reshape: element count mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->val[i];
  return make_result(std::move(out), {a}, [a](Node& n) {
    if (a->requires_grad) {
      Tensor& g = a->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

inline Var transpose2d(Var a) {
  const int n = a->val.dim(0), m = a->val.dim(1);
  Tensor out({m, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out(j, i) = a->val(i, j);
  return make_result(std::move(out), {a}, [a, n, m](Node& n_) {
    if (!a->requires_grad) return;
    Tensor& g = a->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) g(i, j) += n_.grad(j, i);
  });
}

inline Var concat_channels(Var a, Var b) {
  const int H = a->val.dim(0), W = a->val.dim(1);
  if (b->val.dim(0) != H || b->val.dim(1) != W)
    throw std::invalid_argument("concat_channels: spatial mismatch");
  const int Ca = a->val.dim(2), Cb = b->val.dim(2);
  Tensor out({H, W, Ca + Cb});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < Ca; ++c) out(y, x, c) = a->val(y, x, c);
      for (int c = 0; c < Cb; ++c) out(y, x, Ca + c) = b->val(y, x, c);
    }
  return make_result(std::move(out), {a, b}, [a, b, H, W, Ca, Cb](Node& n) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (a->requires_grad) {
          Tensor& g = a->ensure_grad();
          for (int c = 0; c < Ca; ++c) g(y, x, c) += n.grad(y, x, c);
        }
        if (b->requires_grad) {
          Tensor& g = b->ensure_grad();
          for (int c = 0; c < Cb; ++c) g(y, x, c) += n.grad(y, x, Ca + c);
        }
      }
  });
}

// Replicate-pads the bottom/right edge of an (H,W,C) map.
inline Var pad_edge(Var a, int bottom, int right) {
  if (bottom == 0 && right == 0) return a;
  const int H = a->val.dim(0), W = a->val.dim(1), C = a->val.dim(2);
  Tensor out({H + bottom, W + right, C});
  for (int y = 0; y < H + bottom; ++y) {
    const int sy = std::min(y, H - 1);
    for (int x = 0; x < W + right; ++x) {
      const int sx = std::min(x, W - 1);
      for (int c = 0; c < C; ++c) out(y, x, c) = a->val(sy, sx, c);
    }
  }
  return make_result(std::move(out), {a}, [a, H, W, C, bottom, right](Node& n) {
    if (!a->requires_grad) return;
    Tensor& g = a->ensure_grad();
    for (int y = 0; y < H + bottom; ++y) {
      const int sy = std::min(y, H - 1);
      for (int x = 0; x < W + right; ++x) {
        const int sx = std::min(x, W - 1);
        for (int c = 0; c < C; ++c) g(sy, sx, c) += n.grad(y, x, c);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// matrices

inline Var matmul(Var a, Var b) {
  const int n = a->val.dim(0), k = a->val.dim(1);
  if (b->val.dim(0) != k)
    throw std::invalid_argument("matmul: inner dimension mismatch");
  const int m = b->val.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      const double av = a->val(i, p);
      if (av == 0.0) continue;
      const double* brow = &b->val(p, 0);
      double* orow = &out(i, 0);
      for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  return make_result(std::move(out), {a, b}, [a, b, n, k, m](Node& nd) {
    if (a->requires_grad) {
      Tensor& g = a->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
          double s = 0.0;
          const double* brow = &b->val(p, 0);
          const double* grow = &nd.grad(i, 0);
          for (int j = 0; j < m; ++j) s += grow[j] * brow[j];
          g(i, p) += s;
        }
    }
    if (b->requires_grad) {
      Tensor& g = b->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
          const double av = a->val(i, p);
          if (av == 0.0) continue;
          double* grow = &g(p, 0);
          const double* drow = &nd.grad(i, 0);
          for (int j = 0; j < m; ++j) grow[j] += av * drow[j];
        }
    }
  });
}

// Softmax over the last dimension; leading dimensions are independent rows.
inline Var softmax_lastdim(Var a, double temperature = 1.0) {
  const int n = a->val.dim(a->val.ndim() - 1);
  const int rows = static_cast<int>(a->val.size()) / n;
  Tensor out = a->val;
  for (int r = 0; r < rows; ++r) {
    double* row = out.data() + static_cast<std::size_t>(r) * n;
    double mx = row[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      row[i] = std::exp((row[i] - mx) / temperature);
      z += row[i];
    }
    for (int i = 0; i < n; ++i) row[i] /= z;
  }
  return make_result(out, {a}, [a, rows, n, temperature](Node& nd) {
    if (!a->requires_grad) return;
    Tensor& g = a->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* y = nd.val.data() + static_cast<std::size_t>(r) * n;
      const double* dy = nd.grad.data() + static_cast<std::size_t>(r) * n;
      double* dx = g.data() + static_cast<std::size_t>(r) * n;
      double dot = 0.0;
      for (int i = 0; i < n; ++i) dot += y[i] * dy[i];
      for (int i = 0; i < n; ++i) dx[i] += y[i] * (dy[i] - dot) / temperature;
    }
  });
}

// ---------------------------------------------------------------------------
// convolution

// Same-size convolution (cross-correlation) on (H,W,Ci) with weights
// (kh,kw,Ci,Co); output (ceil(H/stride), ceil(W/stride), Co).
inline Var conv2d(Var x, Var w, Var b, int stride = 1, int dilation = 1,
                  PadMode pad = PadMode::Zero) {
  const int H = x->val.dim(0), W = x->val.dim(1), Ci = x->val.dim(2);
  const int kh = w->val.dim(0), kw = w->val.dim(1);
  if (w->val.dim(2) != Ci)
    throw std::invalid_argument("conv2d: input channels mismatch");
  const int Co = w->val.dim(3);
  const int ph = dilation * (kh / 2), pw = dilation * (kw / 2);
  const int Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;

  Tensor out({Ho, Wo, Co});
  for (int y = 0; y < Ho; ++y)
    for (int xx = 0; xx < Wo; ++xx) {
      double* orow = &out(y, xx, 0);
      for (int co = 0; co < Co; ++co) orow[co] = b->val[co];
      for (int ky = 0; ky < kh; ++ky) {
        int iy = y * stride + ky * dilation - ph;
        if (pad == PadMode::Replicate)
          iy = std::clamp(iy, 0, H - 1);
        else if (iy < 0 || iy >= H)
          continue;
        for (int kx = 0; kx < kw; ++kx) {
          int ix = xx * stride + kx * dilation - pw;
          if (pad == PadMode::Replicate)
            ix = std::clamp(ix, 0, W - 1);
          else if (ix < 0 || ix >= W)
            continue;
          const double* xin = &x->val(iy, ix, 0);
          for (int ci = 0; ci < Ci; ++ci) {
            const double a = xin[ci];
            if (a == 0.0) continue;
            const double* wr = &w->val(ky, kx, ci, 0);
            for (int co = 0; co < Co; ++co) orow[co] += a * wr[co];
          }
        }
      }
    }

  return make_result(
      std::move(out), {x, w, b},
      [x, w, b, H, W, Ci, kh, kw, Co, ph, pw, stride, dilation, pad](Node& nd) {
        const int Ho = nd.val.dim(0), Wo = nd.val.dim(1);
        Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
        Tensor* gw = w->requires_grad ? &w->ensure_grad() : nullptr;
        Tensor* gb = b->requires_grad ? &b->ensure_grad() : nullptr;
        for (int y = 0; y < Ho; ++y)
          for (int xx = 0; xx < Wo; ++xx) {
            const double* drow = &nd.grad(y, xx, 0);
            if (gb)
              for (int co = 0; co < Co; ++co) (*gb)[co] += drow[co];
            for (int ky = 0; ky < kh; ++ky) {
              int iy = y * stride + ky * dilation - ph;
              if (pad == PadMode::Replicate)
                iy = std::clamp(iy, 0, H - 1);
              else if (iy < 0 || iy >= H)
                continue;
              for (int kx = 0; kx < kw; ++kx) {
                int ix = xx * stride + kx * dilation - pw;
                if (pad == PadMode::Replicate)
                  ix = std::clamp(ix, 0, W - 1);
                else if (ix < 0 || ix >= W)
                  continue;
                const double* xin = &x->val(iy, ix, 0);
                for (int ci = 0; ci < Ci; ++ci) {
                  const double* wr = &w->val(ky, kx, ci, 0);
                  double s = 0.0;
                  for (int co = 0; co < Co; ++co) s += wr[co] * drow[co];
                  if (gx) (*gx)(iy, ix, ci) += s;
                  if (gw) {
                    const double a = xin[ci];
                    if (a != 0.0) {
                      double* gwr = &(*gw)(ky, kx, ci, 0);
                      for (int co = 0; co < Co; ++co) gwr[co] += a * drow[co];
                    }
                  }
                }
              }
            }
          }
      });
}

// Per-channel normalization over the spatial extent (instance norm).
inline Var instance_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  const int H = x->val.dim(0), W = x->val.dim(1), C = x->val.dim(2);
  const int N = H * W;
  auto mu = std::make_shared<std::vector<double>>(C, 0.0);
  auto istd = std::make_shared<std::vector<double>>(C, 0.0);
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c) (*mu)[c] += x->val(y, xx, c);
  for (int c = 0; c < C; ++c) (*mu)[c] /= N;
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c) {
        const double d = x->val(y, xx, c) - (*mu)[c];
        (*istd)[c] += d * d;
      }
  for (int c = 0; c < C; ++c) (*istd)[c] = 1.0 / std::sqrt((*istd)[c] / N + eps);

  Tensor out({H, W, C});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c)
        out(y, xx, c) =
            gamma->val[c] * (x->val(y, xx, c) - (*mu)[c]) * (*istd)[c] + beta->val[c];

  return make_result(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, mu, istd, H, W, C, N](Node& nd) {
    std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        for (int c = 0; c < C; ++c) {
          const double xhat = (x->val(y, xx, c) - (*mu)[c]) * (*istd)[c];
          const double dy = nd.grad(y, xx, c);
          sum_dy[c] += dy;
          sum_dy_xhat[c] += dy * xhat;
        }
    if (gamma->requires_grad) {
      Tensor& g = gamma->ensure_grad();
      for (int c = 0; c < C; ++c) g[c] += sum_dy_xhat[c];
    }
    if (beta->requires_grad) {
      Tensor& g = beta->ensure_grad();
      for (int c = 0; c < C; ++c) g[c] += sum_dy[c];
    }
    if (x->requires_grad) {
      Tensor& g = x->ensure_grad();
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          for (int c = 0; c < C; ++c) {
            const double xhat = (x->val(y, xx, c) - (*mu)[c]) * (*istd)[c];
            const double dy = nd.grad(y, xx, c);
            g(y, xx, c) += gamma->val[c] * (*istd)[c] *
                           (dy - sum_dy[c] / N - xhat * sum_dy_xhat[c] / N);
          }
    }
  });
}

// ---------------------------------------------------------------------------
// resampling

inline Var resize_bilinear(Var x, int H2, int W2) {
  const int H = x->val.dim(0), W = x->val.dim(1), C = x->val.dim(2);
  const double sy = static_cast<double>(H) / H2, sx = static_cast<double>(W) / W2;
  Tensor out({H2, W2, C});
  auto coords = [&](int d, double s, int limit, int& i0, int& i1, double& f) {
    double src = (d + 0.5) * s - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(limit - 1));
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, limit - 1);
    f = src - i0;
  };
  for (int y = 0; y < H2; ++y) {
    int y0, y1;
    double fy;
    coords(y, sy, H, y0, y1, fy);
    for (int xx = 0; xx < W2; ++xx) {
      int x0, x1;
      double fx;
      coords(xx, sx, W, x0, x1, fx);
      for (int c = 0; c < C; ++c)
        out(y, xx, c) = (1 - fy) * ((1 - fx) * x->val(y0, x0, c) + fx * x->val(y0, x1, c)) +
                        fy * ((1 - fx) * x->val(y1, x0, c) + fx * x->val(y1, x1, c));
    }
  }
  return make_result(std::move(out), {x}, [x, H, W, C, H2, W2, sy, sx](Node& nd) {
    if (!x->requires_grad) return;
    Tensor& g = x->ensure_grad();
    auto coords = [&](int d, double s, int limit, int& i0, int& i1, double& f) {
      double src = (d + 0.5) * s - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(limit - 1));
      i0 = static_cast<int>(std::floor(src));
      i1 = std::min(i0 + 1, limit - 1);
      f = src - i0;
    };
    for (int y = 0; y < H2; ++y) {
      int y0, y1;
      double fy;
      coords(y, sy, H, y0, y1, fy);
      for (int xx = 0; xx < W2; ++xx) {
        int x0, x1;
        double fx;
        coords(xx, sx, W, x0, x1, fx);
        for (int c = 0; c < C; ++c) {
          const double d = nd.grad(y, xx, c);
          g(y0, x0, c) += d * (1 - fy) * (1 - fx);
          g(y0, x1, c) += d * (1 - fy) * fx;
          g(y1, x0, c) += d * fy * (1 - fx);
          g(y1, x1, c) += d * fy * fx;
        }
      }
    }
  });
}

// Samples x at (i + oy/s, j + ox/s) with bilinear weights and zero padding
// beyond the border; differentiable in x, ox and oy.
inline Var sample_by_offset(Var x, Var ox, Var oy, double s) {
  const int H = x->val.dim(0), W = x->val.dim(1), C = x->val.dim(2);
  if (ox->val.dim(0) != H || ox->val.dim(1) != W || !ox->val.same_shape(oy->val))
    throw std::invalid_argument("sample_by_offset: offset grid mismatch");
  Tensor out({H, W, C});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const double syc = i + oy->val(i, j) / s;
      const double sxc = j + ox->val(i, j) / s;
      const int y0 = static_cast<int>(std::floor(syc));
      const int x0 = static_cast<int>(std::floor(sxc));
      const double fy = syc - y0, fx = sxc - x0;
      auto tap = [&](int yy, int xx, int c) -> double {
        return (yy >= 0 && yy < H && xx >= 0 && xx < W) ? x->val(yy, xx, c) : 0.0;
      };
      for (int c = 0; c < C; ++c)
        out(i, j, c) = (1 - fy) * ((1 - fx) * tap(y0, x0, c) + fx * tap(y0, x0 + 1, c)) +
                       fy * ((1 - fx) * tap(y0 + 1, x0, c) + fx * tap(y0 + 1, x0 + 1, c));
    }
  return make_result(std::move(out), {x, ox, oy}, [x, ox, oy, s, H, W, C](Node& nd) {
    Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
    Tensor* gox = ox->requires_grad ? &ox->ensure_grad() : nullptr;
    Tensor* goy = oy->requires_grad ? &oy->ensure_grad() : nullptr;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const double syc = i + oy->val(i, j) / s;
        const double sxc = j + ox->val(i, j) / s;
        const int y0 = static_cast<int>(std::floor(syc));
        const int x0 = static_cast<int>(std::floor(sxc));
        const double fy = syc - y0, fx = sxc - x0;
        auto in = [&](int yy, int xx) { return yy >= 0 && yy < H && xx >= 0 && xx < W; };
        auto tap = [&](int yy, int xx, int c) -> double {
          return in(yy, xx) ? x->val(yy, xx, c) : 0.0;
        };
        double dfy = 0.0, dfx = 0.0;
        for (int c = 0; c < C; ++c) {
          const double d = nd.grad(i, j, c);
          if (d == 0.0 && !gox && !goy) continue;
          const double v00 = tap(y0, x0, c), v01 = tap(y0, x0 + 1, c);
          const double v10 = tap(y0 + 1, x0, c), v11 = tap(y0 + 1, x0 + 1, c);
          if (gx) {
            if (in(y0, x0)) (*gx)(y0, x0, c) += d * (1 - fy) * (1 - fx);
            if (in(y0, x0 + 1)) (*gx)(y0, x0 + 1, c) += d * (1 - fy) * fx;
            if (in(y0 + 1, x0)) (*gx)(y0 + 1, x0, c) += d * fy * (1 - fx);
            if (in(y0 + 1, x0 + 1)) (*gx)(y0 + 1, x0 + 1, c) += d * fy * fx;
          }
          dfy += d * (-(1 - fx) * v00 - fx * v01 + (1 - fx) * v10 + fx * v11);
          dfx += d * (-(1 - fy) * v00 + (1 - fy) * v01 - fy * v10 + fy * v11);
        }
        if (goy) (*goy)(i, j) += dfy / s;
        if (gox) (*gox)(i, j) += dfx / s;
      }
  });
}

// ---------------------------------------------------------------------------
// reductions and gating

// Per-location L2 normalization over channels.
inline Var l2_normalize_channels(Var x, double eps = 1e-12) {
  const int H = x->val.dim(0), W = x->val.dim(1), C = x->val.dim(2);
  auto norms = std::make_shared<Tensor>(std::initializer_list<int>{H, W});
  Tensor out({H, W, C});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      double n2 = eps;
      for (int c = 0; c < C; ++c) n2 += x->val(i, j, c) * x->val(i, j, c);
      const double n = std::sqrt(n2);
      (*norms)(i, j) = n;
      for (int c = 0; c < C; ++c) out(i, j, c) = x->val(i, j, c) / n;
    }
  return make_result(std::move(out), {x}, [x, norms, H, W, C](Node& nd) {
    if (!x->requires_grad) return;
    Tensor& g = x->ensure_grad();
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const double n = (*norms)(i, j);
        double dot = 0.0;
        for (int c = 0; c < C; ++c) dot += nd.val(i, j, c) * nd.grad(i, j, c);
        for (int c = 0; c < C; ++c)
          g(i, j, c) += (nd.grad(i, j, c) - nd.val(i, j, c) * dot) / n;
      }
  });
}

// Per-pixel max over channels: (H,W,C) -> (H,W).
inline Var max_channels(Var x) {
  const int H = x->val.dim(0), W = x->val.dim(1), C = x->val.dim(2);
  auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(H) * W);
  Tensor out({H, W});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (x->val(i, j, c) > x->val(i, j, best)) best = c;
      (*arg)[static_cast<std::size_t>(i) * W + j] = best;
      out(i, j) = x->val(i, j, best);
    }
  return make_result(std::move(out), {x}, [x, arg, H, W](Node& nd) {
    if (!x->requires_grad) return;
    Tensor& g = x->ensure_grad();
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        g(i, j, (*arg)[static_cast<std::size_t>(i) * W + j]) += nd.grad(i, j);
  });
}

// 2x2 max pooling of a 2-D map (H and W must be even).
inline Var maxpool2x2(Var x) {
  const int H = x->val.dim(0), W = x->val.dim(1);
  const int Ho = H / 2, Wo = W / 2;
  auto arg = std::make_shared<std::vector<std::pair<int, int>>>(
      static_cast<std::size_t>(Ho) * Wo);
  Tensor out({Ho, Wo});
  for (int i = 0; i < Ho; ++i)
    for (int j = 0; j < Wo; ++j) {
      int bi = 2 * i, bj = 2 * j;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          if (x->val(2 * i + dy, 2 * j + dx) > x->val(bi, bj)) {
            bi = 2 * i + dy;
            bj = 2 * j + dx;
          }
      (*arg)[static_cast<std::size_t>(i) * Wo + j] = {bi, bj};
      out(i, j) = x->val(bi, bj);
    }
  return make_result(std::move(out), {x}, [x, arg, Ho, Wo](Node& nd) {
    if (!x->requires_grad) return;
    Tensor& g = x->ensure_grad();
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j) {
        auto [bi, bj] = (*arg)[static_cast<std::size_t>(i) * Wo + j];
        g(bi, bj) += nd.grad(i, j);
      }
  });
}

// Hadamard gating of a feature map by a spatial map: (H,W,C) * (H,W).
inline Var gate_spatial(Var x, Var m) {
  const int H = x->val.dim(0), W = x->val.dim(1), C = x->val.dim(2);
  if (m->val.dim(0) != H || m->val.dim(1) != W)
    throw std::invalid_argument("gate_spatial: map shape mismatch");
  Tensor out({H, W, C});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < C; ++c) out(i, j, c) = x->val(i, j, c) * m->val(i, j);
  return make_result(std::move(out), {x, m}, [x, m, H, W, C](Node& nd) {
    if (x->requires_grad) {
      Tensor& g = x->ensure_grad();
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          for (int c = 0; c < C; ++c) g(i, j, c) += nd.grad(i, j, c) * m->val(i, j);
    }
    if (m->requires_grad) {
      Tensor& g = m->ensure_grad();
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          double s = 0.0;
          for (int c = 0; c < C; ++c) s += nd.grad(i, j, c) * x->val(i, j, c);
          g(i, j) += s;
        }
    }
  });
}

// Max over the third axis of a 4-D volume: (h,w,K,L) -> (h,w,L).
inline Var max_over_axis2(Var s) {
  const int h = s->val.dim(0), w = s->val.dim(1), K = s->val.dim(2), L = s->val.dim(3);
  auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(h) * w * L);
  Tensor out({h, w, L});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int l = 0; l < L; ++l) {
        int best = 0;
        for (int k = 1; k < K; ++k)
          if (s->val(i, j, k, l) > s->val(i, j, best, l)) best = k;
        (*arg)[(static_cast<std::size_t>(i) * w + j) * L + l] = best;
        out(i, j, l) = s->val(i, j, best, l);
      }
  return make_result(std::move(out), {s}, [s, arg, h, w, L](Node& nd) {
    if (!s->requires_grad) return;
    Tensor& g = s->ensure_grad();
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int l = 0; l < L; ++l)
          g(i, j, (*arg)[(static_cast<std::size_t>(i) * w + j) * L + l], l) +=
              nd.grad(i, j, l);
  });
}

// Max over the fourth axis of a 4-D volume: (h,w,K,L) -> (h,w,K).
inline Var max_over_axis3(Var s) {
  const int h = s->val.dim(0), w = s->val.dim(1), K = s->val.dim(2), L = s->val.dim(3);
  auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(h) * w * K);
  Tensor out({h, w, K});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < K; ++k) {
        int best = 0;
        for (int l = 1; l < L; ++l)
          if (s->val(i, j, k, l) > s->val(i, j, k, best)) best = l;
        (*arg)[(static_cast<std::size_t>(i) * w + j) * K + k] = best;
        out(i, j, k) = s->val(i, j, k, best);
      }
  return make_result(std::move(out), {s}, [s, arg, h, w, K](Node& nd) {
    if (!s->requires_grad) return;
    Tensor& g = s->ensure_grad();
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int k = 0; k < K; ++k)
          g(i, j, k, (*arg)[(static_cast<std::size_t>(i) * w + j) * K + k]) +=
              nd.grad(i, j, k);
  });
}

// Expectation of displacement templates under per-location likelihoods.
// For horizontal mode: out(i,j) = sum_l C(i,j,l) * (l - j) * s.
// For vertical mode:   out(i,j) = sum_k C(i,j,k) * (k - i) * s.
enum class OffsetAxis { Horizontal, Vertical };

inline Var expect_offset(Var c, OffsetAxis axis, double s) {
  const int h = c->val.dim(0), w = c->val.dim(1), n = c->val.dim(2);
  Tensor out({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      const int base = (axis == OffsetAxis::Horizontal) ? j : i;
      for (int t = 0; t < n; ++t) acc += c->val(i, j, t) * (t - base) * s;
      out(i, j) = acc;
    }
  return make_result(std::move(out), {c}, [c, axis, s, h, w, n](Node& nd) {
    if (!c->requires_grad) return;
    Tensor& g = c->ensure_grad();
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const int base = (axis == OffsetAxis::Horizontal) ? j : i;
        for (int t = 0; t < n; ++t) g(i, j, t) += nd.grad(i, j) * (t - base) * s;
      }
  });
}

// ---------------------------------------------------------------------------
// losses

// CenterNet penalty-reduced focal loss on a post-sigmoid heatmap against a
// rendered Gaussian target; normalized by the number of target peaks.
inline Var focal_loss(Var pred, const Tensor& target, int num_pos) {
  if (!pred->val.same_shape(target))
    throw std::invalid_argument("focal_loss: target shape mismatch");
  const double norm = std::max(1, num_pos);
  const double eps = 1e-6;
  auto tgt = std::make_shared<Tensor>(target);
  double loss = 0.0;
  for (std::size_t i = 0; i < pred->val.size(); ++i) {
    const double p = std::clamp(pred->val[i], eps, 1.0 - eps);
    const double y = (*tgt)[i];
    if (y >= 1.0)
      loss -= (1.0 - p) * (1.0 - p) * std::log(p);
    else
      loss -= std::pow(1.0 - y, 4.0) * p * p * std::log(1.0 - p);
  }
  loss /= norm;
  return make_result(Tensor::scalar(loss), {pred}, [pred, tgt, norm, eps](Node& nd) {
    if (!pred->requires_grad) return;
    Tensor& g = pred->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double raw = pred->val[i];
      if (raw <= eps || raw >= 1.0 - eps) continue;  // clamp saturates
      const double p = raw;
      const double y = (*tgt)[i];
      double d;
      if (y >= 1.0)
        d = 2.0 * (1.0 - p) * std::log(p) - (1.0 - p) * (1.0 - p) / p;
      else
        d = std::pow(1.0 - y, 4.0) * (-2.0 * p * std::log(1.0 - p) + p * p / (1.0 - p));
      g[i] += nd.grad[0] * d / norm;
    }
  });
}

struct PointTarget {
  int i, j;        // cell
  double tx, ty;   // regression target for the two channels at that cell
};

// Mean L1 over supervised cells of a 2-channel regression map.
inline Var l1_at_points(Var pred, const std::vector<PointTarget>& points) {
  auto pts = std::make_shared<std::vector<PointTarget>>(points);
  const double norm = std::max<std::size_t>(1, points.size());
  double loss = 0.0;
  for (const auto& p : points)
    loss += std::abs(pred->val(p.i, p.j, 0) - p.tx) + std::abs(pred->val(p.i, p.j, 1) - p.ty);
  loss /= norm;
  return make_result(Tensor::scalar(loss), {pred}, [pred, pts, norm](Node& nd) {
    if (!pred->requires_grad) return;
    Tensor& g = pred->ensure_grad();
    for (const auto& p : *pts) {
      const double dx = pred->val(p.i, p.j, 0) - p.tx;
      const double dy = pred->val(p.i, p.j, 1) - p.ty;
      g(p.i, p.j, 0) += nd.grad[0] * (dx > 0 ? 1.0 : (dx < 0 ? -1.0 : 0.0)) / norm;
      g(p.i, p.j, 1) += nd.grad[0] * (dy > 0 ? 1.0 : (dy < 0 ? -1.0 : 0.0)) / norm;
    }
  });
}

struct IndexTarget {
  int i, j;   // cell in the current frame
  int index;  // true previous-frame index along the likelihood axis
};

// Sum over points of -log C(i,j,index); cross-entropy against a one-hot truth.
inline Var nll_at_points(Var likelihood, const std::vector<IndexTarget>& points) {
  auto pts = std::make_shared<std::vector<IndexTarget>>(points);
  const double eps = 1e-12;
  double loss = 0.0;
  for (const auto& p : points)
    loss -= std::log(std::max(likelihood->val(p.i, p.j, p.index), eps));
  return make_result(Tensor::scalar(loss), {likelihood}, [likelihood, pts, eps](Node& nd) {
    if (!likelihood->requires_grad) return;
    Tensor& g = likelihood->ensure_grad();
    for (const auto& p : *pts) {
      const double c = std::max(likelihood->val(p.i, p.j, p.index), eps);
      g(p.i, p.j, p.index) -= nd.grad[0] / c;
    }
  });
}

}  // namespace phytrack::ops
