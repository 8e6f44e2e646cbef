#pragma once

#include "phytrack/nn.hpp"
#include "phytrack/tfe.hpp"

namespace phytrack {

// Linear-complexity cross attention: CA(Q,K,V) = softmax_row(Q) (softmax_col(K)^T V),
// evaluated as the (d x dv) product first so no n x n matrix is ever formed.
inline Var cross_attention(Var q, Var k, Var v) {
  if (!q->val.all_finite() || !k->val.all_finite() || !v->val.all_finite())
    throw std::invalid_argument("cross_attention: non-finite input");
  if (q->val.dim(0) != k->val.dim(0) || k->val.dim(0) != v->val.dim(0) ||
      q->val.dim(1) != k->val.dim(1))
    throw std::invalid_argument("cross_attention: shape mismatch");
  Var pq = ops::softmax_lastdim(q);                        // rows of Q
  Var pkT = ops::softmax_lastdim(ops::transpose2d(k));     // columns of K
  Var m = ops::matmul(pkT, v);                             // (d, dv)
  return ops::matmul(pq, m);                               // (n, dv)
}

struct TscaOutput {
  Var omega_prev;  // refined previous-frame feature, stride 8
  Var omega_cur;   // cross-attention enhanced current-frame feature, stride 8
};

// Two-stage cross attention. Stage 1 refines each frame independently at
// stride 4 and downsamples to stride 8; stage 2 runs the efficient
// cross-attention with Q from the previous frame and K,V from the current.
class Ata {
 public:
  Ata(ParamStore& store, const ModelConfig& cfg)
      : cp_prev_(store, "ata.cp_prev", 1, 1, cfg.feat_channels, cfg.ata_inner),
        cb_prev_(store, "ata.cb_prev", 1, 1, cfg.ata_inner, cfg.feat_channels),
        cb_prev_n_(store, "ata.cb_prev_n", cfg.feat_channels),
        conv_cur_(store, "ata.conv_cur", 3, 3, cfg.feat_channels, cfg.ata_inner),
        cp_cur_(store, "ata.cp_cur", 1, 1, cfg.feat_channels, cfg.ata_inner),
        cb_cur_(store, "ata.cb_cur", 1, 1, cfg.ata_inner, cfg.feat_channels),
        cb_cur_n_(store, "ata.cb_cur_n", cfg.feat_channels),
        down_prev_(store, "ata.down_prev", 3, 3, cfg.feat_channels,
                   cfg.refined_channels, 2),
        down_prev_n_(store, "ata.down_prev_n", cfg.refined_channels),
        down_cur_(store, "ata.down_cur", 3, 3, cfg.feat_channels,
                  cfg.refined_channels, 2),
        down_cur_n_(store, "ata.down_cur_n", cfg.refined_channels),
        proj_q_(store, "ata.proj_q", 1, 1, cfg.refined_channels, cfg.refined_channels),
        proj_k_(store, "ata.proj_k", 1, 1, cfg.refined_channels, cfg.refined_channels),
        proj_v_(store, "ata.proj_v", 1, 1, cfg.refined_channels, cfg.refined_channels),
        sigma_(store, "ata.sigma", 3, 3, cfg.refined_channels, cfg.refined_channels),
        sigma_n_(store, "ata.sigma_n", cfg.refined_channels),
        sigma_proj_(store, "ata.sigma_proj", 1, 1, cfg.refined_channels,
                    cfg.embed_channels) {}

  TscaOutput tsca(Var f_prev, Var f_cur) const {
    if (!f_prev->val.same_shape(f_cur->val))
      throw std::invalid_argument("tsca: mismatched input shapes");
    // stage 1, previous frame: CP -> CB -> residual add
    Var rp = ops::add(f_prev, cb_prev_n_(cb_prev_(cp_prev_(f_prev))));
    // stage 1, current frame: parallel Conv / CP branches, multiplicative
    // attention, CB, residual add
    Var att = ops::mul(conv_cur_(f_cur), ops::sigmoid(cp_cur_(f_cur)));
    Var rc = ops::add(f_cur, cb_cur_n_(cb_cur_(att)));

    Var prev8 = down_prev_n_(ops::relu(down_prev_(rp)));
    Var cur8 = down_cur_n_(ops::relu(down_cur_(rc)));

    const int h = cur8->val.dim(0), w = cur8->val.dim(1), c = cur8->val.dim(2);
    Var q = ops::reshape(proj_q_(prev8), {h * w, c});
    Var k = ops::reshape(proj_k_(cur8), {h * w, c});
    Var v = ops::reshape(proj_v_(cur8), {h * w, c});
    Var ca = ops::reshape(cross_attention(q, k, v), {h, w, c});
    return {prev8, ops::add(cur8, ca)};
  }

  // Shared embedding block sigma followed by per-location L2 normalization.
  Var embed(Var omega) const {
    return ops::l2_normalize_channels(
        sigma_proj_(sigma_n_(ops::relu(sigma_(omega)))));
  }

  // 4-D cosine similarity volume S(i,j,k,l) between the current frame (i,j)
  // and previous frame (k,l), both at stride 8.
  Var similarity_volume(Var omega_cur, Var omega_prev) const {
    if (!omega_cur->val.same_shape(omega_prev->val))
      throw std::invalid_argument("similarity_volume: shape mismatch");
    const int h = omega_cur->val.dim(0), w = omega_cur->val.dim(1);
    Var ec = ops::reshape(embed(omega_cur), {h * w, embed_dim()});
    Var ep = ops::reshape(embed(omega_prev), {h * w, embed_dim()});
    Var s = ops::matmul(ec, ops::transpose2d(ep));
    return ops::reshape(s, {h, w, h, w});
  }

  int embed_dim() const { return sigma_proj_.weight()->val.dim(3); }

 private:
  Conv2d cp_prev_, cb_prev_;
  ChannelNorm cb_prev_n_;
  Conv2d conv_cur_, cp_cur_, cb_cur_;
  ChannelNorm cb_cur_n_;
  Conv2d down_prev_;
  ChannelNorm down_prev_n_;
  Conv2d down_cur_;
  ChannelNorm down_cur_n_;
  Conv2d proj_q_, proj_k_, proj_v_;
  Conv2d sigma_;
  ChannelNorm sigma_n_;
  Conv2d sigma_proj_;
};

struct OffsetDecode {
  Var ox, oy;  // (h', w') pixel offsets, current -> previous
  Var cx, cy;  // likelihoods: (h', w', w') and (h', w', h')
};

// Soft-argmax decoding of backward offsets from the similarity volume:
// C^X(l) = softmax_l max_k S(i,j,k,l), paired with templates (l-j)*s.
inline OffsetDecode offsets_from_similarity(Var s, double stride,
                                            double temperature = 1.0) {
  if (stride <= 0) throw std::invalid_argument("offsets_from_similarity: stride <= 0");
  Var cx = ops::softmax_lastdim(ops::max_over_axis2(s), temperature);
  Var cy = ops::softmax_lastdim(ops::max_over_axis3(s), temperature);
  Var ox = ops::expect_offset(cx, ops::OffsetAxis::Horizontal, stride);
  Var oy = ops::expect_offset(cy, ops::OffsetAxis::Vertical, stride);
  return {ox, oy, cx, cy};
}

}  // namespace phytrack
