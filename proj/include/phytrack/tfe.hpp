#pragma once

#include "phytrack/nn.hpp"
#include "phytrack/srm.hpp"

namespace phytrack {

// Model-wide hyperparameters. Widths are deliberately small; the stride and
// channel contracts of the feature maps do not depend on them.
struct ModelConfig {
  int num_classes = 6;
  SrmMode srm_mode = SrmMode::Paper;

  int stem_channels = 8;       // stem / SIE width at stride 2
  int enc1 = 8, enc2 = 16, enc3 = 32, enc4 = 32;
  int feat_channels = 64;      // appearance feature width at stride 4

  int ata_inner = 16;          // stage-1 refinement bottleneck
  int refined_channels = 32;   // omega width at stride 8
  int embed_channels = 16;     // similarity embedding width
  int head_channels = 32;

  double softmax_temperature = 1.0;
  double loss_weight_cva = 1.0;
};

// One Semantic Information Extraction block: learnable 3x3 conv, fixed SRM
// residual bank, 1x1 compression back to the input width, residual add.
class SieBlock {
 public:
  SieBlock() = default;
  SieBlock(ParamStore& store, const std::string& name, int channels,
           const SrmKernelBank& bank)
      : bank_(&bank),
        conv_(store, name + ".conv", 3, 3, channels, channels, 1, 1,
              ops::PadMode::Replicate),
        norm_(store, name + ".norm", channels),
        compress_(store, name + ".compress", 1, 1, 3 * channels, channels) {}

  Var operator()(Var x) const {
    Var h = norm_(ops::relu(conv_(x)));
    Var r = srm_filter(h, *bank_);
    return ops::add(x, compress_(r));
  }

  // Exposed for the composition oracle in tests.
  Var stage_conv(Var x) const { return norm_(ops::relu(conv_(x))); }
  Var stage_srm(Var x) const { return srm_filter(x, *bank_); }
  Var stage_compress(Var x) const { return compress_(x); }

 private:
  const SrmKernelBank* bank_ = nullptr;
  Conv2d conv_;
  ChannelNorm norm_;
  Conv2d compress_;
};

// Texture-enhanced feature extraction: SRM residuals + dilated stem at
// stride 2, three SIE blocks, raw-image reinjection, and a small
// encoder-decoder emitting the stride-4 appearance feature.
class Tfe {
 public:
  Tfe(ParamStore& store, const ModelConfig& cfg)
      : bank_(SrmKernelBank::make(cfg.srm_mode)),
        stem1_(store, "tfe.stem1", 3, 3, 12, cfg.stem_channels, 1, 2,
               ops::PadMode::Replicate),
        stem1n_(store, "tfe.stem1n", cfg.stem_channels),
        stem2_(store, "tfe.stem2", 3, 3, cfg.stem_channels, cfg.stem_channels, 2, 2,
               ops::PadMode::Replicate),
        stem2n_(store, "tfe.stem2n", cfg.stem_channels),
        sie1_(store, "tfe.sie1", cfg.stem_channels, bank_),
        sie2_(store, "tfe.sie2", cfg.stem_channels, bank_),
        sie3_(store, "tfe.sie3", cfg.stem_channels, bank_),
        e1_(store, "tfe.e1", 3, 3, cfg.stem_channels + 3, cfg.enc1),
        e1n_(store, "tfe.e1n", cfg.enc1),
        e2_(store, "tfe.e2", 3, 3, cfg.enc1, cfg.enc2, 2),
        e2n_(store, "tfe.e2n", cfg.enc2),
        e3_(store, "tfe.e3", 3, 3, cfg.enc2, cfg.enc3, 2),
        e3n_(store, "tfe.e3n", cfg.enc3),
        e4_(store, "tfe.e4", 3, 3, cfg.enc3, cfg.enc4),
        e4n_(store, "tfe.e4n", cfg.enc4),
        d1_(store, "tfe.d1", 3, 3, cfg.enc4 + cfg.enc2, cfg.enc3),
        d1n_(store, "tfe.d1n", cfg.enc3),
        out_(store, "tfe.out", 1, 1, cfg.enc3, cfg.feat_channels) {}

  const SrmKernelBank& bank() const { return bank_; }

  // image01: (H,W,3) in [0,1], H,W >= 32. Returns (ceil(H/4)*, ceil(W/4)*, 64)
  // where * is taken after internal padding to a multiple of 8.
  Var operator()(Var image01) const {
    const int H = image01->val.dim(0), W = image01->val.dim(1);
    if (H < 32 || W < 32)
      throw std::invalid_argument("extract_features: frame smaller than 32x32");
    const int Hp = (H + 7) / 8 * 8, Wp = (W + 7) / 8 * 8;
    Var x = ops::pad_edge(image01, Hp - H, Wp - W);

    Var res = srm_filter(x, bank_);
    Var stem_in = ops::concat_channels(x, res);
    Var s1 = stem1n_(ops::relu(stem1_(stem_in)));
    Var s2 = stem2n_(ops::relu(stem2_(s1)));  // stride 2

    Var t = sie3_(sie2_(sie1_(s2)));
    Var raw = ops::resize_bilinear(x, Hp / 2, Wp / 2);
    Var enc_in = ops::concat_channels(t, raw);

    Var a1 = e1n_(ops::relu(e1_(enc_in)));              // stride 2
    Var a2 = e2n_(ops::relu(e2_(a1)));                  // stride 4
    Var a3 = e3n_(ops::relu(e3_(a2)));                  // stride 8
    Var a4 = e4n_(ops::relu(e4_(a3)));                  // stride 8
    Var up = ops::resize_bilinear(a4, Hp / 4, Wp / 4);
    Var d1 = d1n_(ops::relu(d1_(ops::concat_channels(up, a2))));
    return out_(d1);                                    // stride 4, 64 channels
  }

 private:
  SrmKernelBank bank_;
  Conv2d stem1_;
  ChannelNorm stem1n_;
  Conv2d stem2_;
  ChannelNorm stem2n_;
  SieBlock sie1_, sie2_, sie3_;
  Conv2d e1_;
  ChannelNorm e1n_;
  Conv2d e2_;
  ChannelNorm e2n_;
  Conv2d e3_;
  ChannelNorm e3n_;
  Conv2d e4_;
  ChannelNorm e4n_;
  Conv2d d1_;
  ChannelNorm d1n_;
  Conv2d out_;
};

}  // namespace phytrack
