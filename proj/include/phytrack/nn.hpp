#pragma once

#include <string>

#include "phytrack/ops.hpp"

namespace phytrack {

// Thin layer wrappers around ops.hpp that own their named parameters.
// Construction order is fixed by the model definition, so parameter
// initialization is deterministic for a given store seed.

class Conv2d {
 public:
  Conv2d() = default;

  Conv2d(ParamStore& store, const std::string& name, int kh, int kw, int ci, int co,
         int stride = 1, int dilation = 1, ops::PadMode pad = ops::PadMode::Zero)
      : stride_(stride), dilation_(dilation), pad_(pad) {
    if (store.has(name + ".w")) {
      w_ = store.get(name + ".w");
      b_ = store.get(name + ".b");
    } else {
      const double bound = std::sqrt(2.0 / (kh * kw * ci));  // He-style fan-in
      w_ = store.create(name + ".w",
                        random_normal({kh, kw, ci, co}, 0.0, bound, store.rng()));
      b_ = store.create(name + ".b", Tensor({co}));
    }
  }

  Var operator()(Var x) const { return ops::conv2d(x, w_, b_, stride_, dilation_, pad_); }

  Var weight() const { return w_; }
  Var bias() const { return b_; }

 private:
  Var w_, b_;
  int stride_ = 1, dilation_ = 1;
  ops::PadMode pad_ = ops::PadMode::Zero;
};

class ChannelNorm {
 public:
  ChannelNorm() = default;

  ChannelNorm(ParamStore& store, const std::string& name, int channels) {
    if (store.has(name + ".gamma")) {
      gamma_ = store.get(name + ".gamma");
      beta_ = store.get(name + ".beta");
    } else {
      gamma_ = store.create(name + ".gamma", Tensor::full({channels}, 1.0));
      beta_ = store.create(name + ".beta", Tensor({channels}));
    }
  }

  Var operator()(Var x) const { return ops::instance_norm(x, gamma_, beta_); }

 private:
  Var gamma_, beta_;
};

}  // namespace phytrack
