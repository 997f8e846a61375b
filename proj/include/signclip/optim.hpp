#pragma once

#include <span>
#include <vector>

#include "signclip/tensor.hpp"

namespace signclip {

/// Adam with decoupled weight decay. State is positional: pass the same
/// parameter list, in the same order, to every step.
class AdamW {
 public:
  struct Options {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  explicit AdamW(Options opts) : opts_(opts) {}

  void step(std::span<Tensor* const> params);
  long steps() const { return t_; }
  const Options& options() const { return opts_; }

 private:
  Options opts_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace signclip
