#pragma once

#include <cstdint>
#include <vector>

#include "fedet/rng.hpp"
#include "fedet/tensor.hpp"

namespace fedet {

enum class Activation { kGelu, kRelu };

inline Tensor apply_activation(Activation act, const Tensor& t) {
  return act == Activation::kGelu ? gelu(t) : relu(t);
}

// A bottleneck adapter: down-projection, nonlinearity, up-projection, applied
// residually. Parameter count is 2*d*b + d + b.
struct EnhancerParams {
  Tensor w_down;     // d x b
  Tensor beta_down;  // b
  Tensor w_up;       // b x d
  Tensor beta_up;    // d

  int64_t hidden() const { return w_down.dim(0); }
  int64_t bottleneck() const { return w_down.dim(1); }

  int64_t parameter_count() const {
    return w_down.numel() + beta_down.numel() + w_up.numel() + beta_up.numel();
  }

  std::vector<Tensor> parameters() const {
    return {w_down, beta_down, w_up, beta_up};
  }

  // Identity start: w_up and both biases zero, w_down scaled-uniform noise
  // U(-1/sqrt(d), 1/sqrt(d)). With a zero up-projection the adapter is an
  // exact no-op, so a fresh group leaves the backbone's function unchanged.
  static EnhancerParams init(int64_t d, int64_t b, Rng& rng,
                             bool trainable = true) {
    FEDET_CHECK(d >= 1 && b >= 1, "enhancer dims must be positive: d=" << d
                                                                       << " b=" << b);
    FEDET_CHECK(b < d, "bottleneck must be narrower than hidden: b=" << b
                                                                     << " d=" << d);
    double bound = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> wd(static_cast<size_t>(d * b));
    for (auto& v : wd) v = rng.uniform(-bound, bound);
    EnhancerParams e;
    e.w_down = Tensor::from_data({d, b}, std::move(wd), trainable);
    e.beta_down = Tensor::zeros({b}, trainable);
    e.w_up = Tensor::zeros({b, d}, trainable);
    e.beta_up = Tensor::zeros({d}, trainable);
    return e;
  }

  EnhancerParams clone(bool trainable) const {
    EnhancerParams e;
    e.w_down = Tensor::from_data(w_down.shape(), w_down.data(), trainable);
    e.beta_down = Tensor::from_data(beta_down.shape(), beta_down.data(), trainable);
    e.w_up = Tensor::from_data(w_up.shape(), w_up.data(), trainable);
    e.beta_up = Tensor::from_data(beta_up.shape(), beta_up.data(), trainable);
    return e;
  }
};

inline int64_t enhancer_param_count(int64_t d, int64_t b) {
  return 2 * d * b + d + b;
}

// x + f(x . W_down + beta_down) . W_up + beta_up, row-wise over a sequence.
// Accepts a single d-vector or a seq x d matrix.
inline Tensor enhancer_forward(const Tensor& x, const EnhancerParams& e,
                               Activation act = Activation::kGelu) {
  const int64_t d = e.hidden();
  FEDET_CHECK(x.rank() >= 1 && x.shape().back() == d,
              "enhancer width mismatch: input " << shape_str(x.shape())
                                                << " vs hidden " << d);
  auto z = apply_activation(act, add(matmul(x, e.w_down), e.beta_down));
  return add(add(x, matmul(z, e.w_up)), e.beta_up);
}

}  // namespace fedet
