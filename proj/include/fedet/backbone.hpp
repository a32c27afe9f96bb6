#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedet/enhancer.hpp"
#include "fedet/rng.hpp"
#include "fedet/tensor.hpp"

namespace fedet {

struct BackboneConfig {
  int64_t depth = 2;        // encoder blocks (one enhancer slot per block)
  int64_t hidden = 32;      // model width d
  int64_t heads = 2;
  int64_t ff_width = 64;
  int64_t max_seq_len = 16;
  int64_t feature_dim = 8;  // input feature width fed to the embedding
  uint64_t seed = 1;

  void validate() const {
    FEDET_CHECK(depth >= 1, "backbone config: depth must be >= 1, got " << depth);
    FEDET_CHECK(hidden >= 1, "backbone config: hidden must be >= 1, got " << hidden);
    FEDET_CHECK(heads >= 1, "backbone config: heads must be >= 1, got " << heads);
    FEDET_CHECK(hidden % heads == 0, "backbone config: hidden " << hidden
                                     << " not divisible by heads " << heads);
    FEDET_CHECK(ff_width >= 1, "backbone config: ff_width must be >= 1, got " << ff_width);
    FEDET_CHECK(max_seq_len >= 1,
                "backbone config: max_seq_len must be >= 1, got " << max_seq_len);
    FEDET_CHECK(feature_dim >= 1,
                "backbone config: feature_dim must be >= 1, got " << feature_dim);
  }

  bool operator==(const BackboneConfig&) const = default;
};

// Pre-LN transformer encoder with every parameter frozen. Stands in for a
// pre-trained model: weights come from a seeded scaled-uniform init,
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) per weight matrix, biases zero, layer
// norm gains one. Equal configs (including seed) build bitwise-equal
// parameter arrays.
//
// Block layout:   a = x + MHA(LN1(x));  y = a + FFN(LN2(a))
// An optional enhancer i is applied to block i's output (post-FFN,
// post-residual), then a final layer norm; the pooled vector is the mean
// over sequence positions of the final hidden states.
//
// Encoding with zero-up-projection enhancers equals encoding without any:
// the adapter path runs but contributes an exact additive zero, so the
// outputs agree value for value.
class FrozenBackbone {
public:
  struct Block {
    Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor w_ff1, b_ff1, w_ff2, b_ff2;
  };

  struct Encoded {
    Tensor pooled;  // d
    Tensor hidden;  // seq x d
  };

  explicit FrozenBackbone(const BackboneConfig& config) : config_(config) {
    config.validate();
    Rng rng(config.seed);
    auto weight = [&](int64_t rows, int64_t cols) {
      double bound = 1.0 / std::sqrt(static_cast<double>(rows));
      std::vector<double> d(static_cast<size_t>(rows * cols));
      for (auto& v : d) v = rng.uniform(-bound, bound);
      return Tensor::from_data({rows, cols}, std::move(d), false);
    };
    auto zeros = [&](int64_t n) { return Tensor::zeros({n}, false); };
    auto ones = [&](int64_t n) {
      return Tensor::from_data({n}, std::vector<double>(static_cast<size_t>(n), 1.0),
                               false);
    };

    const int64_t d = config.hidden, ff = config.ff_width;
    w_embed_ = weight(config.feature_dim, d);
    b_embed_ = zeros(d);
    blocks_.reserve(static_cast<size_t>(config.depth));
    for (int64_t i = 0; i < config.depth; ++i) {
      Block blk;
      blk.w_q = weight(d, d); blk.b_q = zeros(d);
      blk.w_k = weight(d, d); blk.b_k = zeros(d);
      blk.w_v = weight(d, d); blk.b_v = zeros(d);
      blk.w_o = weight(d, d); blk.b_o = zeros(d);
      blk.ln1_g = ones(d); blk.ln1_b = zeros(d);
      blk.ln2_g = ones(d); blk.ln2_b = zeros(d);
      blk.w_ff1 = weight(d, ff); blk.b_ff1 = zeros(ff);
      blk.w_ff2 = weight(ff, d); blk.b_ff2 = zeros(d);
      blocks_.push_back(std::move(blk));
    }
    lnf_g_ = ones(d);
    lnf_b_ = zeros(d);
  }

  const BackboneConfig& config() const { return config_; }
  int64_t depth() const { return config_.depth; }
  int64_t hidden() const { return config_.hidden; }

  // features: seq x feature_dim -> seq x hidden, with sinusoidal positional
  // encodings added. Deterministic; no trainable parameters involved.
  Tensor embed(const Tensor& features) const {
    FEDET_CHECK(features.rank() == 2,
                "embed: expected seq x feature matrix, got "
                    << shape_str(features.shape()));
    const int64_t seq = features.dim(0);
    FEDET_CHECK(features.dim(1) == config_.feature_dim,
                "embed: feature width " << features.dim(1) << " vs configured "
                                        << config_.feature_dim);
    FEDET_CHECK(seq >= 1, "embed: empty sequence rejected");
    FEDET_CHECK(seq <= config_.max_seq_len, "embed: sequence length "
                    << seq << " exceeds max_seq_len " << config_.max_seq_len);
    auto projected = add(matmul(features, w_embed_), b_embed_);
    return add(projected, positional_encoding(seq, config_.hidden));
  }

  Encoded encode(const Tensor& hidden,
                 std::span<const EnhancerParams> enhancers = {},
                 Activation act = Activation::kGelu) const {
    FEDET_CHECK(hidden.rank() == 2 && hidden.dim(1) == config_.hidden,
                "encode: expected seq x " << config_.hidden << ", got "
                                          << shape_str(hidden.shape()));
    FEDET_CHECK(enhancers.empty() ||
                    static_cast<int64_t>(enhancers.size()) == config_.depth,
                "encode: enhancer count " << enhancers.size() << " vs depth "
                                          << config_.depth);
    for (const auto& e : enhancers)
      FEDET_CHECK(e.hidden() == config_.hidden,
                  "encode: enhancer width " << e.hidden() << " vs hidden "
                                            << config_.hidden);
    Tensor x = hidden;
    for (size_t i = 0; i < blocks_.size(); ++i) {
      x = block_forward(blocks_[i], x);
      if (!enhancers.empty()) x = enhancer_forward(x, enhancers[i], act);
    }
    Tensor out = add(mul(layer_norm_lastdim(x), lnf_g_), lnf_b_);
    return {mean_axis(out, 0), out};
  }

  static Tensor positional_encoding(int64_t seq, int64_t d) {
    std::vector<double> pe(static_cast<size_t>(seq * d));
    for (int64_t pos = 0; pos < seq; ++pos)
      for (int64_t i = 0; i < d; ++i) {
        double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) /
                                            static_cast<double>(d));
        double angle = static_cast<double>(pos) * rate;
        pe[static_cast<size_t>(pos * d + i)] =
            (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
      }
    return Tensor::from_data({seq, d}, std::move(pe), false);
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out{w_embed_, b_embed_};
    for (const auto& b : blocks_) {
      for (const auto& t : {b.w_q, b.b_q, b.w_k, b.b_k, b.w_v, b.b_v, b.w_o,
                            b.b_o, b.ln1_g, b.ln1_b, b.ln2_g, b.ln2_b, b.w_ff1,
                            b.b_ff1, b.w_ff2, b.b_ff2})
        out.push_back(t);
    }
    out.push_back(lnf_g_);
    out.push_back(lnf_b_);
    return out;
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& t : parameters()) n += t.numel();
    return n;
  }

  // Closed-form count for the architecture above:
  //   embed: feat*d + d
  //   per block: 4(d^2 + d) qkvo, 2*(2d) layer norms, d*ff + ff + ff*d + d
  //   final layer norm: 2d
  static int64_t expected_parameter_count(const BackboneConfig& c) {
    const int64_t d = c.hidden, ff = c.ff_width;
    int64_t per_block = 4 * (d * d + d) + 4 * d + (d * ff + ff) + (ff * d + d);
    return c.feature_dim * d + d + c.depth * per_block + 2 * d;
  }

private:
  Tensor block_forward(const Block& blk, const Tensor& x) const {
    auto ln1 = add(mul(layer_norm_lastdim(x), blk.ln1_g), blk.ln1_b);
    auto a = add(x, attention(blk, ln1));
    auto ln2 = add(mul(layer_norm_lastdim(a), blk.ln2_g), blk.ln2_b);
    auto ffn = add(matmul(gelu(add(matmul(ln2, blk.w_ff1), blk.b_ff1)), blk.w_ff2),
                   blk.b_ff2);
    return add(a, ffn);
  }

  Tensor attention(const Block& blk, const Tensor& x) const {
    const int64_t d = config_.hidden;
    const int64_t dh = d / config_.heads;
    auto q = add(matmul(x, blk.w_q), blk.b_q);
    auto k = add(matmul(x, blk.w_k), blk.b_k);
    auto v = add(matmul(x, blk.w_v), blk.b_v);
    std::vector<Tensor> ctx;
    ctx.reserve(static_cast<size_t>(config_.heads));
    for (int64_t h = 0; h < config_.heads; ++h) {
      auto qh = slice_lastdim(q, h * dh, dh);
      auto kh = slice_lastdim(k, h * dh, dh);
      auto vh = slice_lastdim(v, h * dh, dh);
      auto scores = scale(matmul(qh, transpose(kh)),
                          1.0 / std::sqrt(static_cast<double>(dh)));
      ctx.push_back(matmul(softmax_lastdim(scores), vh));
    }
    return add(matmul(concat_lastdim(ctx), blk.w_o), blk.b_o);
  }

  BackboneConfig config_;
  Tensor w_embed_, b_embed_;
  std::vector<Block> blocks_;
  Tensor lnf_g_, lnf_b_;
};

}  // namespace fedet
