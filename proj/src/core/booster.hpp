#pragma once

#include <string>
#include <utility>
#include <vector>

#include "core/nn.hpp"
#include "core/tensor.hpp"

namespace rada {

using ad::Var;

// A keypoint token as a wave: amplitude carries descriptor content, phase
// carries position, and the Euler split turns both into plain channels.
struct WaveComponents {
  Var amplitude;  // (N,dim)
  Var phase;      // (N,dim), radians
  Var real;       // amplitude .* cos(phase)
  Var imag;       // amplitude .* sin(phase)
};

// pure Euler decomposition of (A, theta)
WaveComponents wave_components(const Var& amplitude, const Var& phase);

// token-mixing attention weights: shared Q/K/V projections over (N,D) tokens
struct AftWeights {
  nn::Linear q, k, v;
  static AftWeights make(nn::ParamStore& ps, const std::string& name, int dim,
                         Rng& rng);
};

// f_i = sigmoid(q_i) .* sum_j(softmax_over_tokens(k) .* v)_j
// Linear time and memory in N: the context sum is a single D-vector.
Var aft_attention(const Var& x, const AftWeights& w);

// (N,3) token positions from pixel keypoints: x and y mapped to [-1,1] by
// the image extent, detection score as the third channel
Var normalized_positions(const Var& positions, const Var& scores, int width,
                         int height);

struct BoosterConfig {
  int dim = 128;        // descriptor width
  int layer_count = 2;  // attention blocks after the position encoder
};

// Descriptor booster: wave position encoding followed by attention blocks
// that mix global context into every descriptor.
class Booster {
 public:
  Booster() = default;
  Booster(nn::ParamStore& ps, const std::string& prefix,
          const BoosterConfig& cfg, Rng& rng);

  // amplitude from descriptors, phase from positions
  WaveComponents wave(const Var& positions, const Var& descriptors) const;
  // d_pe = d + fuse([real, imag])
  Var encode(const Var& positions, const Var& descriptors) const;
  // encode, then layer_count x (attention + residual, feed-forward +
  // residual), then unit-normalize rows
  Var boost(const Var& positions, const Var& descriptors) const;

  const BoosterConfig& config() const { return cfg_; }

 private:
  void validate(const Var& positions, const Var& descriptors) const;

  BoosterConfig cfg_;
  nn::Mlp2 amp_, phase_, fuse_;
  std::vector<AftWeights> aft_;
  std::vector<nn::Mlp2> ffn_;
};

// Exact retrieval quality: each query ranks all candidates by cosine
// similarity; a query with true match at rank r contributes 1/r. Returns the
// mean over queries with a match (match[i] < 0 means unmatched).
double average_precision(const Var& queries, const Var& candidates,
                         const std::vector<int>& match);

// Differentiable surrogate: similarities are soft-binned over [-1,1] with a
// triangular kernel and precision is accumulated bin by bin from the top.
// More bins sharpen the surrogate toward the exact value.
Var soft_average_precision(const Var& queries, const Var& candidates,
                           const std::vector<int>& match, int bins = 10);

// 1 - mean soft retrieval precision of a's matched descriptors against all
// of b's descriptors
Var ap_loss(const Var& boosted_a, const Var& boosted_b,
            const std::vector<std::pair<int, int>>& pairs, int bins = 10);

}  // namespace rada
