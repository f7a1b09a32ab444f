#pragma once

#include <cstdint>
#include <memory>

#include "core/backbone.hpp"
#include "core/booster.hpp"
#include "core/dkd.hpp"
#include "core/domain_adaptation.hpp"
#include "core/image.hpp"
#include "core/matching.hpp"
#include "core/nn.hpp"

namespace rada {

struct ModelConfig {
  int dim = 128;          // descriptor width everywhere
  int booster_layers = 2;
  DkdConfig dkd;          // training-time detection budget
  double reversal_scale = 1.0;
  double mmd_weight = 0.01;
};

// Parameter store plus the three trainable blocks, constructed together so
// registration order (and therefore checkpoints) is reproducible.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  const Backbone& backbone() const { return backbone_; }
  const DomainAdapter& adapter() const { return adapter_; }
  const Booster& booster() const { return booster_; }
  const ModelConfig& config() const { return cfg_; }

  // Inference-only extraction: pads the image to side multiples of 32, runs
  // the forward pass without gradients, detects up to top_k keypoints
  // outside the padded margin, and returns (optionally boosted) descriptors.
  FeatureSet extract(const Image& image, int top_k, bool boost = true) const;

 private:
  ModelConfig cfg_;
  nn::ParamStore ps_;
  Backbone backbone_;
  DomainAdapter adapter_;
  Booster booster_;
};

}  // namespace rada
