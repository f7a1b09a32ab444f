#pragma once

#include <string>

#include "core/nn.hpp"
#include "core/tensor.hpp"

namespace rada {

using ad::Var;

// Encoder channel plan is fixed: 32, 64, 128, 128 at downsample rates
// 1, 1/2, 1/8, 1/32. Input sides must be divisible by 32.
struct BackboneConfig {
  int dim = 128;  // descriptor width; the head emits dim+1 channels
};

struct Pyramid {
  Var f1, f2, f3, f4;
};

struct ScoreDescriptorMaps {
  Var score;        // (H,W), sigmoid output in (0,1)
  Var descriptors;  // (H,W,dim), unit L2 per pixel
};

class Backbone {
 public:
  Backbone() = default;
  Backbone(nn::ParamStore& ps, const std::string& prefix,
           const BackboneConfig& cfg, Rng& rng);

  // image: (H,W,3) with values in [0,1], H and W divisible by 32
  Pyramid encode(const Var& image) const;
  // 1x1-projects each level, upsamples to full resolution, concatenates;
  // output is (H,W,352)
  Var aggregate(const Pyramid& pyr) const;
  ScoreDescriptorMaps head(const Var& aggregated) const;

  ScoreDescriptorMaps forward(const Var& image) const {
    return head(aggregate(encode(image)));
  }

  const BackboneConfig& config() const { return cfg_; }
  static constexpr int kAggregatedChannels = 32 + 64 + 128 + 128;

 private:
  BackboneConfig cfg_;
  nn::Conv2d block1_conv1_, block1_conv2_;
  nn::ResidualBlock block2_, block3_, block4_;
  nn::Conv2d agg1_, agg2_, agg3_, agg4_;
  nn::Conv2d head_;
};

// Validates the image tensor contract (shape, divisibility, value range)
// and throws ErrorCode::invalid_argument on violation.
void check_image_tensor(const Var& image);

}  // namespace rada
