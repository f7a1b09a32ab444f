#include "core/backbone.hpp"

#include <cmath>

#include "core/errors.hpp"

namespace rada {

using namespace ad;

void check_image_tensor(const Var& image) {
  check_arg(image != nullptr, "image: null tensor");
  const Shape& s = image->shape;
  check_arg(s.ndim() == 3 && s[2] == 3, "image: expected (H,W,3)");
  check_arg(s[0] > 0 && s[1] > 0, "image: empty");
  check_arg(s[0] % 32 == 0 && s[1] % 32 == 0,
            "image: height and width must be divisible by 32");
  for (double v : *image->val)
    check_arg(std::isfinite(v) && v >= 0.0 && v <= 1.0,
              "image: values must lie in [0,1]");
}

Backbone::Backbone(nn::ParamStore& ps, const std::string& prefix,
                   const BackboneConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  check_arg(cfg.dim > 0, "backbone: dim must be positive");
  block1_conv1_ = nn::Conv2d::make(ps, prefix + ".block1.conv0", 3, 3, 3, 32, rng);
  block1_conv2_ = nn::Conv2d::make(ps, prefix + ".block1.conv1", 3, 3, 32, 32, rng);
  block2_ = nn::ResidualBlock::make(ps, prefix + ".block2", 32, 64, rng);
  block3_ = nn::ResidualBlock::make(ps, prefix + ".block3", 64, 128, rng);
  block4_ = nn::ResidualBlock::make(ps, prefix + ".block4", 128, 128, rng);
  agg1_ = nn::Conv2d::make(ps, prefix + ".agg1", 1, 1, 32, 32, rng);
  agg2_ = nn::Conv2d::make(ps, prefix + ".agg2", 1, 1, 64, 64, rng);
  agg3_ = nn::Conv2d::make(ps, prefix + ".agg3", 1, 1, 128, 128, rng);
  agg4_ = nn::Conv2d::make(ps, prefix + ".agg4", 1, 1, 128, 128, rng);
  head_ = nn::Conv2d::make(ps, prefix + ".head", 1, 1, kAggregatedChannels,
                           cfg.dim + 1, rng);
}

Pyramid Backbone::encode(const Var& image) const {
  check_image_tensor(image);
  Pyramid pyr;
  Var x = relu(block1_conv1_.forward(image));
  pyr.f1 = relu(block1_conv2_.forward(x));
  pyr.f2 = block2_.forward(maxpool2d(pyr.f1, 2));
  pyr.f3 = block3_.forward(maxpool2d(pyr.f2, 4));
  pyr.f4 = block4_.forward(maxpool2d(pyr.f3, 4));
  return pyr;
}

Var Backbone::aggregate(const Pyramid& pyr) const {
  const int h = pyr.f1->shape[0], w = pyr.f1->shape[1];
  Var u1 = agg1_.forward(pyr.f1);
  Var u2 = upsample_bilinear(agg2_.forward(pyr.f2), h, w);
  Var u3 = upsample_bilinear(agg3_.forward(pyr.f3), h, w);
  Var u4 = upsample_bilinear(agg4_.forward(pyr.f4), h, w);
  auto flat = [&](const Var& v) {
    return reshape(v, Shape({h * w, v->shape[2]}));
  };
  Var cat = concat_cols({flat(u1), flat(u2), flat(u3), flat(u4)});
  return reshape(cat, Shape({h, w, kAggregatedChannels}));
}

ScoreDescriptorMaps Backbone::head(const Var& aggregated) const {
  const int h = aggregated->shape[0], w = aggregated->shape[1];
  Var raw = head_.forward(aggregated);
  Var flat = reshape(raw, Shape({h * w, cfg_.dim + 1}));
  ScoreDescriptorMaps out;
  out.descriptors = reshape(l2_normalize_rows(slice_cols(flat, 0, cfg_.dim)),
                            Shape({h, w, cfg_.dim}));
  out.score = reshape(sigmoid(slice_cols(flat, cfg_.dim, cfg_.dim + 1)),
                      Shape({h, w}));
  return out;
}

}  // namespace rada
