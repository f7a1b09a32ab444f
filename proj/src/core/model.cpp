#include "core/model.hpp"

#include <algorithm>

#include "core/errors.hpp"

namespace rada {

namespace {

// F3 carries 128 channels regardless of the descriptor width
constexpr int kDomainBranchChannels = 128;

DomainAdapterConfig adapter_config(const ModelConfig& cfg) {
  DomainAdapterConfig da;
  da.in_channels = kDomainBranchChannels;
  da.dim = cfg.dim;
  da.reversal_scale = cfg.reversal_scale;
  da.mmd_weight = cfg.mmd_weight;
  return da;
}

BoosterConfig booster_config(const ModelConfig& cfg) {
  BoosterConfig bc;
  bc.dim = cfg.dim;
  bc.layer_count = cfg.booster_layers;
  return bc;
}

BackboneConfig backbone_config(const ModelConfig& cfg) {
  BackboneConfig bc;
  bc.dim = cfg.dim;
  return bc;
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  check_arg(cfg.dim >= 2, "model: descriptor width too small");
  check_arg(cfg.booster_layers >= 0, "model: negative booster depth");
  Rng rng(seed);
  backbone_ = Backbone(ps_, "backbone", backbone_config(cfg), rng);
  adapter_ = DomainAdapter(ps_, "domain", adapter_config(cfg), rng);
  booster_ = Booster(ps_, "booster", booster_config(cfg), rng);
}

FeatureSet Model::extract(const Image& image, int top_k, bool boost) const {
  check_arg(top_k > 0, "extract: top_k must be positive");
  ad::NoGradScope inference;

  const Image padded = pad_to_multiple(image, 32);
  const bool was_padded =
      padded.width != image.width || padded.height != image.height;
  const ScoreDescriptorMaps maps = backbone_.forward(image_to_var(padded));

  DkdConfig dkd = cfg_.dkd;
  // over-detect when padding added fake borders, filter, then re-truncate
  dkd.top_k = was_padded ? 2 * top_k + 64 : top_k;
  Detection det = detect_keypoints(maps.score, dkd);

  std::vector<int> keep;
  for (int i = 0; i < det.count(); ++i) {
    const double u = det.positions->v()[2 * i];
    const double v = det.positions->v()[2 * i + 1];
    if (u <= image.width - 1 && v <= image.height - 1) keep.push_back(i);
  }
  if (static_cast<int>(keep.size()) > top_k) keep.resize(top_k);

  FeatureSet out;
  out.dim = cfg_.dim;
  if (keep.empty()) return out;

  const Var positions = ad::gather_rows(det.positions, keep);
  const Var scores = ad::gather_rows(
      ad::reshape(det.scores, ad::Shape{det.count(), 1}), keep);
  const int n = static_cast<int>(keep.size());
  Var desc = sample_descriptors(maps.descriptors, positions);
  if (boost) {
    const Var normalized =
        normalized_positions(positions, ad::reshape(scores, ad::Shape{n}),
                             padded.width, padded.height);
    desc = booster_.boost(normalized, desc);
  }

  out.keypoints.resize(n);
  for (int i = 0; i < n; ++i) {
    out.keypoints[i].u = positions->v()[2 * i];
    out.keypoints[i].v = positions->v()[2 * i + 1];
    out.keypoints[i].score = scores->v()[i];
  }
  out.descriptors.assign(desc->v(), desc->v() + desc->numel());
  return out;
}

}  // namespace rada
