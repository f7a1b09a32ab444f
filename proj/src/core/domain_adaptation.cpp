#include "core/domain_adaptation.hpp"

#include "core/errors.hpp"

namespace rada {

using namespace ad;

Var global_average_pool(const Var& feature_map) {
  check_arg(feature_map && feature_map->shape.ndim() == 3,
            "pool: expected (H,W,C)");
  const int h = feature_map->shape[0], w = feature_map->shape[1];
  const int c = feature_map->shape[2];
  check_arg(h > 0 && w > 0, "pool: empty map");
  Var flat = reshape(feature_map, Shape{h * w, c});
  return reshape(mean_axis0(flat), Shape{1, c});
}

Var mmd_loss(const Var& source_feats, const Var& target_feats) {
  check_arg(source_feats && source_feats->shape.ndim() == 2 &&
                source_feats->shape[0] >= 1,
            "mmd: source batch must be non-empty (N,dim)");
  check_arg(target_feats && target_feats->shape.ndim() == 2 &&
                target_feats->shape[0] >= 1,
            "mmd: target batch must be non-empty (N,dim)");
  check_arg(source_feats->shape[1] == target_feats->shape[1],
            "mmd: feature widths differ");
  Var diff = sub(mean_axis0(source_feats), mean_axis0(target_feats));
  return ad::sqrt(sum(square(diff)));
}

Var adversarial_loss(const Var& scores, const std::vector<double>& labels,
                     double eps) {
  check_arg(scores && scores->numel() == static_cast<std::int64_t>(labels.size()),
            "adversarial_loss: score/label count mismatch");
  check_arg(!labels.empty(), "adversarial_loss: empty batch");
  for (double l : labels)
    check_arg(l == 0.0 || l == 1.0, "adversarial_loss: labels must be 0 or 1");
  Var s = clamp(reshape(scores, Shape{static_cast<int>(labels.size()), 1}),
                eps, 1.0 - eps);
  Var l = constant(s->shape, labels);
  Var pos = mul(l, ad::log(s));
  Var neg_term = mul(add_scalar(neg(l), 1.0), ad::log(add_scalar(neg(s), 1.0)));
  return neg(mean(add(pos, neg_term)));
}

DomainAdapter::DomainAdapter(nn::ParamStore& ps, const std::string& prefix,
                             const DomainAdapterConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  check_arg(cfg.in_channels > 0 && cfg.dim > 0, "domain adapter: bad widths");
  check_arg(cfg.reversal_scale >= 0, "domain adapter: negative reversal scale");
  proj_ = nn::Conv2d::make(ps, prefix + ".proj", 1, 1, cfg.in_channels,
                           cfg.dim, rng);
  fc1_ = nn::Linear::make(ps, prefix + ".fc1", cfg.dim, 512, rng);
  fc2_ = nn::Linear::make(ps, prefix + ".fc2", 512, 128, rng);
  fc3_ = nn::Linear::make(ps, prefix + ".fc3", 128, 1, rng);
}

Var DomainAdapter::embed(const Var& feature_map) const {
  check_arg(feature_map && feature_map->shape.ndim() == 3 &&
                feature_map->shape[2] == cfg_.in_channels,
            "domain adapter: wrong input channel count");
  return global_average_pool(proj_.forward(feature_map));
}

Var DomainAdapter::classify(const Var& embeddings) const {
  check_arg(embeddings && embeddings->shape.ndim() == 2 &&
                embeddings->shape[1] == cfg_.dim,
            "domain adapter: classifier input width mismatch");
  Var h = gradient_reversal(embeddings, cfg_.reversal_scale);
  h = relu(fc1_.forward(h));
  h = relu(fc2_.forward(h));
  return sigmoid(fc3_.forward(h));
}

DomainLossTerms domain_adaptation_loss(const DomainAdapter& adapter,
                                       const Var& source_embeds,
                                       const Var& target_embeds) {
  const int ns = source_embeds->shape[0], nt = target_embeds->shape[0];
  Var scores = adapter.classify(concat_rows({source_embeds, target_embeds}));
  std::vector<double> labels(static_cast<size_t>(ns), 0.0);
  labels.insert(labels.end(), static_cast<size_t>(nt), 1.0);
  DomainLossTerms out;
  out.adversarial = adversarial_loss(scores, labels);
  out.mmd = mmd_loss(source_embeds, target_embeds);
  out.total = add(out.adversarial,
                  mul_scalar(out.mmd, adapter.config().mmd_weight));
  return out;
}

}  // namespace rada
