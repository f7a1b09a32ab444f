#pragma once

#include <string>
#include <vector>

#include "core/nn.hpp"
#include "core/tensor.hpp"

namespace rada {

using ad::Var;

// Mean over spatial positions of an (H,W,C) map -> (1,C) row.
Var global_average_pool(const Var& feature_map);

// ||mean(X_S) - mean(X_T)||_2 over (N,dim) batches: the linear-kernel
// discrepancy between the two feature distributions.
Var mmd_loss(const Var& source_feats, const Var& target_feats);

// Mean binary cross-entropy of predicted "target" probabilities against
// labels (0 = source, 1 = target). Scores are clamped to [eps, 1-eps].
Var adversarial_loss(const Var& scores, const std::vector<double>& labels,
                     double eps = 1e-7);

struct DomainAdapterConfig {
  int in_channels = 128;  // channels of the encoder level the branch reads
  int dim = 128;          // pooled embedding width
  double reversal_scale = 1.0;
  double mmd_weight = 0.01;
};

// Domain branch: 1x1 projection + global average pooling produce a per-image
// embedding; a reversal-fronted MLP classifier predicts the domain. Training
// the classifier to tell domains apart pushes, through the reversed
// gradients, the encoder toward features the classifier cannot separate.
class DomainAdapter {
 public:
  DomainAdapter() = default;
  DomainAdapter(nn::ParamStore& ps, const std::string& prefix,
                const DomainAdapterConfig& cfg, Rng& rng);

  // (H,W,in_channels) -> (1,dim) pooled embedding
  Var embed(const Var& feature_map) const;
  // (B,dim) -> (B,1) probability of "target"; gradient reversal applied to
  // the input before the MLP
  Var classify(const Var& embeddings) const;

  const DomainAdapterConfig& config() const { return cfg_; }

 private:
  DomainAdapterConfig cfg_;
  nn::Conv2d proj_;
  nn::Linear fc1_, fc2_, fc3_;
};

struct DomainLossTerms {
  Var total;        // adversarial + mmd_weight * mmd
  Var adversarial;  // binary cross-entropy over both domains
  Var mmd;
};

// source_embeds: (N_s,dim), target_embeds: (N_t,dim)
DomainLossTerms domain_adaptation_loss(const DomainAdapter& adapter,
                                       const Var& source_embeds,
                                       const Var& target_embeds);

}  // namespace rada
