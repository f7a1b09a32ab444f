#pragma once

#include <map>
#include <string>

#include "core/geometry.hpp"
#include "core/tensor.hpp"

namespace rada {

using ad::Var;

struct SupervisionConfig {
  double t_des = 0.1;  // sharpness of the matching distribution
  // replace the four-pixel cross-entropy target with a single bilinear
  // sample of the matching distribution at the warped position
  bool point_form_nre = false;
  // drop the leading 1/N factor of the coupling terms
  bool drop_coupling_prefactor = false;
};

// one image's trainable outputs, as produced by the backbone and detector
struct ImageFeatures {
  Var descriptor_map;  // (H,W,dim), unit rows
  Var score_map;       // (H,W), values in (0,1)
  Var positions;       // (N,2) detected keypoints
  Var scores;          // (N) refined keypoint scores
};

// mean symmetric reprojection distance over matched keypoint pairs;
// differentiable through the keypoint positions and the warp
Var detector_loss(const Var& positions_a, const Var& positions_b,
                  const CorrespondenceSet& corr, const WarpSpec& spec);

// per-keypoint distribution over every destination pixel:
// softmax((D . d - 1)/t_des) row by row -> (N, H*W)
Var matching_probability(const Var& descriptors, const Var& descriptor_map,
                         double t_des);

// per-keypoint cross-entropy between the bilinear spread of the warped
// position and the matching distribution -> (N)
Var nre_losses(const Var& descriptors, const Var& descriptor_map,
               const Var& warped_positions, double t_des,
               bool point_form = false);

// symmetric descriptor objective: the summed cross-entropies of both warp
// directions over the keypoints that stay in view, divided by the total
// keypoint count N_A + N_B
Var descriptor_loss(const ImageFeatures& a, const ImageFeatures& b,
                    const WarpSpec& spec, const SupervisionConfig& cfg);

// score-weighted ranking objective tying detection to descriptor quality,
// averaged over both directions
Var coupling_loss(const ImageFeatures& a, const ImageFeatures& b,
                  const WarpSpec& spec, const SupervisionConfig& cfg);

struct LossWeights {
  double da = 2.0;
  double tr = 1.0;
  double det = 1.0;
  double des = 5.0;
  double cp = 1.0;
};

struct LossTerms {
  Var da, tr, det, des, cp;  // scalar graphs
};

struct LossReport {
  Var total;  // weighted sum, ready for backprop
  std::map<std::string, double> components;
  double t_des = 0.1;
};

// total = w_da*da + w_tr*tr + w_det*det + w_des*des + w_cp*cp; rejects
// non-finite components and negative or non-finite weights
LossReport total_loss(const LossTerms& terms, const LossWeights& weights,
                      double t_des);

}  // namespace rada
