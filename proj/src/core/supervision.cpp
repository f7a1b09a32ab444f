#include "core/supervision.hpp"

#include <cmath>
#include <vector>

#include "core/dkd.hpp"
#include "core/errors.hpp"

namespace rada {

using ad::Shape;

namespace {

// row-wise euclidean distances between two (M,2) position sets
Var row_distances(const Var& x, const Var& y) {
  return ad::sqrt(ad::sum_axis1(ad::square(ad::sub(x, y))));
}

// (N, H*W) logits (cosine - 1)/t_des of every keypoint against every pixel
Var matching_logits(const Var& descriptors, const Var& descriptor_map,
                    double t_des) {
  check_arg(descriptor_map->shape.ndim() == 3,
            "matching: descriptor map must be (H,W,dim)");
  check_arg(descriptors->shape.ndim() == 2 &&
                descriptors->shape[1] == descriptor_map->shape[2],
            "matching: descriptor width does not match the map");
  check_arg(t_des > 0.0, "matching: temperature must be positive");
  const int hw = descriptor_map->shape[0] * descriptor_map->shape[1];
  const Var flat =
      ad::reshape(descriptor_map, Shape{hw, descriptor_map->shape[2]});
  return ad::mul_scalar(ad::add_scalar(ad::matmul_bt(descriptors, flat), -1.0),
                        1.0 / t_des);
}

// the four bilinear taps of each warped position, padded to a fixed width:
// rows/cols address a (N, H*W) matrix, weights sum to 1 per keypoint
void bilinear_taps(const Var& warped, int h, int w, std::vector<int>& rows,
                   std::vector<int>& cols, std::vector<double>& weights) {
  const std::int64_t n = warped->shape[0];
  for (std::int64_t i = 0; i < n; ++i) {
    const double u = warped->v()[i * 2 + 0];
    const double v = warped->v()[i * 2 + 1];
    check_arg(u >= 0.0 && u <= w - 1 && v >= 0.0 && v <= h - 1,
              "matching: warped position outside the destination view");
    const SparseProb sp = reprojection_probability_map(u, v, h, w);
    for (int k = 0; k < 4; ++k) {
      rows.push_back(static_cast<int>(i));
      cols.push_back(k < sp.count ? sp.index[static_cast<size_t>(k)] : 0);
      weights.push_back(k < sp.count ? sp.weight[static_cast<size_t>(k)] : 0.0);
    }
  }
}

// sum_k w_k * m[i, col_k] for the four taps of every keypoint -> (N)
Var weighted_taps(const Var& matrix, const std::vector<int>& rows,
                  const std::vector<int>& cols,
                  const std::vector<double>& weights) {
  const int n = static_cast<int>(rows.size()) / 4;
  const Var gathered = ad::gather_elements(matrix, rows, cols);
  const Var scaled =
      ad::mul(gathered, ad::constant(Shape{n * 4}, weights));
  return ad::sum_axis1(ad::reshape(scaled, Shape{n, 4}));
}

// normalize a nonnegative vector to unit sum, differentiably
Var normalize_sum(const Var& v) {
  const int n = v->shape[0];
  const Var inv = ad::reshape(ad::div(ad::scalar(1.0), ad::sum(v)), Shape{1, 1});
  return ad::reshape(ad::matmul(ad::reshape(v, Shape{n, 1}), inv), Shape{n});
}

}  // namespace

Var detector_loss(const Var& positions_a, const Var& positions_b,
                  const CorrespondenceSet& corr, const WarpSpec& spec) {
  if (corr.pairs.empty()) return ad::scalar(0.0);
  std::vector<int> ia, ib;
  for (const Correspondence& c : corr.pairs) {
    ia.push_back(c.index_a);
    ib.push_back(c.index_b);
  }
  const Var pa = ad::gather_rows(positions_a, ia);
  const Var pb = ad::gather_rows(positions_b, ib);
  const WarpedPoints ab = warp_points(pa, spec, true);
  const WarpedPoints ba = warp_points(pb, spec, false);
  check_arg(ab.kept.size() == ia.size() && ba.kept.size() == ib.size(),
            "detector loss: a matched keypoint no longer warps");
  const Var d = ad::add(row_distances(pa, ba.positions),
                        row_distances(pb, ab.positions));
  return ad::mean(ad::mul_scalar(d, 0.5));
}

Var matching_probability(const Var& descriptors, const Var& descriptor_map,
                         double t_des) {
  return ad::softmax_axis1(matching_logits(descriptors, descriptor_map, t_des));
}

Var nre_losses(const Var& descriptors, const Var& descriptor_map,
               const Var& warped_positions, double t_des, bool point_form) {
  check_arg(warped_positions->shape.ndim() == 2 &&
                warped_positions->shape[1] == 2,
            "matching: warped positions must be (N,2)");
  check_arg(warped_positions->shape[0] == descriptors->shape[0],
            "matching: descriptor and position counts differ");
  const Var logits = matching_logits(descriptors, descriptor_map, t_des);
  const int h = descriptor_map->shape[0], w = descriptor_map->shape[1];
  std::vector<int> rows, cols;
  std::vector<double> weights;
  bilinear_taps(warped_positions, h, w, rows, cols, weights);
  if (point_form) {
    // -log of the matching mass interpolated at the warped position
    const Var sampled =
        weighted_taps(ad::softmax_axis1(logits), rows, cols, weights);
    return ad::neg(ad::log(sampled));
  }
  // cross-entropy against the bilinear spread of the warped position
  return ad::neg(
      weighted_taps(ad::logsoftmax_axis1(logits), rows, cols, weights));
}

namespace {

// summed cross-entropies of one direction over in-view warped keypoints
Var nre_direction_sum(const ImageFeatures& src, const ImageFeatures& dst,
                      const WarpSpec& spec, bool a_to_b,
                      const SupervisionConfig& cfg) {
  if (src.positions->shape[0] == 0) return ad::scalar(0.0);
  const WarpedPoints wp = warp_points(src.positions, spec, a_to_b);
  if (wp.kept.empty()) return ad::scalar(0.0);
  const Var d = sample_descriptors(src.descriptor_map,
                                   ad::gather_rows(src.positions, wp.kept));
  return ad::sum(nre_losses(d, dst.descriptor_map, wp.positions, cfg.t_des,
                            cfg.point_form_nre));
}

// one direction of the score-weighted ranking objective
Var coupling_direction(const ImageFeatures& src, const ImageFeatures& dst,
                       const WarpSpec& spec, bool a_to_b,
                       const SupervisionConfig& cfg) {
  const int n_src = src.positions->shape[0];
  if (n_src == 0) return ad::scalar(0.0);
  for (std::int64_t i = 0; i < src.scores->numel(); ++i)
    check_arg(src.scores->v()[i] > 0.0 && src.scores->v()[i] < 1.0,
              "coupling loss: keypoint scores must lie in (0,1)");
  const WarpedPoints wp = warp_points(src.positions, spec, a_to_b);
  if (wp.kept.empty()) return ad::scalar(0.0);
  const int m = static_cast<int>(wp.kept.size());

  const Var s_src = ad::gather_rows(
      ad::reshape(src.scores, Shape{n_src, 1}), wp.kept);
  const int h = dst.score_map->shape[0], w = dst.score_map->shape[1];
  const Var s_dst =
      ad::grid_sample(ad::reshape(dst.score_map, Shape{h, w, 1}), wp.positions);
  const Var pair_weight =
      normalize_sum(ad::reshape(ad::mul(s_src, s_dst), Shape{m}));

  const Var d = sample_descriptors(src.descriptor_map,
                                   ad::gather_rows(src.positions, wp.kept));
  const Var sim = ad::exp(matching_logits(d, dst.descriptor_map, cfg.t_des));
  std::vector<int> rows, cols;
  std::vector<double> weights;
  bilinear_taps(wp.positions, h, w, rows, cols, weights);
  const Var rank = ad::add_scalar(
      ad::neg(weighted_taps(sim, rows, cols, weights)), 1.0);

  const Var term = ad::sum(ad::mul(pair_weight, rank));
  return cfg.drop_coupling_prefactor ? term
                                     : ad::mul_scalar(term, 1.0 / n_src);
}

}  // namespace

Var descriptor_loss(const ImageFeatures& a, const ImageFeatures& b,
                    const WarpSpec& spec, const SupervisionConfig& cfg) {
  const int total = a.positions->shape[0] + b.positions->shape[0];
  if (total == 0) return ad::scalar(0.0);
  const Var s = ad::add(nre_direction_sum(a, b, spec, true, cfg),
                        nre_direction_sum(b, a, spec, false, cfg));
  return ad::mul_scalar(s, 1.0 / total);
}

Var coupling_loss(const ImageFeatures& a, const ImageFeatures& b,
                  const WarpSpec& spec, const SupervisionConfig& cfg) {
  return ad::mul_scalar(ad::add(coupling_direction(a, b, spec, true, cfg),
                                coupling_direction(b, a, spec, false, cfg)),
                        0.5);
}

LossReport total_loss(const LossTerms& terms, const LossWeights& weights,
                      double t_des) {
  const std::vector<std::pair<std::string, std::pair<Var, double>>> parts = {
      {"da", {terms.da, weights.da}},   {"tr", {terms.tr, weights.tr}},
      {"det", {terms.det, weights.det}}, {"des", {terms.des, weights.des}},
      {"cp", {terms.cp, weights.cp}},
  };
  LossReport report;
  report.t_des = t_des;
  Var total;
  for (const auto& [name, part] : parts) {
    const auto& [term, weight] = part;
    check_arg(std::isfinite(weight) && weight >= 0.0,
              "total loss: weight for " + name + " must be finite and >= 0");
    check_arg(term && term->numel() == 1,
              "total loss: component " + name + " must be a scalar");
    if (!std::isfinite(term->v()[0]))
      throw Error(ErrorCode::numeric,
                  "total loss: component " + name + " is not finite");
    report.components[name] = term->v()[0];
    const Var scaled = ad::mul_scalar(term, weight);
    total = total ? ad::add(total, scaled) : scaled;
  }
  report.total = total;
  return report;
}

}  // namespace rada
