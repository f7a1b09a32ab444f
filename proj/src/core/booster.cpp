#include "core/booster.hpp"

#include <algorithm>
#include <cmath>

#include "core/errors.hpp"

namespace rada {

using ad::Shape;

WaveComponents wave_components(const Var& amplitude, const Var& phase) {
  check_arg(amplitude->shape == phase->shape,
            "wave_components: amplitude and phase shapes differ");
  WaveComponents w;
  w.amplitude = amplitude;
  w.phase = phase;
  w.real = ad::mul(amplitude, ad::cos(phase));
  w.imag = ad::mul(amplitude, ad::sin(phase));
  return w;
}

AftWeights AftWeights::make(nn::ParamStore& ps, const std::string& name,
                            int dim, Rng& rng) {
  AftWeights w;
  w.q = nn::Linear::make(ps, name + ".q", dim, dim, rng);
  w.k = nn::Linear::make(ps, name + ".k", dim, dim, rng);
  w.v = nn::Linear::make(ps, name + ".v", dim, dim, rng);
  return w;
}

Var aft_attention(const Var& x, const AftWeights& w) {
  check_arg(x->shape.ndim() == 2 && x->shape[0] >= 1,
            "aft_attention: input must be (N,D) with N >= 1");
  check_arg(x->shape[1] == w.q.w->shape[0],
            "aft_attention: input width does not match the projections");
  const Var q = w.q.forward(x);
  const Var k = w.k.forward(x);
  const Var v = w.v.forward(x);
  // per-channel softmax over tokens, then one pooled context vector
  const Var context = ad::sum_axis0(ad::mul(ad::softmax_axis0(k), v));
  return ad::mul_rowvec(ad::sigmoid(q), context);
}

Var normalized_positions(const Var& positions, const Var& scores, int width,
                         int height) {
  check_arg(width > 0 && height > 0, "normalized_positions: empty image");
  check_arg(positions->shape.ndim() == 2 && positions->shape[1] == 2,
            "normalized_positions: positions must be (N,2)");
  const int n = positions->shape[0];
  check_arg(scores->numel() == n,
            "normalized_positions: score count does not match positions");
  const Var nx =
      ad::slice_cols(positions, 0, 1) * (2.0 / width) - 1.0;
  const Var ny =
      ad::slice_cols(positions, 1, 2) * (2.0 / height) - 1.0;
  const Var s = ad::reshape(scores, Shape{n, 1});
  return ad::concat_cols({nx, ny, s});
}

Booster::Booster(nn::ParamStore& ps, const std::string& prefix,
                 const BoosterConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  check_arg(cfg.dim >= 1, "booster: descriptor width must be positive");
  check_arg(cfg.layer_count >= 0, "booster: negative layer count");
  amp_ = nn::Mlp2::make(ps, prefix + ".amp", cfg.dim, 2 * cfg.dim, cfg.dim, rng);
  phase_ = nn::Mlp2::make(ps, prefix + ".phase", 3, 32, cfg.dim, rng);
  fuse_ =
      nn::Mlp2::make(ps, prefix + ".fuse", 2 * cfg.dim, 2 * cfg.dim, cfg.dim, rng);
  for (int i = 0; i < cfg.layer_count; ++i) {
    const std::string tag = std::to_string(i);
    aft_.push_back(AftWeights::make(ps, prefix + ".aft" + tag, cfg.dim, rng));
    ffn_.push_back(nn::Mlp2::make(ps, prefix + ".ffn" + tag, cfg.dim,
                                  2 * cfg.dim, cfg.dim, rng));
  }
}

void Booster::validate(const Var& positions, const Var& descriptors) const {
  check_arg(positions->shape.ndim() == 2 && positions->shape[1] == 3,
            "booster: positions must be (N,3)");
  check_arg(descriptors->shape.ndim() == 2 &&
                descriptors->shape[1] == cfg_.dim,
            "booster: descriptor width does not match the configuration");
  check_arg(positions->shape[0] == descriptors->shape[0],
            "booster: positions and descriptors disagree on N");
  check_arg(positions->shape[0] >= 1, "booster: empty keypoint set");
  const std::int64_t n = positions->shape[0];
  for (std::int64_t i = 0; i < n; ++i) {
    const double u = positions->v()[i * 3 + 0];
    const double v = positions->v()[i * 3 + 1];
    const double s = positions->v()[i * 3 + 2];
    check_arg(u >= -1.0 && u <= 1.0 && v >= -1.0 && v <= 1.0,
              "booster: normalized coordinates fall outside [-1,1]");
    check_arg(s > 0.0 && s < 1.0, "booster: score outside (0,1)");
  }
}

WaveComponents Booster::wave(const Var& positions,
                             const Var& descriptors) const {
  validate(positions, descriptors);
  return wave_components(amp_.forward(descriptors), phase_.forward(positions));
}

Var Booster::encode(const Var& positions, const Var& descriptors) const {
  const WaveComponents w = wave(positions, descriptors);
  return ad::add(descriptors, fuse_.forward(ad::concat_cols({w.real, w.imag})));
}

Var Booster::boost(const Var& positions, const Var& descriptors) const {
  Var x = encode(positions, descriptors);
  for (int i = 0; i < cfg_.layer_count; ++i) {
    x = ad::add(x, aft_attention(x, aft_[static_cast<size_t>(i)]));
    x = ad::add(x, ffn_[static_cast<size_t>(i)].forward(x));
  }
  return ad::l2_normalize_rows(x);
}

namespace {

// matched-query rows and their candidate indices
void split_matches(std::int64_t n_queries, std::int64_t n_candidates,
                   const std::vector<int>& match, std::vector<int>& rows,
                   std::vector<int>& cols) {
  check_arg(static_cast<std::int64_t>(match.size()) == n_queries,
            "retrieval: match list length does not equal the query count");
  for (std::int64_t i = 0; i < n_queries; ++i) {
    const int m = match[static_cast<size_t>(i)];
    if (m < 0) continue;
    check_arg(m < n_candidates, "retrieval: match index out of range");
    rows.push_back(static_cast<int>(i));
    cols.push_back(m);
  }
  check_arg(!rows.empty(), "retrieval: no query has a match");
}

}  // namespace

double average_precision(const Var& queries, const Var& candidates,
                         const std::vector<int>& match) {
  check_arg(queries->shape.ndim() == 2 && candidates->shape.ndim() == 2 &&
                queries->shape[1] == candidates->shape[1],
            "retrieval: queries and candidates must share their width");
  std::vector<int> rows, cols;
  split_matches(queries->shape[0], candidates->shape[0], match, rows, cols);
  ad::NoGradScope ng;
  const Var qn = ad::l2_normalize_rows(queries);
  const Var cn = ad::l2_normalize_rows(candidates);
  const Var sim = ad::matmul_bt(qn, cn);
  const std::int64_t m = candidates->shape[0];
  double total = 0.0;
  for (size_t k = 0; k < rows.size(); ++k) {
    const double* row = sim->v() + static_cast<std::int64_t>(rows[k]) * m;
    const double s_true = row[cols[k]];
    std::int64_t rank = 1;
    for (std::int64_t j = 0; j < m; ++j) rank += row[j] > s_true ? 1 : 0;
    total += 1.0 / static_cast<double>(rank);
  }
  return total / static_cast<double>(rows.size());
}

Var soft_average_precision(const Var& queries, const Var& candidates,
                           const std::vector<int>& match, int bins) {
  check_arg(queries->shape.ndim() == 2 && candidates->shape.ndim() == 2 &&
                queries->shape[1] == candidates->shape[1],
            "retrieval: queries and candidates must share their width");
  check_arg(bins >= 2, "retrieval: need at least two similarity bins");
  std::vector<int> rows, cols;
  split_matches(queries->shape[0], candidates->shape[0], match, rows, cols);
  const Var qn = ad::l2_normalize_rows(queries);
  const Var cn = ad::l2_normalize_rows(candidates);
  const Var sim = ad::matmul_bt(ad::gather_rows(qn, rows), cn);
  const std::int64_t nq = static_cast<std::int64_t>(rows.size());
  std::vector<int> qrows(static_cast<size_t>(nq));
  for (std::int64_t i = 0; i < nq; ++i) qrows[static_cast<size_t>(i)] = static_cast<int>(i);

  // triangular soft histogram over similarity in [-1,1], sharpest bin first
  const double delta = 2.0 / (bins - 1);
  const double eps = 1e-12;
  Var cum_pos, cum_all, ap;
  for (int b = bins - 1; b >= 0; --b) {
    const double center = -1.0 + b * delta;
    const Var weight =
        ad::relu(ad::add_scalar(ad::abs(sim - center) * (-1.0 / delta), 1.0));
    const Var mass = ad::sum_axis1(weight);                    // (nq)
    const Var pos = ad::gather_elements(weight, qrows, cols);  // (nq)
    cum_pos = cum_pos ? ad::add(cum_pos, pos) : pos;
    cum_all = cum_all ? ad::add(cum_all, mass) : mass;
    const Var term = ad::div(ad::mul(pos, cum_pos), ad::add_scalar(cum_all, eps));
    ap = ap ? ad::add(ap, term) : term;
  }
  return ad::mean(ap);
}

Var ap_loss(const Var& boosted_a, const Var& boosted_b,
            const std::vector<std::pair<int, int>>& pairs, int bins) {
  check_arg(!pairs.empty(), "retrieval loss: no correspondences");
  check_arg(boosted_a->shape.ndim() == 2 && boosted_b->shape.ndim() == 2,
            "retrieval loss: descriptors must be (N,dim)");
  std::vector<int> match(static_cast<size_t>(boosted_a->shape[0]), -1);
  for (const auto& [ia, ib] : pairs) {
    check_arg(ia >= 0 && ia < boosted_a->shape[0] && ib >= 0 &&
                  ib < boosted_b->shape[0],
              "retrieval loss: correspondence index out of range");
    check_arg(match[static_cast<size_t>(ia)] < 0,
              "retrieval loss: duplicate query in correspondences");
    match[static_cast<size_t>(ia)] = ib;
  }
  const Var mean_ap = soft_average_precision(boosted_a, boosted_b, match, bins);
  return ad::add_scalar(ad::neg(mean_ap), 1.0);
}

}  // namespace rada
