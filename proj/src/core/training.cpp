#include "core/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include "core/checkpoint.hpp"
#include "core/errors.hpp"

namespace rada {

namespace {

constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEpsilon = 1e-8;

void validate(const TrainConfig& c) {
  for (const double v :
       {c.learning_rate_peak, c.loss_weights.da, c.loss_weights.tr,
        c.loss_weights.det, c.loss_weights.des, c.loss_weights.cp, c.t_des,
        c.lambda_mmd, c.th_gt, c.score_threshold, c.softargmax_temperature,
        c.reversal_scale})
    check_arg(std::isfinite(v), "config: values must be finite");
  check_arg(c.learning_rate_peak > 0, "config: learning_rate_peak must be > 0");
  check_arg(c.warmup_steps >= 1, "config: warmup_steps must be >= 1");
  check_arg(c.batch_size >= 1, "config: batch_size must be >= 1");
  check_arg(c.accumulation_batches >= 1,
            "config: accumulation_batches must be >= 1");
  check_arg(c.max_steps >= 0, "config: max_steps must be >= 0");
  check_arg(c.loss_weights.da >= 0 && c.loss_weights.tr >= 0 &&
                c.loss_weights.det >= 0 && c.loss_weights.des >= 0 &&
                c.loss_weights.cp >= 0,
            "config: loss weights must be nonnegative");
  check_arg(c.t_des > 0, "config: t_des must be > 0");
  check_arg(c.lambda_mmd >= 0, "config: lambda_mmd must be >= 0");
  check_arg(c.keypoint_radius >= 1, "config: keypoint_radius must be >= 1");
  check_arg(c.th_gt > 0, "config: th_gt must be > 0");
  check_arg(c.crop_size > 0 && c.crop_size % 32 == 0,
            "config: crop_size must be a positive multiple of 32");
  check_arg(c.descriptor_dim >= 2, "config: descriptor_dim must be >= 2");
  check_arg(c.booster_layers >= 0, "config: booster_layers must be >= 0");
  check_arg(c.top_k >= 1, "config: top_k must be >= 1");
  check_arg(c.score_threshold >= 0 && c.score_threshold < 1,
            "config: score_threshold must be in [0,1)");
  check_arg(c.softargmax_temperature > 0,
            "config: softargmax_temperature must be > 0");
  check_arg(c.reversal_scale > 0, "config: reversal_scale must be > 0");
  check_arg(c.ap_bins >= 2, "config: ap_bins must be >= 2");
}

ModelConfig model_config(const TrainConfig& c) {
  validate(c);
  ModelConfig m;
  m.dim = c.descriptor_dim;
  m.booster_layers = c.booster_layers;
  m.dkd.radius = c.keypoint_radius;
  m.dkd.top_k = c.top_k;
  m.dkd.score_threshold = c.score_threshold;
  m.dkd.temperature = c.softargmax_temperature;
  m.reversal_scale = c.reversal_scale;
  m.mmd_weight = c.lambda_mmd;
  return m;
}

std::string format_value(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct KeyHandler {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

double parse_double(const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    check_arg(used == value.size(), "trailing characters after the number");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_argument, "not a number");
  }
}

std::int64_t parse_int(const std::string& value) {
  try {
    size_t used = 0;
    const long long v = std::stoll(value, &used);
    check_arg(used == value.size(), "trailing characters after the integer");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_argument, "not an integer");
  }
}

bool parse_bool(const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw Error(ErrorCode::invalid_argument, "expected true or false");
}

const std::vector<KeyHandler>& key_handlers() {
  auto dbl = [](double TrainConfig::* f) {
    return std::pair{
        std::function<void(TrainConfig&, const std::string&)>(
            [f](TrainConfig& c, const std::string& v) {
              c.*f = parse_double(v);
            }),
        std::function<std::string(const TrainConfig&)>(
            [f](const TrainConfig& c) { return format_value(c.*f); })};
  };
  auto integer = [](int TrainConfig::* f) {
    return std::pair{
        std::function<void(TrainConfig&, const std::string&)>(
            [f](TrainConfig& c, const std::string& v) {
              c.*f = static_cast<int>(parse_int(v));
            }),
        std::function<std::string(const TrainConfig&)>(
            [f](const TrainConfig& c) { return std::to_string(c.*f); })};
  };
  auto boolean = [](bool TrainConfig::* f) {
    return std::pair{
        std::function<void(TrainConfig&, const std::string&)>(
            [f](TrainConfig& c, const std::string& v) {
              c.*f = parse_bool(v);
            }),
        std::function<std::string(const TrainConfig&)>(
            [f](const TrainConfig& c) {
              return c.*f ? std::string("true") : std::string("false");
            })};
  };
  auto weight = [](double LossWeights::* f) {
    return std::pair{
        std::function<void(TrainConfig&, const std::string&)>(
            [f](TrainConfig& c, const std::string& v) {
              c.loss_weights.*f = parse_double(v);
            }),
        std::function<std::string(const TrainConfig&)>(
            [f](const TrainConfig& c) {
              return format_value(c.loss_weights.*f);
            })};
  };

  static const std::vector<KeyHandler> handlers = [&] {
    std::vector<KeyHandler> h;
    auto add = [&h](const char* key, auto pair) {
      h.push_back({key, pair.first, pair.second});
    };
    add("learning_rate_peak", dbl(&TrainConfig::learning_rate_peak));
    add("warmup_steps", integer(&TrainConfig::warmup_steps));
    add("batch_size", integer(&TrainConfig::batch_size));
    add("accumulation_batches", integer(&TrainConfig::accumulation_batches));
    add("max_steps", integer(&TrainConfig::max_steps));
    h.push_back({"seed",
                 [](TrainConfig& c, const std::string& v) {
                   c.seed = static_cast<std::uint64_t>(parse_int(v));
                 },
                 [](const TrainConfig& c) { return std::to_string(c.seed); }});
    add("weight_da", weight(&LossWeights::da));
    add("weight_tr", weight(&LossWeights::tr));
    add("weight_det", weight(&LossWeights::det));
    add("weight_des", weight(&LossWeights::des));
    add("weight_cp", weight(&LossWeights::cp));
    add("t_des", dbl(&TrainConfig::t_des));
    add("lambda_mmd", dbl(&TrainConfig::lambda_mmd));
    add("keypoint_radius", integer(&TrainConfig::keypoint_radius));
    add("th_gt", dbl(&TrainConfig::th_gt));
    add("crop_size", integer(&TrainConfig::crop_size));
    add("descriptor_dim", integer(&TrainConfig::descriptor_dim));
    add("booster_layers", integer(&TrainConfig::booster_layers));
    add("top_k", integer(&TrainConfig::top_k));
    add("score_threshold", dbl(&TrainConfig::score_threshold));
    add("softargmax_temperature", dbl(&TrainConfig::softargmax_temperature));
    add("reversal_scale", dbl(&TrainConfig::reversal_scale));
    add("ap_bins", integer(&TrainConfig::ap_bins));
    add("use_booster", boolean(&TrainConfig::use_booster));
    add("use_domain_adaptation", boolean(&TrainConfig::use_domain_adaptation));
    return h;
  }();
  return handlers;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::invalid_argument,
                  "config line " + std::to_string(line_no) +
                      ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    bool handled = false;
    for (const KeyHandler& h : key_handlers())
      if (key == h.key) {
        try {
          h.set(cfg, value);
        } catch (const Error& e) {
          throw Error(ErrorCode::invalid_argument,
                      "config line " + std::to_string(line_no) + ", key '" +
                          key + "': " + e.what());
        }
        handled = true;
        break;
      }
    if (!handled)
      throw Error(ErrorCode::invalid_argument,
                  "config line " + std::to_string(line_no) +
                      ": unknown key '" + key + "'");
  }
  validate(cfg);
  return cfg;
}

TrainConfig parse_train_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_train_config(buf.str());
}

std::string serialize_train_config(const TrainConfig& cfg) {
  std::string out;
  for (const KeyHandler& h : key_handlers())
    out += std::string(h.key) + " = " + h.get(cfg) + "\n";
  return out;
}

std::uint64_t config_fingerprint(const TrainConfig& cfg) {
  const std::string text = serialize_train_config(cfg);
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

double lr_schedule(std::int64_t step, const TrainConfig& cfg) {
  check_arg(step >= 0, "lr_schedule: step must be >= 0");
  if (step >= cfg.warmup_steps) return cfg.learning_rate_peak;
  return cfg.learning_rate_peak * static_cast<double>(step) /
         static_cast<double>(cfg.warmup_steps);
}

void log_metrics(std::ostream& out, const StepReport& report) {
  const auto saved = out.precision(17);
  auto line = [&](const std::string& name, double value) {
    out << "step=" << report.step << " name=" << name << " value=" << value
        << "\n";
  };
  line("total", report.total);
  for (const char* name : {"da", "tr", "det", "des", "cp"}) {
    const auto it = report.components.find(name);
    if (it != report.components.end()) line(name, it->second);
  }
  out.precision(saved);
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg), model_(model_config(cfg), cfg.seed) {
  const auto& names = model_.params().names();
  adam_m_.resize(names.size());
  adam_v_.resize(names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    const auto n = model_.params().get(names[i])->numel();
    adam_m_[i].assign(static_cast<size_t>(n), 0.0);
    adam_v_[i].assign(static_cast<size_t>(n), 0.0);
  }
}

Trainer::SampleGraphs Trainer::sample_graphs(const TrainSample& sample) const {
  SampleGraphs g;
  const Backbone& net = model_.backbone();
  const Var image_a = image_to_var(sample.image_a);
  const Var image_b = image_to_var(sample.image_b);
  const Pyramid pyr_a = net.encode(image_a);
  const Pyramid pyr_b = net.encode(image_b);
  const ScoreDescriptorMaps maps_a = net.head(net.aggregate(pyr_a));
  const ScoreDescriptorMaps maps_b = net.head(net.aggregate(pyr_b));

  if (cfg_.use_domain_adaptation) {
    g.embed_a = model_.adapter().embed(pyr_a.f3);
    g.embed_b = model_.adapter().embed(pyr_b.f3);
  }

  const Detection det_a = detect_keypoints(maps_a.score, model_.config().dkd);
  const Detection det_b = detect_keypoints(maps_b.score, model_.config().dkd);
  if (det_a.count() == 0 || det_b.count() == 0) {
    g.det = g.des = g.cp = g.tr = ad::scalar(0.0);
    return g;
  }

  std::vector<Eigen::Vector2d> kpts_a(det_a.count()), kpts_b(det_b.count());
  for (int i = 0; i < det_a.count(); ++i)
    kpts_a[i] = {det_a.positions->v()[2 * i], det_a.positions->v()[2 * i + 1]};
  for (int i = 0; i < det_b.count(); ++i)
    kpts_b[i] = {det_b.positions->v()[2 * i], det_b.positions->v()[2 * i + 1]};
  const CorrespondenceSet matches =
      build_correspondences(kpts_a, kpts_b, sample.spec, cfg_.th_gt);

  g.det = detector_loss(det_a.positions, det_b.positions, matches, sample.spec);

  SupervisionConfig sup;
  sup.t_des = cfg_.t_des;
  const ImageFeatures feats_a{maps_a.descriptors, maps_a.score,
                              det_a.positions, det_a.scores};
  const ImageFeatures feats_b{maps_b.descriptors, maps_b.score,
                              det_b.positions, det_b.scores};
  g.des = descriptor_loss(feats_a, feats_b, sample.spec, sup);
  g.cp = coupling_loss(feats_a, feats_b, sample.spec, sup);

  if (cfg_.use_booster && !matches.pairs.empty()) {
    const int w = sample.image_a.width, h = sample.image_a.height;
    const Var desc_a = sample_descriptors(maps_a.descriptors, det_a.positions);
    const Var desc_b = sample_descriptors(maps_b.descriptors, det_b.positions);
    const Var boosted_a = model_.booster().boost(
        normalized_positions(det_a.positions, det_a.scores, w, h), desc_a);
    const Var boosted_b = model_.booster().boost(
        normalized_positions(det_b.positions, det_b.scores,
                             sample.image_b.width, sample.image_b.height),
        desc_b);
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(matches.pairs.size());
    for (const Correspondence& c : matches.pairs)
      pairs.emplace_back(c.index_a, c.index_b);
    g.tr = ap_loss(boosted_a, boosted_b, pairs, cfg_.ap_bins);
  } else {
    g.tr = ad::scalar(0.0);
  }
  return g;
}

LossReport Trainer::batch_loss(
    const std::vector<const TrainSample*>& batch) const {
  check_arg(!batch.empty(), "batch_loss: empty batch");
  std::vector<Var> src_embeds, tgt_embeds;
  Var det, des, cp, tr;
  auto accumulate = [](Var& acc, const Var& term) {
    acc = acc ? ad::add(acc, term) : term;
  };
  for (const TrainSample* sample : batch) {
    check_arg(sample != nullptr, "batch_loss: null sample");
    const SampleGraphs g = sample_graphs(*sample);
    accumulate(det, g.det);
    accumulate(des, g.des);
    accumulate(cp, g.cp);
    accumulate(tr, g.tr);
    if (g.embed_a) {
      src_embeds.push_back(g.embed_a);
      tgt_embeds.push_back(g.embed_b);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  LossTerms terms;
  terms.det = ad::mul_scalar(det, inv);
  terms.des = ad::mul_scalar(des, inv);
  terms.cp = ad::mul_scalar(cp, inv);
  terms.tr = ad::mul_scalar(tr, inv);
  if (!src_embeds.empty()) {
    terms.da = domain_adaptation_loss(model_.adapter(),
                                      ad::concat_rows(src_embeds),
                                      ad::concat_rows(tgt_embeds))
                   .total;
  } else {
    terms.da = ad::scalar(0.0);
  }
  return total_loss(terms, cfg_.loss_weights, cfg_.t_des);
}

void Trainer::apply_update() {
  const double lr = lr_schedule(step_ + 1, cfg_);
  const double t = static_cast<double>(step_ + 1);
  const double correction1 = 1.0 - std::pow(kBeta1, t);
  const double correction2 = 1.0 - std::pow(kBeta2, t);
  const double inv_batches = 1.0 / cfg_.accumulation_batches;
  const auto& names = model_.params().names();
  for (size_t i = 0; i < names.size(); ++i) {
    const Var p = model_.params().get(names[i]);
    double* value = p->v();
    const double* grad = p->g();
    std::vector<double>& m = adam_m_[i];
    std::vector<double>& v = adam_v_[i];
    for (std::int64_t j = 0; j < p->numel(); ++j) {
      const double g = grad[j] * inv_batches;
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g;
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      value[j] -= lr * m_hat / (std::sqrt(v_hat) + kEpsilon);
    }
  }
  ++step_;
  model_.params().zero_grads();
}

StepReport Trainer::update(const std::vector<TrainSample>& corpus,
                           std::ostream* metrics) {
  check_arg(!corpus.empty(), "update: empty corpus");
  model_.params().zero_grads();
  StepReport report;
  report.components = {{"da", 0}, {"tr", 0}, {"det", 0}, {"des", 0}, {"cp", 0}};
  const std::int64_t batch_base =
      step_ * static_cast<std::int64_t>(cfg_.accumulation_batches);
  for (int b = 0; b < cfg_.accumulation_batches; ++b) {
    std::vector<const TrainSample*> batch(cfg_.batch_size);
    for (int s = 0; s < cfg_.batch_size; ++s) {
      const std::int64_t index =
          ((batch_base + b) * cfg_.batch_size + s) %
          static_cast<std::int64_t>(corpus.size());
      batch[s] = &corpus[static_cast<size_t>(index)];
    }
    LossReport loss;
    try {
      loss = batch_loss(batch);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::numeric)
        throw Error(ErrorCode::numeric,
                    "update " + std::to_string(step_ + 1) + ": " + e.what());
      throw;
    }
    ad::backprop(loss.total);
    report.total += loss.total->v()[0];
    for (auto& [name, value] : report.components) {
      const auto it = loss.components.find(name);
      if (it != loss.components.end()) value += it->second;
    }
  }
  const double inv = 1.0 / cfg_.accumulation_batches;
  report.total *= inv;
  for (auto& [name, value] : report.components) value *= inv;
  apply_update();
  report.step = step_;
  report.learning_rate = lr_schedule(step_, cfg_);
  if (metrics) log_metrics(*metrics, report);
  return report;
}

void Trainer::run(const std::vector<TrainSample>& corpus, std::int64_t updates,
                  std::ostream* metrics) {
  check_arg(updates >= 0, "run: negative update count");
  for (std::int64_t k = 0; k < updates; ++k) update(corpus, metrics);
}

void Trainer::save_checkpoint(const std::string& path) const {
  CheckpointBundle bundle;
  bundle.fingerprint = config_fingerprint(cfg_);
  bundle.step = static_cast<std::uint64_t>(step_);
  const auto& names = model_.params().names();
  for (size_t i = 0; i < names.size(); ++i) {
    const Var p = model_.params().get(names[i]);
    NamedArray arr{names[i], p->shape,
                   std::vector<double>(p->v(), p->v() + p->numel())};
    bundle.params.push_back(arr);
    arr.values = adam_m_[i];
    bundle.opt_m.push_back(arr);
    arr.values = adam_v_[i];
    bundle.opt_v.push_back(std::move(arr));
  }
  write_checkpoint(bundle, path);
}

void Trainer::load_checkpoint(const std::string& path,
                              bool allow_fingerprint_mismatch) {
  const CheckpointBundle bundle = read_checkpoint(path);
  if (bundle.fingerprint != config_fingerprint(cfg_) &&
      !allow_fingerprint_mismatch)
    throw Error(ErrorCode::state,
                "checkpoint: config fingerprint mismatch for " + path +
                    " (override to load anyway)");
  const auto& names = model_.params().names();
  check_arg(bundle.params.size() == names.size() &&
                bundle.opt_m.size() == names.size() &&
                bundle.opt_v.size() == names.size(),
            "checkpoint: parameter count differs from the model");
  for (size_t i = 0; i < names.size(); ++i) {
    const NamedArray& arr = bundle.params[i];
    if (arr.name != names[i])
      throw Error(ErrorCode::state, "checkpoint: parameter order mismatch at '" +
                                        arr.name + "'");
    const Var p = model_.params().get(names[i]);
    if (!(arr.shape == p->shape))
      throw Error(ErrorCode::state,
                  "checkpoint: shape mismatch for '" + arr.name + "'");
    std::copy(arr.values.begin(), arr.values.end(), p->v());
    check_arg(bundle.opt_m[i].values.size() == adam_m_[i].size() &&
                  bundle.opt_v[i].values.size() == adam_v_[i].size(),
              "checkpoint: optimizer state size mismatch");
    adam_m_[i] = bundle.opt_m[i].values;
    adam_v_[i] = bundle.opt_v[i].values;
  }
  step_ = static_cast<std::int64_t>(bundle.step);
  model_.params().zero_grads();
}

double Trainer::domain_accuracy(
    const std::vector<TrainSample>& samples) const {
  check_arg(!samples.empty(), "domain_accuracy: no samples");
  ad::NoGradScope inference;
  int correct = 0, total = 0;
  for (const TrainSample& sample : samples) {
    for (int side = 0; side < 2; ++side) {
      const Image& img = side == 0 ? sample.image_a : sample.image_b;
      const Pyramid pyr = model_.backbone().encode(image_to_var(img));
      const Var prob =
          model_.adapter().classify(model_.adapter().embed(pyr.f3));
      const int predicted = prob->v()[0] > 0.5 ? 1 : 0;
      correct += predicted == sample.domain_labels[static_cast<size_t>(side)];
      ++total;
    }
  }
  return static_cast<double>(correct) / total;
}

double Trainer::training_mma3(const std::vector<TrainSample>& corpus) const {
  check_arg(!corpus.empty(), "training_mma3: empty corpus");
  double sum = 0;
  for (const TrainSample& sample : corpus) {
    const FeatureSet fa =
        model_.extract(sample.image_a, cfg_.top_k, cfg_.use_booster);
    const FeatureSet fb =
        model_.extract(sample.image_b, cfg_.top_k, cfg_.use_booster);
    const MatchSet matches = match_features(fa, fb);
    sum += mma_curve(matches, fa, fb, sample.spec).mma3();
  }
  return sum / static_cast<double>(corpus.size());
}

SmokeResult overfit_smoke(const std::vector<TrainSample>& corpus,
                          const std::vector<TrainSample>& holdout,
                          const TrainConfig& cfg, std::int64_t updates,
                          std::ostream* metrics) {
  check_arg(corpus.size() <= 20, "overfit_smoke: corpus larger than 20 pairs");
  Trainer trainer(cfg);
  SmokeResult result;
  result.totals.reserve(static_cast<size_t>(updates));
  for (std::int64_t k = 0; k < updates; ++k)
    result.totals.push_back(trainer.update(corpus, metrics).total);
  result.mma3 = trainer.training_mma3(corpus);
  if (!holdout.empty()) {
    result.domain_holdout_accuracy = trainer.domain_accuracy(holdout);
  }
  return result;
}

}  // namespace rada
