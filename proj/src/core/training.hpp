#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "core/data_pipeline.hpp"
#include "core/model.hpp"
#include "core/supervision.hpp"

namespace rada {

struct TrainConfig {
  double learning_rate_peak = 3e-3;
  int warmup_steps = 500;
  int batch_size = 2;
  int accumulation_batches = 16;
  int max_steps = 2000;
  std::uint64_t seed = 0;
  LossWeights loss_weights;  // da 2, tr 1, det 1, des 5, cp 1
  double t_des = 0.1;
  double lambda_mmd = 0.01;
  int keypoint_radius = 2;
  double th_gt = 5.0;
  // engine plumbing beyond the core hyperparameters
  int crop_size = 480;
  int descriptor_dim = 128;
  int booster_layers = 2;
  int top_k = 400;
  double score_threshold = 0.2;
  double softargmax_temperature = 0.1;
  double reversal_scale = 1.0;
  int ap_bins = 10;
  bool use_booster = true;
  bool use_domain_adaptation = true;
};

// `key = value` lines with '#' comments. Unknown keys and out-of-range
// values are rejected; omitted keys keep their defaults.
TrainConfig parse_train_config(const std::string& text);
TrainConfig parse_train_config_file(const std::string& path);
std::string serialize_train_config(const TrainConfig& cfg);
// FNV-1a over the canonical serialized form
std::uint64_t config_fingerprint(const TrainConfig& cfg);

// Linear warmup from zero to the peak over warmup_steps, constant after;
// the value at step == warmup_steps is exactly the peak.
double lr_schedule(std::int64_t step, const TrainConfig& cfg);

struct StepReport {
  std::int64_t step = 0;  // 1-based optimizer update index
  double learning_rate = 0;
  double total = 0;
  std::map<std::string, double> components;  // da, tr, det, des, cp
};

// one `step=<k> name=<loss> value=<v>` line for the total and each component
void log_metrics(std::ostream& out, const StepReport& report);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  const TrainConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  std::int64_t step() const { return step_; }

  // five-term loss graph over one batch; keypoint terms average over the
  // batch, the domain term pools the whole batch's embeddings
  LossReport batch_loss(const std::vector<const TrainSample*>& batch) const;

  // one optimizer update: accumulation_batches batches drawn round-robin
  // from the corpus, mean-reduced gradients, one adaptive-moment step
  StepReport update(const std::vector<TrainSample>& corpus,
                    std::ostream* metrics = nullptr);
  void run(const std::vector<TrainSample>& corpus, std::int64_t updates,
           std::ostream* metrics = nullptr);

  void save_checkpoint(const std::string& path) const;
  // refuses a config-fingerprint mismatch unless told otherwise
  void load_checkpoint(const std::string& path,
                       bool allow_fingerprint_mismatch = false);

  // held-out domain-classifier accuracy over both images of each sample
  double domain_accuracy(const std::vector<TrainSample>& samples) const;
  // mean mutual-NN MMA@3 across the corpus pairs with current parameters
  double training_mma3(const std::vector<TrainSample>& corpus) const;

 private:
  struct SampleGraphs {
    Var det, des, cp, tr;
    Var embed_a, embed_b;  // empty when the domain branch is off
  };
  SampleGraphs sample_graphs(const TrainSample& sample) const;
  void apply_update();

  TrainConfig cfg_;
  Model model_;
  std::vector<std::vector<double>> adam_m_, adam_v_;  // param order
  std::int64_t step_ = 0;
};

struct SmokeResult {
  double mma3 = 0;
  double domain_holdout_accuracy = 0;
  std::vector<double> totals;  // total loss per optimizer update
};

// Desk-scale end-to-end fit: trains on the tiny corpus for `updates`
// optimizer steps, then scores training-pair matching quality and the
// domain classifier on held-out pairs.
SmokeResult overfit_smoke(const std::vector<TrainSample>& corpus,
                          const std::vector<TrainSample>& holdout,
                          const TrainConfig& cfg, std::int64_t updates,
                          std::ostream* metrics = nullptr);

}  // namespace rada
