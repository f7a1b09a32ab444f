#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "core/checkpoint.hpp"
#include "core/data_pipeline.hpp"
#include "core/errors.hpp"
#include "core/training.hpp"

using namespace rada;

namespace {

std::string tmp_path(const std::string& name) {
  return "/tmp/rada_train_" + name;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.crop_size = 32;
  cfg.descriptor_dim = 8;
  cfg.booster_layers = 1;
  cfg.top_k = 32;
  cfg.score_threshold = 0.1;
  cfg.batch_size = 1;
  cfg.accumulation_batches = 2;
  cfg.warmup_steps = 10;
  cfg.learning_rate_peak = 1e-3;
  cfg.ap_bins = 5;
  cfg.seed = 3;
  return cfg;
}

const std::vector<TrainSample>& small_corpus() {
  static const std::vector<TrainSample> corpus = [] {
    const Image base = synth_base_image(96, 96, 77);
    SynthPairConfig cfg;
    cfg.crop = 32;
    std::vector<TrainSample> out;
    std::uint64_t seed = 500;
    while (out.size() < 5) {
      auto sample = synth_pair(base, ++seed, cfg);
      if (sample) out.push_back(std::move(*sample));
    }
    return out;
  }();
  return corpus;
}

std::vector<std::vector<double>> param_snapshot(const Trainer& t) {
  std::vector<std::vector<double>> out;
  for (const auto& name : t.model().params().names()) {
    const Var p = t.model().params().get(name);
    out.emplace_back(p->v(), p->v() + p->numel());
  }
  return out;
}

std::vector<std::vector<double>> grad_snapshot(const Trainer& t) {
  std::vector<std::vector<double>> out;
  for (const auto& name : t.model().params().names()) {
    const Var p = t.model().params().get(name);
    out.emplace_back(p->g(), p->g() + p->numel());
  }
  return out;
}

int count_equal(const std::vector<std::vector<double>>& a,
                const std::vector<std::vector<double>>& b, bool& all_equal) {
  all_equal = a.size() == b.size();
  int total = 0;
  for (size_t i = 0; i < a.size() && all_equal; ++i) {
    all_equal = a[i].size() == b[i].size();
    for (size_t j = 0; j < a[i].size() && all_equal; ++j) {
      all_equal = a[i][j] == b[i][j];
      ++total;
    }
  }
  return total;
}

}  // namespace

TEST_CASE("learning rate warms up linearly then stays at the peak") {
  TrainConfig cfg;  // peak 3e-3, warmup 500
  CHECK(lr_schedule(0, cfg) == 0.0);
  CHECK(lr_schedule(250, cfg) == 1.5e-3);
  CHECK(lr_schedule(500, cfg) == 3e-3);
  CHECK(lr_schedule(501, cfg) == 3e-3);
  CHECK(lr_schedule(10000, cfg) == 3e-3);
  CHECK(lr_schedule(499, cfg) ==
        doctest::Approx(3e-3 * 499.0 / 500.0).epsilon(1e-15));
  for (int k = 1; k <= 600; ++k)
    CHECK(lr_schedule(k, cfg) >= lr_schedule(k - 1, cfg));
  CHECK_THROWS_AS(lr_schedule(-1, cfg), Error);
}

TEST_CASE("config text parses, serializes, and round-trips") {
  const TrainConfig defaults = parse_train_config("");
  CHECK(defaults.learning_rate_peak == 3e-3);
  CHECK(defaults.warmup_steps == 500);
  CHECK(defaults.batch_size == 2);
  CHECK(defaults.accumulation_batches == 16);
  CHECK(defaults.loss_weights.da == 2.0);
  CHECK(defaults.loss_weights.des == 5.0);
  CHECK(defaults.t_des == 0.1);
  CHECK(defaults.use_booster);
  CHECK(defaults.use_domain_adaptation);

  const TrainConfig parsed = parse_train_config(
      "# training setup\n"
      "learning_rate_peak = 0.001\n"
      "seed = 42\n"
      "\n"
      "use_booster = false\n"
      "weight_des = 2.5  # inline note\n"
      "crop_size = 64\n");
  CHECK(parsed.learning_rate_peak == 0.001);
  CHECK(parsed.seed == 42);
  CHECK_FALSE(parsed.use_booster);
  CHECK(parsed.loss_weights.des == 2.5);
  CHECK(parsed.crop_size == 64);
  CHECK(parsed.warmup_steps == 500);  // untouched keys keep defaults

  const std::string text = serialize_train_config(parsed);
  const TrainConfig reparsed = parse_train_config(text);
  CHECK(serialize_train_config(reparsed) == text);
  CHECK(reparsed.seed == 42);
  CHECK(reparsed.loss_weights.des == 2.5);
}

TEST_CASE("config parsing rejects malformed input") {
  CHECK_THROWS_AS(parse_train_config("not_a_key = 1\n"), Error);
  CHECK_THROWS_AS(parse_train_config("warmup_steps = abc\n"), Error);
  CHECK_THROWS_AS(parse_train_config("warmup_steps = 5x\n"), Error);
  CHECK_THROWS_AS(parse_train_config("use_booster = yes\n"), Error);
  CHECK_THROWS_AS(parse_train_config("learning_rate_peak\n"), Error);
  CHECK_THROWS_AS(parse_train_config("t_des = 0\n"), Error);
  CHECK_THROWS_AS(parse_train_config("crop_size = 50\n"), Error);
  CHECK_THROWS_AS(parse_train_config("weight_da = -1\n"), Error);
  CHECK_THROWS_AS(parse_train_config("batch_size = 0\n"), Error);
  CHECK_THROWS_AS(parse_train_config("score_threshold = 1.5\n"), Error);
  CHECK_THROWS_AS(parse_train_config("learning_rate_peak = nan\n"), Error);
  CHECK_THROWS_AS(parse_train_config_file("/nonexistent/none.cfg"), Error);
}

TEST_CASE("config fingerprint is stable and sensitive") {
  const TrainConfig a = parse_train_config("seed = 7\n");
  const TrainConfig b = parse_train_config("seed = 7\n");
  CHECK(config_fingerprint(a) == config_fingerprint(b));
  const TrainConfig c = parse_train_config("seed = 8\n");
  CHECK(config_fingerprint(a) != config_fingerprint(c));
  const TrainConfig d = parse_train_config("use_booster = false\n");
  CHECK(config_fingerprint(a) != config_fingerprint(d));
}

TEST_CASE("gradient accumulation matches a single mean-loss graph") {
  const auto& corpus = small_corpus();
  const int batches = 4;
  Trainer trainer(small_config());
  std::vector<const TrainSample*> batch(1);

  // sequential accumulation, the way the optimizer sees gradients
  trainer.model().params().zero_grads();
  for (int b = 0; b < batches; ++b) {
    batch[0] = &corpus[b % corpus.size()];
    ad::backprop(trainer.batch_loss(batch).total);
  }
  const auto accumulated = grad_snapshot(trainer);

  // one graph holding the mean of the same batch losses
  trainer.model().params().zero_grads();
  Var sum;
  for (int b = 0; b < batches; ++b) {
    batch[0] = &corpus[b % corpus.size()];
    const Var total = trainer.batch_loss(batch).total;
    sum = sum ? ad::add(sum, total) : total;
  }
  ad::backprop(ad::mul_scalar(sum, 1.0 / batches));
  const auto mean_graph = grad_snapshot(trainer);
  trainer.model().params().zero_grads();

  REQUIRE(accumulated.size() == mean_graph.size());
  double worst = 0;
  for (size_t i = 0; i < accumulated.size(); ++i) {
    REQUIRE(accumulated[i].size() == mean_graph[i].size());
    for (size_t j = 0; j < accumulated[i].size(); ++j)
      worst = std::max(worst, std::abs(accumulated[i][j] / batches -
                                       mean_graph[i][j]));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("the first optimizer update applies the bias-corrected moment step") {
  const auto& corpus = small_corpus();
  const TrainConfig cfg = small_config();
  Trainer trainer(cfg);
  const auto before = param_snapshot(trainer);

  // reproduce the gradients of update 1 on the same parameters
  trainer.model().params().zero_grads();
  std::vector<const TrainSample*> batch(1);
  for (int b = 0; b < cfg.accumulation_batches; ++b) {
    batch[0] = &corpus[b % corpus.size()];
    ad::backprop(trainer.batch_loss(batch).total);
  }
  const auto grads = grad_snapshot(trainer);
  trainer.model().params().zero_grads();

  const StepReport report = trainer.update(corpus);
  CHECK(report.step == 1);
  CHECK(trainer.step() == 1);
  const double lr = lr_schedule(1, cfg);
  CHECK(report.learning_rate == lr);
  const auto after = param_snapshot(trainer);

  // with fresh moments the first step reduces to lr * g / (|g| + eps)
  double worst = 0;
  for (size_t i = 0; i < before.size(); ++i)
    for (size_t j = 0; j < before[i].size(); ++j) {
      const double g = grads[i][j] / cfg.accumulation_batches;
      const double expected = -lr * g / (std::abs(g) + 1e-8);
      worst = std::max(worst,
                       std::abs(after[i][j] - before[i][j] - expected));
    }
  CHECK(worst <= 1e-12);
}

TEST_CASE("each update consumes the next accumulation window round-robin") {
  const auto& corpus = small_corpus();
  TrainConfig cfg = small_config();
  cfg.accumulation_batches = 2;
  cfg.batch_size = 2;
  Trainer trainer(cfg);
  Trainer twin(cfg);

  for (int step = 0; step < 3; ++step) {
    // expected total: mean over the window's batches on identical params
    double expected = 0;
    for (int b = 0; b < cfg.accumulation_batches; ++b) {
      std::vector<const TrainSample*> batch(cfg.batch_size);
      for (int s = 0; s < cfg.batch_size; ++s) {
        const auto index =
            ((static_cast<std::int64_t>(step) * cfg.accumulation_batches + b) *
                 cfg.batch_size +
             s) %
            static_cast<std::int64_t>(corpus.size());
        batch[s] = &corpus[static_cast<size_t>(index)];
      }
      expected += twin.batch_loss(batch).total->v()[0];
    }
    expected /= cfg.accumulation_batches;

    const StepReport report = trainer.update(corpus);
    CHECK(report.step == step + 1);
    CHECK(report.total == doctest::Approx(expected).epsilon(1e-12));
    twin.update(corpus);  // keep the twin in lockstep
  }
}

TEST_CASE("training is deterministic across identical runs") {
  const auto& corpus = small_corpus();
  Trainer a(small_config());
  Trainer b(small_config());
  bool equal = false;
  count_equal(param_snapshot(a), param_snapshot(b), equal);
  CHECK(equal);  // identical initialization

  std::vector<double> totals_a, totals_b;
  for (int k = 0; k < 3; ++k) {
    totals_a.push_back(a.update(corpus).total);
    totals_b.push_back(b.update(corpus).total);
  }
  CHECK(totals_a == totals_b);
  const int compared = count_equal(param_snapshot(a), param_snapshot(b), equal);
  CHECK(equal);
  CHECK(compared > 1000);
}

TEST_CASE("checkpoints restore parameters, moments, and position bitwise") {
  const auto& corpus = small_corpus();
  const TrainConfig cfg = small_config();
  const std::string path = tmp_path("resume.ckpt");

  // reference: four updates straight through
  Trainer reference(cfg);
  reference.run(corpus, 4);

  // same run split in half by a save/load cycle
  Trainer first(cfg);
  first.run(corpus, 2);
  first.save_checkpoint(path);
  Trainer second(cfg);
  second.run(corpus, 1);  // drift the fresh state to prove the load resets it
  second.load_checkpoint(path);
  CHECK(second.step() == 2);
  second.run(corpus, 2);

  bool equal = false;
  const int compared =
      count_equal(param_snapshot(reference), param_snapshot(second), equal);
  CHECK(equal);
  CHECK(compared > 1000);
  CHECK(reference.step() == second.step());
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loads refuse a different training configuration") {
  const TrainConfig cfg = small_config();
  const std::string path = tmp_path("fingerprint.ckpt");
  Trainer saved(cfg);
  saved.save_checkpoint(path);

  TrainConfig other = cfg;
  other.learning_rate_peak = 2e-3;
  Trainer loader(other);
  CHECK_THROWS_AS(loader.load_checkpoint(path), Error);
  try {
    loader.load_checkpoint(path);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::state);
  }
  loader.load_checkpoint(path, /*allow_fingerprint_mismatch=*/true);
  CHECK(loader.step() == 0);

  // same fingerprint but incompatible shapes must still fail
  TrainConfig wide = cfg;
  wide.descriptor_dim = 16;
  Trainer incompatible(wide);
  CHECK_THROWS_AS(incompatible.load_checkpoint(path, true), Error);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint files reject corruption") {
  const std::string path = tmp_path("corrupt.ckpt");
  Trainer trainer(small_config());
  trainer.save_checkpoint(path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();

  auto write_raw = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  write_raw(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_checkpoint(path), Error);
  write_raw(bytes + "tail");
  CHECK_THROWS_AS(read_checkpoint(path), Error);
  std::string wrong = bytes;
  wrong[0] = 'X';
  write_raw(wrong);
  CHECK_THROWS_AS(read_checkpoint(path), Error);
  CHECK_THROWS_AS(read_checkpoint("/nonexistent/none.ckpt"), Error);
  std::remove(path.c_str());
}

TEST_CASE("metric lines carry the step and every loss component") {
  StepReport report;
  report.step = 12;
  report.total = 1.5;
  report.components = {{"da", 0.25}, {"tr", 0.5}, {"det", 0.125},
                       {"des", 1.0}, {"cp", 0.0625}};
  std::ostringstream out;
  log_metrics(out, report);
  std::istringstream lines(out.str());
  std::string line;
  std::vector<std::string> names;
  while (std::getline(lines, line)) {
    REQUIRE(line.rfind("step=12 name=", 0) == 0);
    const auto value_at = line.find(" value=");
    REQUIRE(value_at != std::string::npos);
    names.push_back(line.substr(13, value_at - 13));
    const double value = std::stod(line.substr(value_at + 7));
    CHECK(std::isfinite(value));
  }
  CHECK(names == std::vector<std::string>{"total", "da", "tr", "det", "des",
                                          "cp"});

  // the trainer emits the same shape per update
  const auto& corpus = small_corpus();
  Trainer trainer(small_config());
  std::ostringstream metrics;
  trainer.update(corpus, &metrics);
  std::istringstream trainer_lines(metrics.str());
  int count = 0;
  while (std::getline(trainer_lines, line)) {
    CHECK(line.rfind("step=1 name=", 0) == 0);
    ++count;
  }
  CHECK(count == 6);
}

TEST_CASE("a keypoint-free forward pass still trains the domain branch") {
  const auto& corpus = small_corpus();
  TrainConfig cfg = small_config();
  cfg.score_threshold = 0.999999;  // nothing survives detection at init
  Trainer trainer(cfg);
  const StepReport report = trainer.update(corpus);
  CHECK(std::isfinite(report.total));
  CHECK(report.components.at("det") == 0.0);
  CHECK(report.components.at("des") == 0.0);
  CHECK(report.components.at("cp") == 0.0);
  CHECK(report.components.at("tr") == 0.0);
  CHECK(report.components.at("da") > 0.0);
}

TEST_CASE("a non-finite loss aborts and names the failing update") {
  const auto& corpus = small_corpus();
  Trainer trainer(small_config());
  for (const auto& name : trainer.model().params().names())
    if (name.rfind("domain", 0) == 0) {
      trainer.model().params().get(name)->v()[0] =
          std::numeric_limits<double>::quiet_NaN();
      break;
    }
  try {
    trainer.update(corpus);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numeric);
    CHECK(std::string(e.what()).find("update 1") != std::string::npos);
    CHECK(std::string(e.what()).find("da") != std::string::npos);
  }
}

TEST_CASE("switches drop their loss terms") {
  const auto& corpus = small_corpus();
  TrainConfig cfg = small_config();
  cfg.use_booster = false;
  cfg.use_domain_adaptation = false;
  Trainer trainer(cfg);
  const StepReport report = trainer.update(corpus);
  CHECK(report.components.at("da") == 0.0);
  CHECK(report.components.at("tr") == 0.0);
  CHECK(std::isfinite(report.total));
}

TEST_CASE("domain accuracy and matching quality are well-defined") {
  const auto& corpus = small_corpus();
  Trainer trainer(small_config());
  const double acc = trainer.domain_accuracy(corpus);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(acc == trainer.domain_accuracy(corpus));  // deterministic

  // identical images under an identity warp must match themselves
  TrainSample identity;
  identity.image_a = corpus[0].image_a;
  identity.image_b = corpus[0].image_a;
  identity.spec = WarpSpec::homography(Eigen::Matrix3d::Identity(),
                                       identity.image_a.width,
                                       identity.image_a.height,
                                       identity.image_a.width,
                                       identity.image_a.height);
  const double mma = trainer.training_mma3({identity});
  CHECK(mma == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("trainer rejects empty work") {
  Trainer trainer(small_config());
  CHECK_THROWS_AS(trainer.update({}), Error);
  CHECK_THROWS_AS(trainer.domain_accuracy({}), Error);
  CHECK_THROWS_AS(trainer.training_mma3({}), Error);
  CHECK_THROWS_AS(trainer.batch_loss({}), Error);
}
