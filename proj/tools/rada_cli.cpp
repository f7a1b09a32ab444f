// Command-line surface over the C API: feature extraction, matching,
// accuracy evaluation, visualization, synthetic data, and training.
#include <CLI11.hpp>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "rada/rada.h"

namespace {

int fail(const char* what) {
  std::fprintf(stderr, "error: %s: %s\n", what, rada_last_error());
  return 1;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct ModelOptions {
  std::string config_path;
  std::string checkpoint;
  bool allow_config_mismatch = false;
};

void add_model_options(CLI::App* cmd, ModelOptions& opts) {
  cmd->add_option("--config", opts.config_path,
                  "training-configuration file (key = value lines)");
  cmd->add_option("--checkpoint", opts.checkpoint,
                  "checkpoint to load parameters from");
  cmd->add_flag("--allow-config-mismatch", opts.allow_config_mismatch,
                "load a checkpoint saved under a different configuration");
}

// builds the model and loads the checkpoint when one was given
rada_model* open_model(const ModelOptions& opts, int& exit_code) {
  const std::string config_text =
      opts.config_path.empty() ? "" : read_text_file(opts.config_path);
  rada_model* model = nullptr;
  if (rada_model_create(config_text.c_str(), &model) != RADA_OK) {
    exit_code = fail("configuration");
    return nullptr;
  }
  if (!opts.checkpoint.empty() &&
      rada_model_load_checkpoint(model, opts.checkpoint.c_str(),
                                 opts.allow_config_mismatch) != RADA_OK) {
    rada_model_free(model);
    exit_code = fail("checkpoint");
    return nullptr;
  }
  return model;
}

int run_extract(const ModelOptions& model_opts, const std::string& image,
                const std::string& output, int top_k, bool no_booster) {
  int exit_code = 0;
  rada_model* model = open_model(model_opts, exit_code);
  if (!model) return exit_code;
  rada_features* features = nullptr;
  if (rada_model_extract(model, image.c_str(), top_k, no_booster ? 0 : 1,
                         &features) != RADA_OK) {
    rada_model_free(model);
    return fail("extract");
  }
  const rada_status wrote = rada_features_write(features, output.c_str());
  std::printf("extracted %d keypoints (dim %d) -> %s\n",
              rada_features_count(features), rada_features_dim(features),
              output.c_str());
  rada_features_free(features);
  rada_model_free(model);
  return wrote == RADA_OK ? 0 : fail("write features");
}

int run_match(const std::string& path_a, const std::string& path_b,
              const std::string& output, const std::string& test,
              double threshold) {
  rada_features* a = nullptr;
  rada_features* b = nullptr;
  rada_matches* matches = nullptr;
  if (rada_features_read(path_a.c_str(), &a) != RADA_OK)
    return fail("read features A");
  if (rada_features_read(path_b.c_str(), &b) != RADA_OK) {
    rada_features_free(a);
    return fail("read features B");
  }
  int code = 0;
  if (rada_match(a, b, test.c_str(), threshold, &matches) != RADA_OK) {
    code = fail("match");
  } else {
    if (rada_matches_write(matches, output.c_str()) != RADA_OK)
      code = fail("write matches");
    else
      std::printf("%d mutual matches (%d x %d features) -> %s\n",
                  rada_matches_count(matches), rada_features_count(a),
                  rada_features_count(b), output.c_str());
  }
  rada_matches_free(matches);
  rada_features_free(b);
  rada_features_free(a);
  return code;
}

int run_mma(const std::string& matches_path, const std::string& path_a,
            const std::string& path_b, const std::string& warp) {
  rada_features* a = nullptr;
  rada_features* b = nullptr;
  rada_matches* matches = nullptr;
  if (rada_features_read(path_a.c_str(), &a) != RADA_OK)
    return fail("read features A");
  if (rada_features_read(path_b.c_str(), &b) != RADA_OK) {
    rada_features_free(a);
    return fail("read features B");
  }
  int code = 0;
  double accuracy[10] = {0};
  int num_matches = 0;
  if (rada_matches_read(matches_path.c_str(), &matches) != RADA_OK) {
    code = fail("read matches");
  } else if (rada_mma(matches, a, b, warp.c_str(), accuracy, &num_matches) !=
             RADA_OK) {
    code = fail("mma");
  } else {
    std::printf("features A: %d  features B: %d  matches: %d\n",
                rada_features_count(a), rada_features_count(b), num_matches);
    std::printf("threshold_px  accuracy\n");
    for (int t = 1; t <= 10; ++t)
      std::printf("%12d  %.6f\n", t, accuracy[t - 1]);
    std::printf("MMA@3 = %.6f\n", accuracy[2]);
    for (int t = 1; t <= 10; ++t)
      std::printf("name=mma@%d value=%.17g\n", t, accuracy[t - 1]);
    std::printf("name=matches value=%d\n", num_matches);
  }
  rada_matches_free(matches);
  rada_features_free(b);
  rada_features_free(a);
  return code;
}

int run_visualize(const std::string& image_a, const std::string& image_b,
                  const std::string& path_a, const std::string& path_b,
                  const std::string& matches_path, const std::string& warp,
                  double threshold, const std::string& output) {
  rada_features* a = nullptr;
  rada_features* b = nullptr;
  rada_matches* matches = nullptr;
  if (rada_features_read(path_a.c_str(), &a) != RADA_OK)
    return fail("read features A");
  if (rada_features_read(path_b.c_str(), &b) != RADA_OK) {
    rada_features_free(a);
    return fail("read features B");
  }
  int code = 0;
  if (rada_matches_read(matches_path.c_str(), &matches) != RADA_OK) {
    code = fail("read matches");
  } else if (rada_visualize(image_a.c_str(), image_b.c_str(), a, b, matches,
                            warp.empty() ? nullptr : warp.c_str(), threshold,
                            output.c_str()) != RADA_OK) {
    code = fail("visualize");
  } else {
    std::printf("plot with %d match lines -> %s\n",
                rada_matches_count(matches), output.c_str());
  }
  rada_matches_free(matches);
  rada_features_free(b);
  rada_features_free(a);
  return code;
}

int run_synth(const std::string& out_dir, int count, std::uint64_t seed,
              int crop) {
  if (rada_synth_dataset(out_dir.c_str(), count, seed, crop) != RADA_OK)
    return fail("synth-data");
  std::printf("%d synthetic pairs -> %s\n", count, out_dir.c_str());
  return 0;
}

int run_train(const ModelOptions& model_opts, const std::string& manifest,
              int synthetic_pairs, std::uint64_t corpus_seed,
              std::int64_t updates, const std::string& checkpoint_out,
              bool metrics, bool evaluate) {
  int exit_code = 0;
  rada_model* model = open_model(model_opts, exit_code);
  if (!model) return exit_code;
  auto finish = [&](int code) {
    rada_model_free(model);
    return code;
  };

  if (!manifest.empty()) {
    if (rada_model_set_corpus_manifest(model, manifest.c_str()) != RADA_OK)
      return finish(fail("manifest corpus"));
  } else if (rada_model_set_corpus_synthetic(model, synthetic_pairs,
                                             corpus_seed) != RADA_OK) {
    return finish(fail("synthetic corpus"));
  }
  int corpus_size = 0;
  rada_model_corpus_size(model, &corpus_size);
  std::printf("corpus: %d pairs\n", corpus_size);

  if (rada_model_train(model, updates, metrics ? 1 : 0) != RADA_OK)
    return finish(fail("train"));
  std::int64_t step = 0;
  rada_model_step(model, &step);
  std::printf("trained to update %lld\n", static_cast<long long>(step));

  if (!checkpoint_out.empty() &&
      rada_model_save_checkpoint(model, checkpoint_out.c_str()) != RADA_OK)
    return finish(fail("save checkpoint"));
  if (!checkpoint_out.empty())
    std::printf("checkpoint -> %s\n", checkpoint_out.c_str());

  if (evaluate) {
    double mma3 = 0, domain_acc = 0;
    if (rada_model_corpus_mma3(model, &mma3) != RADA_OK)
      return finish(fail("evaluate mma3"));
    if (rada_model_corpus_domain_accuracy(model, &domain_acc) != RADA_OK)
      return finish(fail("evaluate domain accuracy"));
    std::printf("training-pair MMA@3: %.6f  domain accuracy: %.6f\n", mma3,
                domain_acc);
    std::printf("name=train_mma3 value=%.17g\n", mma3);
    std::printf("name=train_domain_accuracy value=%.17g\n", domain_acc);
  }
  return finish(0);
}

}  // namespace

int main(int argc, char** argv) {
  rada_tune_allocator();
  CLI::App app{std::string("trainable local features (") + rada_version() +
               ")"};
  app.require_subcommand(1);

  // extract
  ModelOptions extract_model;
  std::string extract_image, extract_out;
  int top_k = 400;
  bool no_booster = false;
  CLI::App* extract =
      app.add_subcommand("extract", "detect and describe keypoints");
  extract->add_option("image", extract_image, "input image (PNG or PPM)")
      ->required();
  extract->add_option("-o,--output", extract_out, "feature file to write")
      ->required();
  add_model_options(extract, extract_model);
  extract->add_option("--top-k", top_k, "keypoint budget");
  extract->add_flag("--no-booster", no_booster,
                    "write raw descriptors without attention refinement");

  // match
  std::string match_a, match_b, match_out, match_test = "none";
  double match_threshold = 0.0;
  CLI::App* match =
      app.add_subcommand("match", "mutual-nearest-neighbor matching");
  match->add_option("features_a", match_a, "first feature file")->required();
  match->add_option("features_b", match_b, "second feature file")->required();
  match->add_option("-o,--output", match_out, "match file to write")
      ->required();
  match->add_option("--test", match_test, "none, ratio, or distance")
      ->check(CLI::IsMember({"none", "ratio", "distance"}));
  match->add_option("--threshold", match_threshold,
                    "test threshold (0 = default: 0.9 ratio, 0.7 distance)");

  // mma
  std::string mma_matches, mma_a, mma_b, mma_warp;
  CLI::App* mma =
      app.add_subcommand("mma", "matching accuracy against a ground-truth warp");
  mma->add_option("matches", mma_matches, "match file")->required();
  mma->add_option("features_a", mma_a, "first feature file")->required();
  mma->add_option("features_b", mma_b, "second feature file")->required();
  mma->add_option("warp", mma_warp, "ground-truth warp file")->required();

  // visualize
  std::string vis_image_a, vis_image_b, vis_a, vis_b, vis_matches, vis_warp,
      vis_out;
  double vis_threshold = 5.0;
  CLI::App* visualize =
      app.add_subcommand("visualize", "side-by-side match plot");
  visualize->add_option("image_a", vis_image_a, "first image")->required();
  visualize->add_option("image_b", vis_image_b, "second image")->required();
  visualize->add_option("features_a", vis_a, "first feature file")->required();
  visualize->add_option("features_b", vis_b, "second feature file")
      ->required();
  visualize->add_option("matches", vis_matches, "match file")->required();
  visualize->add_option("-o,--output", vis_out, "PNG to write")->required();
  visualize->add_option("--warp", vis_warp,
                        "ground-truth warp file for coloring");
  visualize->add_option("--threshold", vis_threshold,
                        "green/red reprojection boundary in pixels");

  // synth-data
  std::string synth_dir;
  int synth_count = 20, synth_crop = 64;
  std::uint64_t synth_seed = 1;
  CLI::App* synth =
      app.add_subcommand("synth-data", "write synthetic cross-domain pairs");
  synth->add_option("out_dir", synth_dir, "output directory")->required();
  synth->add_option("--count", synth_count, "number of pairs");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--crop", synth_crop, "pair side (multiple of 32)");

  // train
  ModelOptions train_model;
  std::string train_manifest, train_checkpoint_out;
  int train_pairs = 20;
  std::uint64_t train_corpus_seed = 1;
  std::int64_t train_updates = 100;
  bool train_metrics = false, train_evaluate = false;
  CLI::App* train = app.add_subcommand("train", "run optimizer updates");
  add_model_options(train, train_model);
  train->add_option("--manifest", train_manifest,
                    "posed RGB-D manifest (overrides synthetic corpus)");
  train->add_option("--synthetic-pairs", train_pairs,
                    "synthetic corpus size when no manifest is given");
  train->add_option("--corpus-seed", train_corpus_seed,
                    "synthetic corpus seed");
  train->add_option("--updates", train_updates, "optimizer updates to run");
  train->add_option("--checkpoint-out", train_checkpoint_out,
                    "checkpoint to write after training");
  train->add_flag("--metrics", train_metrics,
                  "print step=<k> name=<loss> value=<v> lines");
  train->add_flag("--evaluate", train_evaluate,
                  "report training-pair MMA@3 and domain accuracy at the end");

  CLI11_PARSE(app, argc, argv);

  try {
    if (extract->parsed())
      return run_extract(extract_model, extract_image, extract_out, top_k,
                         no_booster);
    if (match->parsed())
      return run_match(match_a, match_b, match_out, match_test,
                       match_threshold);
    if (mma->parsed()) return run_mma(mma_matches, mma_a, mma_b, mma_warp);
    if (visualize->parsed())
      return run_visualize(vis_image_a, vis_image_b, vis_a, vis_b, vis_matches,
                           vis_warp, vis_threshold, vis_out);
    if (synth->parsed())
      return run_synth(synth_dir, synth_count, synth_seed, synth_crop);
    if (train->parsed())
      return run_train(train_model, train_manifest, train_pairs,
                       train_corpus_seed, train_updates, train_checkpoint_out,
                       train_metrics, train_evaluate);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
