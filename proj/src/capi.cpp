#include "rada/rada.h"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "core/data_pipeline.hpp"
#include "core/errors.hpp"
#include "core/image.hpp"
#include "core/matching.hpp"
#include "core/training.hpp"

namespace {

thread_local std::string g_last_error;

rada_status status_of(rada::ErrorCode code) {
  switch (code) {
    case rada::ErrorCode::invalid_argument:
      return RADA_ERR_INVALID_ARGUMENT;
    case rada::ErrorCode::io:
      return RADA_ERR_IO;
    case rada::ErrorCode::numeric:
      return RADA_ERR_NUMERIC;
    case rada::ErrorCode::state:
      return RADA_ERR_STATE;
  }
  return RADA_ERR_UNKNOWN;
}

template <typename Fn>
rada_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return RADA_OK;
  } catch (const rada::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RADA_ERR_UNKNOWN;
  } catch (...) {
    g_last_error = "unknown failure";
    return RADA_ERR_UNKNOWN;
  }
}

void require(bool ok, const char* msg) {
  if (!ok) throw rada::Error(rada::ErrorCode::invalid_argument, msg);
}

}  // namespace

struct rada_model {
  rada::Trainer trainer;
  std::vector<rada::TrainSample> corpus;

  explicit rada_model(const rada::TrainConfig& cfg) : trainer(cfg) {}
};

struct rada_features {
  rada::FeatureSet set;
};

struct rada_matches {
  rada::MatchSet set;
};

extern "C" {

const char* rada_version(void) { return "1.0.0"; }

const char* rada_last_error(void) { return g_last_error.c_str(); }

void rada_tune_allocator(void) { rada::ad::tune_allocator(); }

/* ---- model ----------------------------------------------------------- */

rada_status rada_model_create(const char* config_text, rada_model** out) {
  return guarded([&] {
    require(config_text && out, "model_create: null argument");
    *out = new rada_model(rada::parse_train_config(config_text));
  });
}

void rada_model_free(rada_model* model) { delete model; }

rada_status rada_model_load_checkpoint(rada_model* model, const char* path,
                                       int allow_fingerprint_mismatch) {
  return guarded([&] {
    require(model && path, "load_checkpoint: null argument");
    model->trainer.load_checkpoint(path, allow_fingerprint_mismatch != 0);
  });
}

rada_status rada_model_save_checkpoint(const rada_model* model,
                                       const char* path) {
  return guarded([&] {
    require(model && path, "save_checkpoint: null argument");
    model->trainer.save_checkpoint(path);
  });
}

rada_status rada_model_step(const rada_model* model, int64_t* out) {
  return guarded([&] {
    require(model && out, "model_step: null argument");
    *out = model->trainer.step();
  });
}

/* ---- features --------------------------------------------------------- */

rada_status rada_model_extract(const rada_model* model,
                               const char* image_path, int top_k,
                               int use_booster, rada_features** out) {
  return guarded([&] {
    require(model && image_path && out, "extract: null argument");
    const rada::Image image = rada::read_image(image_path);
    auto result = std::make_unique<rada_features>();
    result->set =
        model->trainer.model().extract(image, top_k, use_booster != 0);
    *out = result.release();
  });
}

rada_status rada_features_read(const char* path, rada_features** out) {
  return guarded([&] {
    require(path && out, "features_read: null argument");
    auto result = std::make_unique<rada_features>();
    result->set = rada::read_features(path);
    *out = result.release();
  });
}

rada_status rada_features_write(const rada_features* features,
                                const char* path) {
  return guarded([&] {
    require(features && path, "features_write: null argument");
    rada::write_features(features->set, path);
  });
}

int rada_features_count(const rada_features* features) {
  return features ? features->set.count() : 0;
}

int rada_features_dim(const rada_features* features) {
  return features ? features->set.dim : 0;
}

rada_status rada_features_get(const rada_features* features, int index,
                              double* u, double* v, double* score,
                              double* descriptor) {
  return guarded([&] {
    require(features, "features_get: null handle");
    require(index >= 0 && index < features->set.count(),
            "features_get: index out of range");
    const rada::Keypoint& k =
        features->set.keypoints[static_cast<size_t>(index)];
    if (u) *u = k.u;
    if (v) *v = k.v;
    if (score) *score = k.score;
    if (descriptor)
      for (int d = 0; d < features->set.dim; ++d)
        descriptor[d] = features->set.row(index)[d];
  });
}

void rada_features_free(rada_features* features) { delete features; }

/* ---- matching --------------------------------------------------------- */

rada_status rada_match(const rada_features* a, const rada_features* b,
                       const char* test, double threshold,
                       rada_matches** out) {
  return guarded([&] {
    require(a && b && test && out, "match: null argument");
    const std::string kind(test);
    rada::MatchTest match_test;
    if (kind == "none") {
      match_test = rada::MatchTest::none();
    } else if (kind == "ratio") {
      match_test = threshold > 0 ? rada::MatchTest::ratio(threshold)
                                 : rada::MatchTest::ratio();
    } else if (kind == "distance") {
      match_test = threshold > 0 ? rada::MatchTest::distance(threshold)
                                 : rada::MatchTest::distance();
    } else {
      require(false, "match: test must be none, ratio, or distance");
    }
    auto result = std::make_unique<rada_matches>();
    result->set = rada::match_features(a->set, b->set, match_test);
    *out = result.release();
  });
}

int rada_matches_count(const rada_matches* matches) {
  return matches ? static_cast<int>(matches->set.matches.size()) : 0;
}

rada_status rada_matches_get(const rada_matches* matches, int index,
                             int* index_a, int* index_b, double* similarity) {
  return guarded([&] {
    require(matches, "matches_get: null handle");
    require(index >= 0 &&
                index < static_cast<int>(matches->set.matches.size()),
            "matches_get: index out of range");
    const rada::Match& m = matches->set.matches[static_cast<size_t>(index)];
    if (index_a) *index_a = m.index_a;
    if (index_b) *index_b = m.index_b;
    if (similarity) *similarity = m.similarity;
  });
}

rada_status rada_matches_read(const char* path, rada_matches** out) {
  return guarded([&] {
    require(path && out, "matches_read: null argument");
    std::ifstream in(path);
    if (!in)
      throw rada::Error(rada::ErrorCode::io,
                        std::string("match file: cannot open ") + path);
    std::string header;
    int version = 0;
    in >> header >> version;
    if (header != "rada-matches" || version != 1)
      throw rada::Error(rada::ErrorCode::io,
                        std::string("match file: bad header in ") + path);
    size_t count = 0;
    in >> count;
    auto result = std::make_unique<rada_matches>();
    result->set.matches.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      rada::Match m;
      in >> m.index_a >> m.index_b >> m.similarity;
      if (!in)
        throw rada::Error(rada::ErrorCode::io,
                          std::string("match file: truncated ") + path);
      result->set.matches.push_back(m);
    }
    *out = result.release();
  });
}

rada_status rada_matches_write(const rada_matches* matches,
                               const char* path) {
  return guarded([&] {
    require(matches && path, "matches_write: null argument");
    std::ofstream out(path);
    if (!out)
      throw rada::Error(rada::ErrorCode::io,
                        std::string("match file: cannot write ") + path);
    out << "rada-matches 1\n" << matches->set.matches.size() << "\n";
    out.precision(17);
    for (const rada::Match& m : matches->set.matches)
      out << m.index_a << " " << m.index_b << " " << m.similarity << "\n";
    if (!out)
      throw rada::Error(rada::ErrorCode::io,
                        std::string("match file: write failed ") + path);
  });
}

void rada_matches_free(rada_matches* matches) { delete matches; }

/* ---- evaluation ------------------------------------------------------- */

rada_status rada_mma(const rada_matches* matches, const rada_features* a,
                     const rada_features* b, const char* warp_path,
                     double accuracy[10], int* num_matches) {
  return guarded([&] {
    require(matches && a && b && warp_path && accuracy, "mma: null argument");
    const rada::WarpSpec spec = rada::read_warp_file(warp_path);
    const rada::MmaCurve curve =
        rada::mma_curve(matches->set, a->set, b->set, spec);
    for (int t = 0; t < 10; ++t) accuracy[t] = curve.accuracy[t];
    if (num_matches) *num_matches = curve.num_matches;
  });
}

rada_status rada_visualize(const char* image_a_path, const char* image_b_path,
                           const rada_features* a, const rada_features* b,
                           const rada_matches* matches, const char* warp_path,
                           double threshold, const char* out_path) {
  return guarded([&] {
    require(image_a_path && image_b_path && a && b && matches && out_path,
            "visualize: null argument");
    const rada::Image image_a = rada::read_image(image_a_path);
    const rada::Image image_b = rada::read_image(image_b_path);
    std::optional<rada::WarpSpec> spec;
    if (warp_path) spec = rada::read_warp_file(warp_path);
    const auto lines = rada::match_lines(
        matches->set, a->set, b->set, spec ? &*spec : nullptr,
        threshold > 0 ? threshold : 5.0);
    rada::write_png(rada::render_matches(image_a, image_b, lines), out_path);
  });
}

/* ---- data ------------------------------------------------------------- */

rada_status rada_synth_dataset(const char* out_dir, int count, uint64_t seed,
                               int crop) {
  return guarded([&] {
    require(out_dir, "synth_dataset: null out_dir");
    require(count > 0, "synth_dataset: count must be positive");
    require(crop > 0 && crop % 32 == 0,
            "synth_dataset: crop must be a positive multiple of 32");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const rada::Image base =
        rada::synth_base_image(3 * crop, 3 * crop, seed);
    rada::SynthPairConfig cfg;
    cfg.crop = crop;
    std::ofstream index(fs::path(out_dir) / "pairs.txt");
    if (!index)
      throw rada::Error(rada::ErrorCode::io,
                        std::string("synth_dataset: cannot write index in ") +
                            out_dir);
    std::uint64_t draw = seed;
    for (int i = 0; i < count; ++i) {
      std::optional<rada::TrainSample> sample;
      while (!sample) sample = rada::synth_pair(base, ++draw, cfg);
      char name[32];
      std::snprintf(name, sizeof(name), "pair_%04d", i);
      const std::string stem = (fs::path(out_dir) / name).string();
      rada::write_png(sample->image_a, stem + "_a.png");
      rada::write_png(sample->image_b, stem + "_b.png");
      rada::write_warp_file(sample->spec, stem + ".warp");
      index << name << "_a.png " << name << "_b.png " << name << ".warp\n";
    }
  });
}

/* ---- training --------------------------------------------------------- */

rada_status rada_model_set_corpus_synthetic(rada_model* model, int pairs,
                                            uint64_t seed) {
  return guarded([&] {
    require(model, "set_corpus_synthetic: null model");
    require(pairs > 0, "set_corpus_synthetic: pairs must be positive");
    const int crop = model->trainer.config().crop_size;
    const rada::Image base =
        rada::synth_base_image(3 * crop, 3 * crop, seed);
    rada::SynthPairConfig cfg;
    cfg.crop = crop;
    std::vector<rada::TrainSample> corpus;
    corpus.reserve(static_cast<size_t>(pairs));
    std::uint64_t draw = seed;
    while (corpus.size() < static_cast<size_t>(pairs)) {
      auto sample = rada::synth_pair(base, ++draw, cfg);
      if (sample) corpus.push_back(std::move(*sample));
    }
    model->corpus = std::move(corpus);
  });
}

rada_status rada_model_set_corpus_manifest(rada_model* model,
                                           const char* manifest_path) {
  return guarded([&] {
    require(model && manifest_path, "set_corpus_manifest: null argument");
    std::vector<rada::TrainSample> corpus =
        rada::load_external_pairs(manifest_path, &std::cerr);
    if (corpus.empty())
      throw rada::Error(rada::ErrorCode::invalid_argument,
                        std::string("manifest yielded no usable pairs: ") +
                            manifest_path);
    model->corpus = std::move(corpus);
  });
}

rada_status rada_model_corpus_size(const rada_model* model, int* out) {
  return guarded([&] {
    require(model && out, "corpus_size: null argument");
    *out = static_cast<int>(model->corpus.size());
  });
}

rada_status rada_model_train(rada_model* model, int64_t updates,
                             int emit_metrics) {
  return guarded([&] {
    require(model, "train: null model");
    require(!model->corpus.empty(), "train: no corpus attached");
    model->trainer.run(model->corpus, updates,
                       emit_metrics ? &std::cout : nullptr);
  });
}

rada_status rada_model_corpus_mma3(const rada_model* model, double* out) {
  return guarded([&] {
    require(model && out, "corpus_mma3: null argument");
    require(!model->corpus.empty(), "corpus_mma3: no corpus attached");
    *out = model->trainer.training_mma3(model->corpus);
  });
}

rada_status rada_model_corpus_domain_accuracy(const rada_model* model,
                                              double* out) {
  return guarded([&] {
    require(model && out, "corpus_domain_accuracy: null argument");
    require(!model->corpus.empty(),
            "corpus_domain_accuracy: no corpus attached");
    *out = model->trainer.domain_accuracy(model->corpus);
  });
}

} /* extern "C" */
