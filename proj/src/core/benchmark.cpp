#include "c5cc/benchmark.hpp"

#include <chrono>
#include <sstream>

#include "c5cc/error.hpp"

namespace c5cc {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t histogram_pixels(const RawImage& img, const HistogramConfig& hcfg) {
  std::size_t n = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (auto uv = compute_uv(img.at(x, y))) n += bin_index(*uv, hcfg).has_value();
  return n;
}

}  // namespace

CaptureMeta random_capture_meta(std::mt19937_64& rng) {
  static const double kIso[] = {100, 200, 400, 800, 1600};
  static const double kAperture[] = {1.8, 2.8, 4.0, 5.6, 8.0};
  std::uniform_int_distribution<int> pick(0, 4);
  std::uniform_real_distribution<double> ev(-10.0, -3.0);
  CaptureMeta m;
  m.iso = kIso[pick(rng)];
  m.aperture = kAperture[pick(rng)];
  m.exposure_time = std::exp2(ev(rng));
  return m;
}

SyntheticCapture synthetic_capture(const SyntheticCamera& cam, const SceneSpec& spec, const HistogramConfig& hcfg,
                                   std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    const auto scene = random_scene(spec, rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, cam.illuminants.size() - 1)(rng);
    SyntheticCapture c;
    c.illuminant = cam.illuminants[k];
    c.temperature = cam.temperatures[k];
    c.image = render_raw(scene, spec, cam, c.illuminant, c.temperature);
    c.meta = random_capture_meta(rng);
    if (2 * histogram_pixels(c.image, hcfg) >= c.image.pixel_count()) return c;
  }
  throw NumericalError("synthetic camera clips most scenes");
}

BenchmarkConfig::BenchmarkConfig() {
  train.arch.n = 32;
  train.arch.m = 9;
  train.arch.depth = 3;
  train.arch.base_channels = 8;
  train.arch.convs_per_block = 1;
  train.epochs = 60;
  train.lr = 1e-3;
  // The Sobel penalty at the default multipliers swamps this small n = 32
  // model; zero smoothness is one of the ablation settings.
  train.lambda_f = train.lambda_b = train.lambda_g = 0.0;
  augment.crop = true;
}

BenchmarkResult run_synthetic_benchmark(const BenchmarkConfig& cfg, const BenchmarkLog& log) {
  if (cfg.train_cameras < 2 || cfg.originals_per_camera < 2 || cfg.test_images < 2 || cfg.augmented_images < 0) {
    throw UsageError("benchmark needs at least two training cameras with two images each");
  }
  cfg.train.validate();
  auto say = [&log](const std::string& s) {
    if (log) log(s);
  };
  const HistogramConfig hcfg = cfg.train.histogram();
  std::seed_seq seq{cfg.seed, std::uint64_t{0xbe7c}};
  std::mt19937_64 rng(seq);
  BenchmarkResult result;
  auto t0 = std::chrono::steady_clock::now();

  std::vector<SyntheticCamera> cams;
  for (int i = 0; i <= cfg.train_cameras; ++i) {
    SyntheticCameraSpec spec;
    spec.id = i < cfg.train_cameras ? "train" + std::to_string(i) : "heldout";
    spec.perturbation = cfg.perturbation;
    spec.off_locus = cfg.off_locus;
    cams.push_back(make_synthetic_camera(spec, rng));
  }

  std::vector<std::vector<SyntheticCapture>> originals(cfg.train_cameras);
  std::vector<LabeledSample> train_all;
  for (int c = 0; c < cfg.train_cameras; ++c)
    for (int i = 0; i < cfg.originals_per_camera; ++i) {
      originals[c].push_back(synthetic_capture(cams[c], cfg.scene, hcfg, rng));
      const SyntheticCapture& cap = originals[c].back();
      train_all.push_back({std::make_shared<ChromaHistogram>(assemble_feature_stack(cap.image, hcfg)), cap.illuminant,
                           cams[c].profile.id});
    }

  // Camera-to-camera augmentation among the training cameras.
  std::vector<CaptureVector> raw_features;
  std::vector<std::vector<double>> source_q(cfg.train_cameras);
  for (int c = 0; c < cfg.train_cameras; ++c)
    for (const SyntheticCapture& cap : originals[c]) {
      const double q = estimate_cct(cap.illuminant, cams[c].profile).q;
      source_q[c].push_back(q);
      raw_features.push_back(raw_capture_feature(cap.meta, q));
    }
  const FeatureNorms norms = FeatureNorms::from(raw_features);
  for (int t = 0; t < cfg.train_cameras; ++t) {
    std::vector<Rgb> ills;
    std::vector<CaptureMeta> metas;
    for (const SyntheticCapture& cap : originals[t]) {
      ills.push_back(cap.illuminant);
      metas.push_back(cap.meta);
    }
    const TargetCamera target = TargetCamera::build(cams[t].profile, ills, metas);
    std::vector<std::pair<int, int>> sources;
    std::vector<double> temps;
    for (int c = 0; c < cfg.train_cameras; ++c)
      if (c != t)
        for (int i = 0; i < cfg.originals_per_camera; ++i) {
          sources.emplace_back(c, i);
          temps.push_back(source_q[c][i]);
        }
    const int count = cfg.augmented_images / cfg.train_cameras + (t < cfg.augmented_images % cfg.train_cameras);
    for (int pick : stratified_sources(temps, count, rng)) {
      const auto [c, i] = sources[pick];
      const SyntheticCapture& cap = originals[c][i];
      const AugmentSource src{&cap.image, cap.illuminant, cap.meta, &cams[c].profile};
      // Mappings that push most pixels out of the target gamut are redrawn.
      for (int attempt = 0; attempt < 20; ++attempt) {
        const AugmentResult aug = augment_image(src, target, norms, cfg.augment, rng);
        if (2 * histogram_pixels(aug.image, hcfg) < aug.image.pixel_count()) continue;
        train_all.push_back({std::make_shared<ChromaHistogram>(assemble_feature_stack(aug.image, hcfg)),
                             aug.illuminant, cams[t].profile.id});
        break;
      }
    }
  }
  result.train_images = train_all.size();

  std::vector<EvalSample> test;
  for (int i = 0; i < cfg.test_images; ++i) {
    const SyntheticCapture cap = synthetic_capture(cams.back(), cfg.scene, hcfg, rng);
    test.push_back(make_eval_sample(cap.image, cap.illuminant, cams.back().profile.id, hcfg));
  }
  result.data_seconds = seconds_since(t0);
  {
    std::ostringstream os;
    os << "data: " << result.train_images << " training images, " << test.size() << " test images ("
       << result.data_seconds << " s)";
    say(os.str());
  }

  t0 = std::chrono::steady_clock::now();
  std::vector<LabeledSample> train_set, validation;
  split_validation(train_all, cfg.train.validation_fraction, rng, train_set, validation);
  TrainResult tr = train(train_set, validation, cfg.train, [&](const EpochMetrics& m) { say(format_metrics(m)); });
  if (tr.diverged) throw NumericalError("benchmark training diverged: " + tr.diagnostic);
  result.epochs_run = static_cast<int>(tr.metrics.size());
  result.weights = std::move(tr.best_weights);
  result.train_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  EvalOptions opt;
  opt.repeats = cfg.eval_repeats;
  opt.seed = cfg.seed;
  opt.additional = cfg.train.arch.m - 1;
  opt.policy = AdditionalPolicy::kRandom;
  result.c5 = run_eval(c5_estimator(result.weights), test, {}, opt);
  opt.policy = AdditionalPolicy::kNone;
  result.c5_no_additional = run_eval(c5_estimator(result.weights), test, {}, opt);
  result.gray_world = run_eval(gray_world_estimator(), test, {}, opt);
  result.eval_seconds = seconds_since(t0);
  return result;
}

}  // namespace c5cc
