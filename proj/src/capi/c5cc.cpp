#include "c5cc/c5cc.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <new>
#include <set>
#include <sstream>
#include <string>

#include "c5cc/benchmark.hpp"
#include "c5cc/error.hpp"
#include "c5cc/gradcheck.hpp"
#include "c5cc/harness.hpp"
#include "c5cc/network.hpp"
#include "c5cc/trainer.hpp"

namespace fs = std::filesystem;
using namespace c5cc;

struct c5cc_weights {
  NetworkWeights w;
};

struct c5cc_report {
  EvalReport r;
  std::string text;
};

namespace {

thread_local std::string g_error;

template <typename F>
c5cc_status guarded(F&& f) {
  try {
    f();
    g_error.clear();
    return C5CC_OK;
  } catch (const Error& e) {
    g_error = e.what();
    return static_cast<c5cc_status>(e.kind());
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    return C5CC_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_error = e.what();
    return C5CC_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw UsageError(what);
}

void emit(c5cc_log_fn log, void* user, const std::string& line) {
  if (log) log(line.c_str(), user);
}

fs::path mask_companion(const fs::path& image) {
  fs::path m = image;
  m.replace_filename(image.stem().string() + "_mask" + image.extension().string());
  return fs::exists(m) ? m : fs::path();
}

RawImage load_query_image(const fs::path& path) {
  RawImage img = load_image(path, mask_companion(path));
  const WorkingSize size;
  if (img.width > size.width || img.height > size.height) img = resize(img, size.width, size.height);
  return img;
}

void fill_estimate(const InferenceResult& r, c5cc_estimate* out) {
  for (int k = 0; k < 3; ++k) out->illuminant[k] = r.illuminant[k];
  const auto uv = compute_uv(r.illuminant);
  out->uv[0] = uv ? uv->u : std::nan("");
  out->uv[1] = uv ? uv->v : std::nan("");
}

void write_map(const fs::path& path, const std::vector<double>& values, int n) {
  write_pfm_gray(path, std::vector<float>(values.begin(), values.end()), n, n);
}

std::string take(std::map<std::string, std::string>& kv, const std::string& key, bool required) {
  auto it = kv.find(key);
  if (it == kv.end()) {
    if (required) throw UsageError("config is missing '" + key + "'");
    return {};
  }
  std::string v = it->second;
  kv.erase(it);
  return v;
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw UsageError("config key '" + key + "' expects an integer, got '" + v + "'");
}

std::string format_image_name(const char* prefix, int i) {
  std::ostringstream os;
  os << prefix << '_' << std::setw(5) << std::setfill('0') << i << ".pfm";
  return os.str();
}

}  // namespace

extern "C" {

const char* c5cc_version(void) { return "0.1.0"; }

const char* c5cc_last_error(void) { return g_error.c_str(); }

// ---- weights ----

c5cc_status c5cc_weights_load(const char* path, c5cc_weights** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new c5cc_weights{NetworkWeights::load(path)};
  });
}

c5cc_status c5cc_weights_save(const c5cc_weights* w, const char* path) {
  return guarded([&] {
    require(w && path, "null argument");
    w->w.save(path);
  });
}

c5cc_status c5cc_weights_init(const char* config, uint64_t seed, c5cc_weights** out) {
  return guarded([&] {
    require(out != nullptr, "null argument");
    auto kv = parse_key_values(config ? config : "");
    const TrainConfig cfg = train_config_from(kv);
    if (!kv.empty()) throw UsageError("unknown architecture key '" + kv.begin()->first + "'");
    *out = new c5cc_weights{NetworkWeights::initialize(cfg.arch, seed)};
  });
}

c5cc_status c5cc_weights_get_info(const c5cc_weights* w, c5cc_weights_info* out) {
  return guarded([&] {
    require(w && out, "null argument");
    const ArchitectureConfig& a = w->w.arch();
    out->n = a.n;
    out->m = a.m;
    out->depth = a.depth;
    out->base_channels = a.base_channels;
    out->convs_per_block = a.convs_per_block;
    out->emit_gain = a.emit_gain;
    out->use_gradient = a.use_gradient;
    out->use_coords = a.use_coords;
    out->trainable_values = w->w.trainable_count();
    out->total_values = w->w.total_count();
    out->serialized_bytes = w->w.serialize().size();
  });
}

void c5cc_weights_free(c5cc_weights* w) { delete w; }

// ---- inference ----

c5cc_status c5cc_infer_files(const c5cc_weights* w, const char* query_path, const char* const* additional,
                             size_t additional_count, const char* heatmap_path, const char* filters_prefix,
                             c5cc_estimate* out) {
  return guarded([&] {
    require(w && query_path && out, "null argument");
    require(additional_count == 0 || additional != nullptr, "null additional image list");
    const RawImage query = load_query_image(query_path);
    std::vector<RawImage> extra;
    for (size_t i = 0; i < additional_count; ++i) {
      require(additional[i] != nullptr, "null additional image path");
      extra.push_back(load_query_image(additional[i]));
    }
    const int n = w->w.arch().n;
    const InferenceResult r = c5_infer(w->w, query, extra, HistogramConfig{n, -2.85, 2.85});
    if (heatmap_path) write_map(heatmap_path, r.heatmap.p, n);
    if (filters_prefix) {
      const std::string p = filters_prefix;
      write_map(p + "_filter_pixel.pfm", r.params.filters[0], n);
      write_map(p + "_filter_gradient.pfm", r.params.filters[1], n);
      write_map(p + "_bias.pfm", r.params.bias, n);
      if (r.params.gain) write_map(p + "_gain.pfm", *r.params.gain, n);
    }
    fill_estimate(r, out);
  });
}

c5cc_status c5cc_infer_rgb(const c5cc_weights* w, const float* query, int width, int height,
                           const float* const* additional, const int* widths, const int* heights,
                           size_t additional_count, c5cc_estimate* out) {
  return guarded([&] {
    require(w && query && out, "null argument");
    require(additional_count == 0 || (additional && widths && heights), "null additional image list");
    auto wrap = [](const float* px, int wd, int ht) {
      require(px != nullptr && wd > 0 && ht > 0, "invalid image");
      RawImage img(wd, ht);
      std::copy(px, px + img.pixels.size(), img.pixels.begin());
      img.validate();
      return img;
    };
    const RawImage q = wrap(query, width, height);
    std::vector<RawImage> extra;
    for (size_t i = 0; i < additional_count; ++i) extra.push_back(wrap(additional[i], widths[i], heights[i]));
    const int n = w->w.arch().n;
    fill_estimate(c5_infer(w->w, q, extra, HistogramConfig{n, -2.85, 2.85}), out);
  });
}

// ---- training ----

c5cc_status c5cc_train_file(const char* config_path, uint64_t seed, int override_seed, c5cc_log_fn log, void* user) {
  return guarded([&] {
    require(config_path != nullptr, "null argument");
    const fs::path cfg_path = config_path;
    const fs::path base = cfg_path.parent_path();
    auto resolve = [&base](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    auto kv = read_key_value_file(cfg_path);
    const fs::path manifest_path = resolve(take(kv, "manifest", true));
    const fs::path output = resolve(take(kv, "output", true));
    const std::string metrics = take(kv, "metrics", false);
    const std::string exclude = take(kv, "exclude_camera", false);
    WorkingSize size;
    if (auto v = take(kv, "width", false); !v.empty()) size.width = to_int("width", v);
    if (auto v = take(kv, "height", false); !v.empty()) size.height = to_int("height", v);
    TrainConfig cfg = train_config_from(kv);
    if (!kv.empty()) throw UsageError("unknown config key '" + kv.begin()->first + "'");
    if (override_seed) cfg.seed = seed;
    cfg.validate();

    const DatasetManifest m = read_manifest(manifest_path);
    for (const auto& warning : m.warnings) emit(log, user, "warning: " + warning);
    std::vector<int> indices;
    if (exclude.empty()) {
      for (int i = 0; i < static_cast<int>(m.entries.size()); ++i) indices.push_back(i);
    } else {
      indices = leave_one_camera_out(m, exclude).train;
    }
    if (indices.empty()) throw DataError("no training images");
    std::vector<LabeledSample> data;
    const HistogramConfig hcfg = cfg.histogram();
    for (int i : indices) {
      const ManifestEntry& e = m.entries[i];
      const RawImage img = load_entry_image(m, e, size);
      data.push_back({std::make_shared<ChromaHistogram>(assemble_feature_stack(img, hcfg)), e.illuminant, e.camera});
    }
    emit(log, user, "loaded " + std::to_string(data.size()) + " training images");

    std::seed_seq seq{cfg.seed, std::uint64_t{0x5b17}};
    std::mt19937_64 rng(seq);
    std::vector<LabeledSample> train_set, validation;
    split_validation(data, cfg.validation_fraction, rng, train_set, validation);

    std::ofstream metrics_out;
    if (!metrics.empty()) {
      metrics_out.open(resolve(metrics));
      if (!metrics_out) throw DataError("cannot write metrics file " + resolve(metrics).string());
      metrics_out << metrics_header() << '\n';
    }
    emit(log, user, metrics_header());
    const TrainResult r = train(train_set, validation, cfg, [&](const EpochMetrics& e) {
      const std::string line = format_metrics(e);
      if (metrics_out.is_open()) metrics_out << line << '\n' << std::flush;
      emit(log, user, line);
    });
    if (r.diverged) throw NumericalError("training diverged: " + r.diagnostic);
    r.best_weights.save(output);
    r.final_weights.save(output.string() + ".final");
    emit(log, user, "wrote " + output.string());
  });
}

// ---- augmentation and synthetic data ----

c5cc_status c5cc_augment(const char* source_manifest, const char* target_manifest, int count, const char* out_dir,
                         uint64_t seed, c5cc_log_fn log, void* user) {
  return guarded([&] {
    require(source_manifest && target_manifest && out_dir, "null argument");
    require(count > 0, "count must be positive");
    const DatasetManifest src = read_manifest(source_manifest);
    const DatasetManifest tgt = read_manifest(target_manifest);
    const auto target_ids = tgt.camera_ids();
    if (target_ids.size() != 1) throw DataError("target manifest must contain images of exactly one camera");
    const CameraProfile& target_profile = tgt.cameras.at(target_ids.front());

    std::vector<Rgb> ills;
    std::vector<CaptureMeta> metas;
    for (const ManifestEntry& e : tgt.entries) {
      ills.push_back(e.illuminant);
      metas.push_back(e.meta);
    }
    const TargetCamera target = TargetCamera::build(target_profile, ills, metas);

    std::vector<int> sources;
    std::vector<double> temps;
    std::vector<CaptureVector> raw = target.raw_features();
    for (int i = 0; i < static_cast<int>(src.entries.size()); ++i) {
      const ManifestEntry& e = src.entries[i];
      if (e.camera == target_profile.id) continue;
      const double q = estimate_cct(e.illuminant, src.cameras.at(e.camera)).q;
      sources.push_back(i);
      temps.push_back(q);
      raw.push_back(raw_capture_feature(e.meta, q));
    }
    if (sources.empty()) throw DataError("source manifest has no images from other cameras");
    const FeatureNorms norms = FeatureNorms::from(raw);

    const fs::path dir = out_dir;
    fs::create_directories(dir);
    std::seed_seq seq{seed, std::uint64_t{0xa09}};
    std::mt19937_64 rng(seq);
    DatasetManifest out;
    out.base_dir = dir;
    out.cameras.emplace(target_profile.id, target_profile);
    const AugmentConfig acfg;
    int k = 0;
    for (int pick : stratified_sources(temps, count, rng)) {
      const ManifestEntry& e = src.entries[sources[pick]];
      const RawImage img = load_entry_image(src, e, {0, 0});
      const AugmentSource s{&img, e.illuminant, e.meta, &src.cameras.at(e.camera)};
      const AugmentResult a = augment_image(s, target, norms, acfg, rng);
      const std::string name = format_image_name("aug", k++);
      write_pfm(dir / name, a.image);
      ManifestEntry o;
      o.image = name;
      o.camera = target_profile.id;
      o.illuminant = a.illuminant;
      o.scene = e.scene;
      o.meta = e.meta;
      out.entries.push_back(o);
      std::ostringstream line;
      line << name << " from " << e.image.generic_string() << " (" << e.camera << ", " << a.source_q << " K -> "
           << a.target_q << " K)";
      emit(log, user, line.str());
    }
    write_manifest(dir / "manifest.jsonl", out);
  });
}

c5cc_status c5cc_synth_cameras(uint64_t seed, int camera_count, int images_per_camera, double perturbation,
                               const char* out_dir, c5cc_log_fn log, void* user) {
  return guarded([&] {
    require(out_dir != nullptr, "null argument");
    require(camera_count > 0 && images_per_camera > 0, "counts must be positive");
    require(perturbation >= 0.0, "perturbation must be non-negative");
    const fs::path dir = out_dir;
    fs::create_directories(dir);
    std::seed_seq seq{seed, std::uint64_t{0x5c}};
    std::mt19937_64 rng(seq);
    DatasetManifest out;
    out.base_dir = dir;
    const SceneSpec scene;
    const HistogramConfig hcfg;
    for (int c = 0; c < camera_count; ++c) {
      SyntheticCameraSpec spec;
      spec.id = "synth" + std::to_string(c);
      spec.perturbation = perturbation;
      spec.off_locus = 0.03;
      const SyntheticCamera cam = make_synthetic_camera(spec, rng);
      out.cameras.emplace(spec.id, cam.profile);
      for (int i = 0; i < images_per_camera; ++i) {
        const SyntheticCapture cap = synthetic_capture(cam, scene, hcfg, rng);
        const std::string name = spec.id + "_" + format_image_name("img", i);
        write_pfm(dir / name, cap.image);
        ManifestEntry e;
        e.image = name;
        e.camera = spec.id;
        e.illuminant = cap.illuminant;
        e.scene = spec.id + "_" + std::to_string(i);
        e.meta = cap.meta;
        out.entries.push_back(e);
      }
      emit(log, user, spec.id + ": " + std::to_string(images_per_camera) + " images");
    }
    write_manifest(dir / "manifest.jsonl", out);
  });
}

// ---- evaluation ----

c5cc_status c5cc_eval(const c5cc_weights* w, const char* manifest, const char* camera, const char* policy,
                      int repeats, uint64_t seed, c5cc_report** out) {
  return guarded([&] {
    require(manifest && policy && out, "null argument");
    EvalOptions opt;
    opt.policy = parse_policy(policy);
    opt.repeats = repeats;
    opt.seed = seed;
    if (repeats < 1) throw UsageError("repeats must be at least 1");
    const DatasetManifest m = read_manifest(manifest);
    const int n = w ? w->w.arch().n : 64;
    if (w) opt.additional = w->w.arch().m - 1;
    const HistogramConfig hcfg{n, -2.85, 2.85};
    std::vector<EvalSample> test, cross;
    for (const ManifestEntry& e : m.entries) {
      const bool in_test = !camera || e.camera == camera;
      const bool in_cross = opt.policy == AdditionalPolicy::kCrossCamera && (!camera || e.camera != camera);
      if (!in_test && !in_cross) continue;
      EvalSample s = make_eval_sample(load_entry_image(m, e, {}), e.illuminant, e.camera, hcfg);
      if (in_cross) cross.push_back(s);
      if (in_test) test.push_back(std::move(s));
    }
    if (test.empty()) throw DataError(camera ? "no images of camera '" + std::string(camera) + "'" : "manifest has no images");
    const Estimator est = w ? c5_estimator(w->w) : gray_world_estimator();
    auto* r = new c5cc_report{run_eval(est, test, cross, opt), {}};
    r->text = format_report(r->r);
    *out = r;
  });
}

size_t c5cc_report_images(const c5cc_report* r) { return r ? r->r.images : 0; }

size_t c5cc_report_runs(const c5cc_report* r) { return r ? r->r.runs.size() : 0; }

c5cc_status c5cc_report_stats(const c5cc_report* r, int run, c5cc_stats* out, c5cc_stats* std) {
  return guarded([&] {
    require(r && out, "null argument");
    auto copy = [](const ErrorStats& s, c5cc_stats* o) { *o = {s.mean, s.median, s.trimean, s.best25, s.worst25}; };
    if (run < 0) {
      copy(r->r.mean, out);
      if (std) copy(r->r.std, std);
      return;
    }
    require(static_cast<size_t>(run) < r->r.runs.size(), "run index out of range");
    copy(r->r.runs[run], out);
    if (std) *std = {};
  });
}

const char* c5cc_report_text(const c5cc_report* r) { return r ? r->text.c_str() : ""; }

void c5cc_report_free(c5cc_report* r) { delete r; }

// ---- gradient checks ----

c5cc_status c5cc_gradcheck(uint64_t seed, double tolerance, c5cc_gradcheck_fn cb, void* user, int* failures) {
  return guarded([&] {
    require(tolerance > 0.0, "tolerance must be positive");
    GradCheckOptions opt;
    opt.seed = seed;
    opt.tolerance = tolerance;
    int failed = 0;
    for (const GradCheckCase& c : run_gradcheck_suite(opt)) {
      failed += !c.passed;
      if (cb) cb(c.name.c_str(), c.worst, c.passed, user);
    }
    if (failures) *failures = failed;
  });
}

}  // extern "C"
