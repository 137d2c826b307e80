#pragma once

// Dataset manifests, leave-one-camera-out splits, evaluation statistics and
// the gray-world baseline.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "c5cc/features.hpp"
#include "c5cc/network.hpp"
#include "c5cc/sensor_sim.hpp"
#include "c5cc/trainer.hpp"

namespace c5cc {

// ---- manifest ----
//
// JSON Lines. Camera records:
//   {"type": "camera", "id": "...", "c1": [[...], [...], [...]], "c2": ..., "q1": K, "q2": K}
// Image records:
//   {"type": "image", "image": "a.pfm", "mask": "a_mask.pfm", "camera": "...",
//    "illuminant": [r, g, b], "scene": "...",
//    "meta": {"iso": .., "aperture": .., "exposure_time": .., "baseline_exposure": .., "baseline_noise": ..}}
// "mask", "scene" and "meta" are optional. Relative paths resolve against
// the manifest's directory.

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path mask;
  std::string camera;
  Rgb illuminant{};
  std::string scene;
  CaptureMeta meta;
};

struct DatasetManifest {
  std::filesystem::path base_dir;
  std::map<std::string, CameraProfile> cameras;
  std::vector<ManifestEntry> entries;
  std::vector<std::string> warnings;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  std::vector<std::string> camera_ids() const;  // in order of first appearance among entries
};

// Parses and validates a manifest. Non-unit illuminants are re-normalized
// with a warning; missing files, unknown cameras and malformed lines are
// data errors.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

struct WorkingSize {
  int width = 384;
  int height = 256;
};

// Images larger than the working size are downsampled to it.
RawImage load_entry_image(const DatasetManifest& m, const ManifestEntry& e, const WorkingSize& size = {});

// Entries are loaded on demand.
inline DatasetManifest load_dataset(const std::filesystem::path& path) { return read_manifest(path); }

// Test = all images of `test_camera`; train = the rest minus any image whose
// scene id also occurs in the test set.
struct CameraSplit {
  std::vector<int> train;
  std::vector<int> test;
};
CameraSplit leave_one_camera_out(const DatasetManifest& m, const std::string& test_camera);

// ---- statistics ----

struct ErrorStats {
  double mean = 0.0;
  double median = 0.0;
  double trimean = 0.0;
  double best25 = 0.0;
  double worst25 = 0.0;
  bool operator==(const ErrorStats&) const = default;
};

// Trimean uses Tukey's hinges (medians of the lower and upper halves, each
// including the median when N is odd); best/worst 25% average the ceil(N/4)
// smallest/largest values.
ErrorStats eval_stats(std::vector<double> errors_deg);

struct EvalReport {
  std::size_t images = 0;
  std::vector<ErrorStats> runs;
  ErrorStats mean;  // across runs
  ErrorStats std;   // population standard deviation across runs
  bool operator==(const EvalReport&) const = default;
};

EvalReport aggregate_runs(std::vector<ErrorStats> runs, std::size_t images);
std::string format_report(const EvalReport& r);

// Normalized mean RGB over masked-in pixels.
Rgb gray_world(const RawImage& img);

// ---- evaluation ----

struct EvalSample {
  std::shared_ptr<const ChromaHistogram> features;
  Rgb illuminant{};
  std::string camera;
  double uv_variance = 0.0;
  Rgb gray_world{};
};

EvalSample make_eval_sample(const RawImage& img, const Rgb& illuminant, std::string camera,
                            const HistogramConfig& cfg);

enum class AdditionalPolicy { kRandom, kVivid, kDull, kCrossCamera, kNone };
AdditionalPolicy parse_policy(const std::string& name);
std::string policy_name(AdditionalPolicy p);

// For every query, the indices of its additional images: into `test` for
// the same-camera policies and into `cross_pool` for kCrossCamera. Vivid and
// dull draw from the 20 test images with the highest / lowest uv chroma
// variance.
std::vector<std::vector<int>> choose_additional(const std::vector<EvalSample>& test,
                                                const std::vector<EvalSample>& cross_pool, AdditionalPolicy policy,
                                                int count, std::mt19937_64& rng);

// An estimator maps each query (with its chosen additional samples) to an
// illuminant.
using Estimator = std::function<std::vector<Rgb>(const std::vector<const EvalSample*>& queries,
                                                 const std::vector<std::vector<const EvalSample*>>& additional)>;
Estimator c5_estimator(const NetworkWeights& w);
Estimator gray_world_estimator();

struct EvalOptions {
  AdditionalPolicy policy = AdditionalPolicy::kRandom;
  int repeats = 10;
  std::uint64_t seed = 0;
  int additional = 8;  // m - 1
};

EvalReport run_eval(const Estimator& estimate, const std::vector<EvalSample>& test,
                    const std::vector<EvalSample>& cross_pool, const EvalOptions& opt);

}  // namespace c5cc
