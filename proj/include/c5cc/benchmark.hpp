#pragma once

// Synthetic cross-camera benchmark: a few simulated training cameras,
// augmentation among them, a small C5 trained on the result and evaluated on
// a held-out simulated camera against gray world and against the same
// weights without additional images.

#include <cstdint>
#include <functional>
#include <string>

#include "c5cc/harness.hpp"
#include "c5cc/sensor_sim.hpp"
#include "c5cc/trainer.hpp"

namespace c5cc {

// ISO, aperture and exposure drawn from typical ranges.
CaptureMeta random_capture_meta(std::mt19937_64& rng);

struct SyntheticCapture {
  RawImage image;
  Rgb illuminant{};
  double temperature = 0.0;
  CaptureMeta meta;
};

// Renders a random scene under one of the camera's illuminants. Scenes whose
// pixels mostly clip to zero or fall outside the histogram range are redrawn.
SyntheticCapture synthetic_capture(const SyntheticCamera& cam, const SceneSpec& spec, const HistogramConfig& hcfg,
                                   std::mt19937_64& rng);

struct BenchmarkConfig {
  std::uint64_t seed = 7;
  int train_cameras = 7;
  int originals_per_camera = 40;
  int augmented_images = 220;  // added on top of the originals, split over the training cameras
  int test_images = 200;
  SceneSpec scene{64, 48, 6};
  double perturbation = 0.25;
  double off_locus = 0.03;
  AugmentConfig augment;
  int eval_repeats = 3;
  TrainConfig train;

  BenchmarkConfig();
};

struct BenchmarkResult {
  EvalReport c5;
  EvalReport c5_no_additional;
  EvalReport gray_world;
  std::size_t train_images = 0;
  int epochs_run = 0;
  double data_seconds = 0.0;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
  NetworkWeights weights;
};

using BenchmarkLog = std::function<void(const std::string&)>;

BenchmarkResult run_synthetic_benchmark(const BenchmarkConfig& cfg, const BenchmarkLog& log = {});

}  // namespace c5cc
