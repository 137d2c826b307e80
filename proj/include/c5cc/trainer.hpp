#pragma once

// Training of the hypernetwork: angular-error loss with smoothness
// regularization, Adam with decoupled weight decay, cosine-annealed learning
// rate and a batch size that grows over the run.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "c5cc/network.hpp"

namespace c5cc {

struct TrainConfig {
  int epochs = 60;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 5e-4;
  double lambda_f = 0.15;
  double lambda_b = 0.02;
  double lambda_g = 0.02;
  // batch_sizes[i] is used from epoch batch_epochs[i - 1] + 1 on (1-based).
  std::vector<int> batch_sizes{16, 32, 64};
  std::vector<int> batch_epochs{20, 40};
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  ArchitectureConfig arch;

  int batch_size_at(int epoch) const;
  HistogramConfig histogram() const { return HistogramConfig{arch.n, -2.85, 2.85}; }
  void validate() const;
};

// `key = value` lines, '#' starts a comment. Unknown keys are left in the
// map for the caller; recognised ones are removed.
std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path);
std::map<std::string, std::string> parse_key_values(const std::string& text);
TrainConfig train_config_from(std::map<std::string, std::string>& kv);

struct LabeledSample {
  std::shared_ptr<const ChromaHistogram> features;
  Rgb illuminant;  // unit norm
  std::string camera;
};

// Radians. Throws DataError for a zero vector.
double angular_error(const Rgb& a, const Rgb& b);
inline double degrees(double radians) { return radians * 57.29577951308232; }

// Sobel-gradient energy of the emitted maps.
double smoothness_penalty(const CccParams& params, double lambda_f, double lambda_b, double lambda_g);
// Per-sample penalty on a batch of emitted maps, shape [B].
ad::Var smoothness_penalty(const DecoderOutput& dec, double lambda_f, double lambda_b, double lambda_g);

struct LossTerms {
  ad::Var total;        // scalar
  ad::Var angular;      // [B], degrees
  ad::Var smoothness;   // [B]
};
// Mean over the batch of angular error plus smoothness. `targets` is [B, 3].
LossTerms total_loss(const CccHeadOutput& head, const DecoderOutput& dec, const ad::Tensor& targets,
                     const TrainConfig& cfg);

double lr_at(long step, long total_steps, double lr_initial);

struct AdamState {
  std::map<std::string, std::vector<double>> m, v;
  long t = 0;
};
// One Adam update of a single array; weights are stored in float and rounded
// after the update.
void adam_update(std::vector<float>& w, const std::vector<double>& g, std::vector<double>& m, std::vector<double>& v,
                 long t, double lr, const TrainConfig& cfg);
// Updates every trainable parameter. Throws NumericalError on non-finite
// gradients before touching any weight.
void adam_step(NetworkWeights& w, const std::map<std::string, std::vector<double>>& grads, AdamState& state,
               double lr, const TrainConfig& cfg);

struct BatchItem {
  int query = 0;
  std::vector<int> additional;  // m - 1 indices
};

// m - 1 additional images from the query's camera, distinct and excluding
// the query when the camera has at least m images; otherwise the available
// ones are cycled, and a lone query is replicated.
std::vector<int> draw_additional(const std::vector<LabeledSample>& data, const std::map<std::string, std::vector<int>>& by_camera,
                                 int query, int m, std::mt19937_64& rng);
std::map<std::string, std::vector<int>> group_by_camera(const std::vector<LabeledSample>& data);
// Shuffled, without-replacement queries split into batches.
std::vector<std::vector<BatchItem>> sample_epoch(const std::vector<LabeledSample>& data, int batch_size, int m,
                                                 std::mt19937_64& rng);

// Holds out round(fraction * count) images of every camera, keeping at
// least one training image per camera.
void split_validation(const std::vector<LabeledSample>& data, double fraction, std::mt19937_64& rng,
                      std::vector<LabeledSample>& train, std::vector<LabeledSample>& validation);

struct EpochMetrics {
  int epoch = 0;
  int batch_size = 0;
  double lr = 0.0;  // at the last step of the epoch
  double train_loss = 0.0;
  double train_angular_deg = 0.0;
  double val_angular_deg = 0.0;
  double best_val_deg = 0.0;
  double seconds = 0.0;
};

std::string metrics_header();
std::string format_metrics(const EpochMetrics& e);

struct TrainResult {
  NetworkWeights final_weights;
  NetworkWeights best_weights;
  std::vector<EpochMetrics> metrics;
  bool diverged = false;
  std::string diagnostic;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Trains on `train`, tracking mean angular error on `validation` (which may
// be empty, in which case the training error is tracked instead).
TrainResult train(const std::vector<LabeledSample>& train_set, const std::vector<LabeledSample>& validation,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Mean angular error in degrees with additional images drawn per query from
// `pool` (same camera), using a fixed seed.
double mean_error_deg(const NetworkWeights& w, const std::vector<LabeledSample>& queries,
                      const std::vector<LabeledSample>& pool, std::uint64_t seed);

}  // namespace c5cc
