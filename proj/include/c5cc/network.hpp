#pragma once

// Hypernetwork that emits CCC parameters from a set of log-chroma feature
// stacks: m encoder branches with shared weights and cross-branch max
// pooling, and one decoder per emitted map (bias, filters, optional gain)
// with skip connections from the query branch.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "c5cc/autodiff.hpp"
#include "c5cc/ccc.hpp"
#include "c5cc/features.hpp"

namespace c5cc {

struct ArchitectureConfig {
  int m = 9;  // query + additional inputs
  int depth = 4;
  int base_channels = 8;
  int n = 64;
  bool emit_gain = false;
  int convs_per_block = 2;
  bool use_gradient = true;
  bool use_coords = true;
  double leaky_slope = 0.2;
  double norm_eps = 1e-5;
  double bn_momentum = 0.9;

  int channels_at(int level) const { return base_channels << level; }
  int input_channels() const { return 1 + (use_gradient ? 1 : 0) + (use_coords ? 2 : 0); }
  void validate() const;
};

struct Parameter {
  std::string name;
  ad::Shape shape;
  std::vector<float> values;
  bool trainable = true;  // false for normalization running statistics
};

class NetworkWeights {
 public:
  NetworkWeights() = default;

  // He fan-in initialization for conv kernels, scale 1 / shift 0 for
  // normalization layers, zero output biases.
  static NetworkWeights initialize(const ArchitectureConfig& arch, std::uint64_t seed);

  const ArchitectureConfig& arch() const { return arch_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }
  const Parameter& get(const std::string& name) const;
  Parameter& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t trainable_count() const;
  std::size_t total_count() const;

  // Binary weight file: magic, version, architecture, then named blocks of
  // little-endian float32 values with shape prefixes.
  void save(const std::filesystem::path& path) const;
  static NetworkWeights load(const std::filesystem::path& path);
  std::vector<std::uint8_t> serialize() const;
  static NetworkWeights deserialize(const std::vector<std::uint8_t>& bytes);

  bool operator==(const NetworkWeights& other) const;

 private:
  void add(std::string name, ad::Shape shape, std::vector<float> values, bool trainable);
  ArchitectureConfig arch_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

inline constexpr char kWeightsMagic[8] = {'C', '5', 'C', 'C', 'W', 'G', 'T', 'S'};
inline constexpr std::uint32_t kWeightsVersion = 1;

// Trainable parameters bound as tape leaves, keyed by name.
struct BoundParams {
  std::map<std::string, ad::Var> vars;
  ad::Var operator[](const std::string& name) const;
};
BoundParams bind_params(ad::Tape& tape, const NetworkWeights& w);
// Binds caller-provided vars, one per trainable parameter in storage order.
BoundParams bind_params(const NetworkWeights& w, const std::vector<ad::Var>& vars);
std::vector<std::string> trainable_names(const NetworkWeights& w);

// Batch statistics produced by a training-mode forward pass, keyed by the
// batch-norm layer prefix.
using BatchNormUpdates = std::map<std::string, ad::BatchStatistics>;

struct EncoderOutput {
  std::vector<ad::Var> skips;  // query branch, one per level, finest first
  ad::Var bottleneck;          // cross-pooled activations after the last level
};

struct DecoderOutput {
  ad::Var bias;     // [B, 1, n, n]
  ad::Var filters;  // [B, 2, n, n]
  std::optional<ad::Var> gain;
};

// `input` is [B * m, C, n, n]; training mode uses batch statistics and
// records them in `updates`.
EncoderOutput encode(const NetworkWeights& w, const BoundParams& p, ad::Var input, bool training,
                     BatchNormUpdates* updates);
DecoderOutput decode(const NetworkWeights& w, const BoundParams& p, const EncoderOutput& enc);

// Stacks m feature stacks per sample into the network input tensor,
// selecting channels according to the architecture flags.
ad::Tensor make_network_input(const ArchitectureConfig& arch,
                              const std::vector<std::vector<const ChromaHistogram*>>& samples);

// Pixel and gradient histograms of each query, [B, 2, n, n].
ad::Tensor make_query_histograms(const std::vector<const ChromaHistogram*>& queries);

// Fills out the additional-input list to m - 1 entries by cycling through
// what was given; with nothing given the query itself is repeated.
std::vector<const ChromaHistogram*> complete_inputs(const ChromaHistogram& query,
                                                    const std::vector<const ChromaHistogram*>& additional, int m);

struct CccHeadOutput {
  ad::Var logits;   // [B, 1, n, n]
  ad::Var heatmap;  // [B, 1, n, n]
  ad::Var uv;       // [B, 2]
  ad::Var rgb;      // [B, 3]
};
// Differentiable CCC evaluation of the query histograms [B, 2, n, n].
CccHeadOutput ccc_head(ad::Var query_hist, const DecoderOutput& dec, const HistogramConfig& cfg);

void apply_batchnorm_updates(NetworkWeights& w, const BatchNormUpdates& updates);

CccParams extract_params(const DecoderOutput& dec, int sample);

struct InferenceResult {
  Rgb illuminant;
  CccParams params;
  HeatMap heatmap;
};

// Inference for several queries at once; `sets` holds m stacks per query,
// query first. Results do not depend on how queries are batched.
std::vector<InferenceResult> c5_infer_batch(const NetworkWeights& w,
                                            const std::vector<std::vector<const ChromaHistogram*>>& sets,
                                            const HistogramConfig& cfg);
InferenceResult c5_infer_stacks(const NetworkWeights& w, const ChromaHistogram& query,
                                const std::vector<const ChromaHistogram*>& additional, const HistogramConfig& cfg);
InferenceResult c5_infer(const NetworkWeights& w, const RawImage& query, const std::vector<RawImage>& additional,
                         const HistogramConfig& cfg);

}  // namespace c5cc
