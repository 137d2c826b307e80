#include "c5cc/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "c5cc/error.hpp"

namespace c5cc {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

void ArchitectureConfig::validate() const {
  if (m < 1) throw UsageError("architecture: m must be at least 1");
  if (depth < 1) throw UsageError("architecture: depth must be at least 1");
  if (base_channels < 1 || convs_per_block < 1) throw UsageError("architecture: channel and conv counts must be positive");
  if (n < 2 || n % (1 << depth) != 0) throw UsageError("architecture: n must be divisible by 2^depth");
  if (!(leaky_slope >= 0.0) || !(norm_eps > 0.0) || !(bn_momentum >= 0.0 && bn_momentum < 1.0)) {
    throw UsageError("architecture: invalid slope, epsilon or momentum");
  }
}

// ---------------------------------------------------------------------------
// Weights

namespace {

const char* kDecoderNames[3] = {"dec_bias", "dec_filters", "dec_gain"};
const int kDecoderOutputs[3] = {1, 2, 1};

std::string enc_prefix(int level, int conv) { return "enc" + std::to_string(level) + ".conv" + std::to_string(conv); }
std::string dec_prefix(const char* dec, int level, int conv) {
  return std::string(dec) + ".up" + std::to_string(level) + ".conv" + std::to_string(conv);
}

int decoder_count(const ArchitectureConfig& a) { return a.emit_gain ? 3 : 2; }

}  // namespace

void NetworkWeights::add(std::string name, Shape shape, std::vector<float> values, bool trainable) {
  index_[name] = params_.size();
  params_.push_back(Parameter{std::move(name), std::move(shape), std::move(values), trainable});
}

NetworkWeights NetworkWeights::initialize(const ArchitectureConfig& arch, std::uint64_t seed) {
  arch.validate();
  NetworkWeights w;
  w.arch_ = arch;
  std::mt19937_64 rng(seed);
  auto he = [&rng](int co, int ci) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (ci * 9.0)));
    std::vector<float> v(static_cast<std::size_t>(co) * ci * 9);
    for (float& x : v) x = static_cast<float>(dist(rng));
    return v;
  };
  auto add_conv = [&](const std::string& prefix, int co, int ci) {
    w.add(prefix + ".weight", {co, ci, 3, 3}, he(co, ci), true);
  };
  auto add_norm = [&](const std::string& prefix, int c, bool running) {
    w.add(prefix + ".gamma", {c}, std::vector<float>(c, 1.0f), true);
    w.add(prefix + ".beta", {c}, std::vector<float>(c, 0.0f), true);
    if (running) {
      w.add(prefix + ".running_mean", {c}, std::vector<float>(c, 0.0f), false);
      w.add(prefix + ".running_var", {c}, std::vector<float>(c, 1.0f), false);
    }
  };
  for (int l = 0; l < arch.depth; ++l) {
    const int co = arch.channels_at(l);
    int ci = l == 0 ? arch.input_channels() : 2 * arch.channels_at(l - 1);
    for (int k = 0; k < arch.convs_per_block; ++k) {
      add_conv(enc_prefix(l, k), co, ci);
      add_norm(enc_prefix(l, k) + ".bn", co, true);
      ci = co;
    }
  }
  for (int d = 0; d < decoder_count(arch); ++d) {
    int prev = arch.channels_at(arch.depth - 1);
    for (int l = arch.depth - 1; l >= 0; --l) {
      const int co = arch.channels_at(l);
      int ci = prev + co;
      for (int k = 0; k < arch.convs_per_block; ++k) {
        add_conv(dec_prefix(kDecoderNames[d], l, k), co, ci);
        add_norm(dec_prefix(kDecoderNames[d], l, k) + ".in", co, false);
        ci = co;
      }
      prev = co;
    }
    const int out = kDecoderOutputs[d];
    add_conv(std::string(kDecoderNames[d]) + ".out", out, arch.channels_at(0));
    // The gain map starts at one so an untrained gain decoder is neutral.
    w.add(std::string(kDecoderNames[d]) + ".out.bias", {out}, std::vector<float>(out, d == 2 ? 1.0f : 0.0f), true);
  }
  return w;
}

const Parameter& NetworkWeights::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("unknown network parameter: " + name);
  return params_[it->second];
}

Parameter& NetworkWeights::get(const std::string& name) {
  return const_cast<Parameter&>(static_cast<const NetworkWeights&>(*this).get(name));
}

std::size_t NetworkWeights::trainable_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_)
    if (p.trainable) n += p.values.size();
  return n;
}

std::size_t NetworkWeights::total_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.values.size();
  return n;
}

bool NetworkWeights::operator==(const NetworkWeights& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Parameter& a = params_[i];
    const Parameter& b = other.params_[i];
    if (a.name != b.name || a.shape != b.shape || a.trainable != b.trainable) return false;
    if (std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw DataError("weight file truncated");
  }
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> NetworkWeights::serialize() const {
  Writer w;
  w.bytes(kWeightsMagic, sizeof(kWeightsMagic));
  w.u32(kWeightsVersion);
  w.u32(static_cast<std::uint32_t>(arch_.m));
  w.u32(static_cast<std::uint32_t>(arch_.depth));
  w.u32(static_cast<std::uint32_t>(arch_.base_channels));
  w.u32(static_cast<std::uint32_t>(arch_.n));
  w.u32(static_cast<std::uint32_t>(arch_.convs_per_block));
  w.u8(arch_.emit_gain);
  w.u8(arch_.use_gradient);
  w.u8(arch_.use_coords);
  w.f64(arch_.leaky_slope);
  w.f64(arch_.norm_eps);
  w.f64(arch_.bn_momentum);
  w.u32(static_cast<std::uint32_t>(params_.size()));
  for (const Parameter& p : params_) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.u8(p.trainable);
    w.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.values) w.f32(v);
  }
  return w.take();
}

NetworkWeights NetworkWeights::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(sizeof(kWeightsMagic)) != std::string(kWeightsMagic, sizeof(kWeightsMagic))) {
    throw DataError("not a weight file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion) throw DataError("unsupported weight file version " + std::to_string(version));
  ArchitectureConfig a;
  a.m = static_cast<int>(r.u32());
  a.depth = static_cast<int>(r.u32());
  a.base_channels = static_cast<int>(r.u32());
  a.n = static_cast<int>(r.u32());
  a.convs_per_block = static_cast<int>(r.u32());
  a.emit_gain = r.u8() != 0;
  a.use_gradient = r.u8() != 0;
  a.use_coords = r.u8() != 0;
  a.leaky_slope = r.f64();
  a.norm_eps = r.f64();
  a.bn_momentum = r.f64();
  try {
    a.validate();
  } catch (const UsageError& e) {
    throw DataError(std::string("weight file: ") + e.what());
  }
  // Layout must match a freshly initialized network of this architecture.
  NetworkWeights w = initialize(a, 0);
  const std::uint32_t count = r.u32();
  if (count != w.params_.size()) throw DataError("weight file parameter count does not match architecture");
  for (Parameter& p : w.params_) {
    const std::string name = r.str(r.u32());
    const bool trainable = r.u8() != 0;
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    if (name != p.name || shape != p.shape || trainable != p.trainable) {
      throw DataError("weight file block '" + name + "' does not match architecture");
    }
    for (float& v : p.values) {
      v = r.f32();
      if (!std::isfinite(v)) throw DataError("weight file contains non-finite values in " + name);
    }
  }
  if (!r.done()) throw DataError("trailing bytes in weight file");
  return w;
}

void NetworkWeights::save(const std::filesystem::path& path) const {
  const std::vector<std::uint8_t> bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

NetworkWeights NetworkWeights::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

// ---------------------------------------------------------------------------
// Forward pass

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw DataError("parameter not bound: " + name);
  return it->second;
}

BoundParams bind_params(Tape& tape, const NetworkWeights& w) {
  BoundParams b;
  for (const Parameter& p : w.params()) {
    if (!p.trainable) continue;
    b.vars[p.name] = tape.leaf(Tensor(p.shape, std::vector<double>(p.values.begin(), p.values.end())));
  }
  return b;
}

BoundParams bind_params(const NetworkWeights& w, const std::vector<Var>& vars) {
  BoundParams b;
  std::size_t i = 0;
  for (const Parameter& p : w.params()) {
    if (!p.trainable) continue;
    if (i >= vars.size()) throw DataError("too few vars to bind network parameters");
    if (vars[i].shape() != p.shape) throw DataError("shape mismatch binding " + p.name);
    b.vars[p.name] = vars[i++];
  }
  if (i != vars.size()) throw DataError("too many vars to bind network parameters");
  return b;
}

std::vector<std::string> trainable_names(const NetworkWeights& w) {
  std::vector<std::string> names;
  for (const Parameter& p : w.params())
    if (p.trainable) names.push_back(p.name);
  return names;
}

namespace {

std::vector<double> as_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

}  // namespace

EncoderOutput encode(const NetworkWeights& w, const BoundParams& p, Var input, bool training,
                     BatchNormUpdates* updates) {
  const ArchitectureConfig& a = w.arch();
  const Tensor& in = input.value();
  if (in.rank() != 4 || in.dim(1) != a.input_channels() || in.dim(2) != a.n || in.dim(3) != a.n ||
      in.dim(0) % a.m != 0) {
    throw DataError("encoder input " + ad::shape_string(in.shape()) + " does not match architecture");
  }
  EncoderOutput out;
  Var x = input;
  for (int l = 0; l < a.depth; ++l) {
    for (int k = 0; k < a.convs_per_block; ++k) {
      const std::string pre = enc_prefix(l, k);
      x = ad::conv3x3(x, p[pre + ".weight"]);
      x = ad::leaky_relu(x, a.leaky_slope);
      const std::string bn = pre + ".bn";
      ad::BatchStatistics stats;
      x = ad::batch_norm(x, p[bn + ".gamma"], p[bn + ".beta"], training, as_double(w.get(bn + ".running_mean").values),
                         as_double(w.get(bn + ".running_var").values), a.norm_eps, training ? &stats : nullptr);
      if (training && updates) (*updates)[bn] = std::move(stats);
    }
    out.skips.push_back(ad::select_branch(x, a.m, 0));
    Var pooled = ad::max_pool2(x);
    Var shared = ad::branch_max(pooled, a.m);
    if (l + 1 == a.depth) {
      out.bottleneck = shared;
    } else {
      x = ad::concat_channels({pooled, ad::branch_broadcast(shared, a.m)});
    }
  }
  return out;
}

DecoderOutput decode(const NetworkWeights& w, const BoundParams& p, const EncoderOutput& enc) {
  const ArchitectureConfig& a = w.arch();
  if (static_cast<int>(enc.skips.size()) != a.depth) throw DataError("decoder: skip count does not match depth");
  auto run = [&](int d) {
    Var x = enc.bottleneck;
    for (int l = a.depth - 1; l >= 0; --l) {
      x = ad::upsample2(x);
      x = ad::concat_channels({x, enc.skips[l]});
      for (int k = 0; k < a.convs_per_block; ++k) {
        const std::string pre = dec_prefix(kDecoderNames[d], l, k);
        x = ad::conv3x3(x, p[pre + ".weight"]);
        x = ad::leaky_relu(x, a.leaky_slope);
        x = ad::instance_norm(x, p[pre + ".in.gamma"], p[pre + ".in.beta"], a.norm_eps);
      }
    }
    const std::string out = std::string(kDecoderNames[d]) + ".out";
    return ad::conv3x3(x, p[out + ".weight"], p[out + ".bias"]);
  };
  DecoderOutput dec{run(0), run(1), std::nullopt};
  if (a.emit_gain) dec.gain = run(2);
  return dec;
}

ad::Tensor make_network_input(const ArchitectureConfig& arch,
                              const std::vector<std::vector<const ChromaHistogram*>>& samples) {
  const int n = arch.n;
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  std::vector<int> channels{0};
  if (arch.use_gradient) channels.push_back(1);
  if (arch.use_coords) {
    channels.push_back(2);
    channels.push_back(3);
  }
  const int rows = static_cast<int>(samples.size()) * arch.m;
  Tensor t({rows, static_cast<int>(channels.size()), n, n});
  std::size_t row = 0;
  for (const auto& set : samples) {
    if (static_cast<int>(set.size()) != arch.m) throw DataError("each sample needs exactly m feature stacks");
    for (const ChromaHistogram* h : set) {
      if (h->cfg.n != n) throw DataError("feature stack size differs from architecture n");
      for (std::size_t c = 0; c < channels.size(); ++c) {
        const auto src = h->channel(channels[c]);
        std::copy(src.begin(), src.end(), t.data() + (row * channels.size() + c) * plane);
      }
      ++row;
    }
  }
  return t;
}

ad::Tensor make_query_histograms(const std::vector<const ChromaHistogram*>& queries) {
  if (queries.empty()) throw DataError("no query histograms");
  const int n = queries.front()->cfg.n;
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  Tensor t({static_cast<int>(queries.size()), 2, n, n});
  for (std::size_t b = 0; b < queries.size(); ++b) {
    if (queries[b]->cfg.n != n) throw DataError("query histograms differ in size");
    std::copy(queries[b]->data.begin(), queries[b]->data.begin() + 2 * plane, t.data() + b * 2 * plane);
  }
  return t;
}

std::vector<const ChromaHistogram*> complete_inputs(const ChromaHistogram& query,
                                                    const std::vector<const ChromaHistogram*>& additional, int m) {
  std::vector<const ChromaHistogram*> set{&query};
  for (int j = 0; j + 1 < m; ++j) {
    set.push_back(additional.empty() ? &query : additional[j % additional.size()]);
  }
  return set;
}

CccHeadOutput ccc_head(Var query_hist, const DecoderOutput& dec, const HistogramConfig& cfg) {
  Var response = ad::channel_sum(ad::convolve2d(query_hist, dec.filters));
  if (dec.gain) response = ad::mul(*dec.gain, response);
  CccHeadOutput out;
  out.logits = ad::add(dec.bias, response);
  out.heatmap = ad::softmax2d(out.logits);
  std::vector<double> centers(cfg.n);
  for (int i = 0; i < cfg.n; ++i) centers[i] = cfg.bin_center(i);
  out.uv = ad::expectation2d(out.heatmap, centers, centers);
  out.rgb = ad::uv_to_rgb(out.uv);
  return out;
}

void apply_batchnorm_updates(NetworkWeights& w, const BatchNormUpdates& updates) {
  const double mom = w.arch().bn_momentum;
  for (const auto& [prefix, stats] : updates) {
    Parameter& rm = w.get(prefix + ".running_mean");
    Parameter& rv = w.get(prefix + ".running_var");
    for (std::size_t c = 0; c < rm.values.size(); ++c) {
      rm.values[c] = static_cast<float>(mom * rm.values[c] + (1.0 - mom) * stats.mean[c]);
      rv.values[c] = static_cast<float>(mom * rv.values[c] + (1.0 - mom) * stats.var[c]);
    }
  }
}

CccParams extract_params(const DecoderOutput& dec, int sample) {
  const Tensor& b = dec.bias.value();
  const int n = b.dim(2);
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  CccParams params = CccParams::zeros(n, dec.gain.has_value());
  std::copy(b.data() + sample * plane, b.data() + (sample + 1) * plane, params.bias.begin());
  const Tensor& f = dec.filters.value();
  for (int c = 0; c < 2; ++c) {
    const double* src = f.data() + (static_cast<std::size_t>(sample) * 2 + c) * plane;
    std::copy(src, src + plane, params.filters[c].begin());
  }
  if (dec.gain) {
    const Tensor& g = dec.gain->value();
    std::copy(g.data() + sample * plane, g.data() + (sample + 1) * plane, params.gain->begin());
  }
  return params;
}

std::vector<InferenceResult> c5_infer_batch(const NetworkWeights& w,
                                            const std::vector<std::vector<const ChromaHistogram*>>& sets,
                                            const HistogramConfig& cfg) {
  const ArchitectureConfig& a = w.arch();
  if (cfg.n != a.n) throw DataError("histogram size differs from network n");
  std::vector<InferenceResult> out;
  if (sets.empty()) return out;
  Tape tape;
  BoundParams p;
  for (const Parameter& q : w.params())
    if (q.trainable) p.vars[q.name] = tape.constant(Tensor(q.shape, as_double(q.values)));
  Var input = tape.constant(make_network_input(a, sets));
  const DecoderOutput dec = decode(w, p, encode(w, p, input, false, nullptr));
  out.reserve(sets.size());
  for (std::size_t b = 0; b < sets.size(); ++b) {
    InferenceResult r;
    r.params = extract_params(dec, static_cast<int>(b));
    r.heatmap = evaluate_ccc(*sets[b][0], r.params);
    r.illuminant = uv_to_rgb(soft_argmax(r.heatmap, cfg));
    out.push_back(std::move(r));
  }
  return out;
}

InferenceResult c5_infer_stacks(const NetworkWeights& w, const ChromaHistogram& query,
                                const std::vector<const ChromaHistogram*>& additional, const HistogramConfig& cfg) {
  if (query.cfg.n != w.arch().n) throw DataError("histogram size differs from network n");
  return std::move(c5_infer_batch(w, {complete_inputs(query, additional, w.arch().m)}, cfg).front());
}

InferenceResult c5_infer(const NetworkWeights& w, const RawImage& query, const std::vector<RawImage>& additional,
                         const HistogramConfig& cfg) {
  const ChromaHistogram q = assemble_feature_stack(query, cfg);
  std::vector<ChromaHistogram> extra;
  extra.reserve(additional.size());
  for (const RawImage& img : additional) extra.push_back(assemble_feature_stack(img, cfg));
  std::vector<const ChromaHistogram*> ptrs;
  for (const ChromaHistogram& h : extra) ptrs.push_back(&h);
  return c5_infer_stacks(w, q, ptrs, cfg);
}

}  // namespace c5cc
