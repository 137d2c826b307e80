#include "c5cc/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "c5cc/error.hpp"

namespace c5cc {

using ad::Tape;
using ad::Tensor;
using ad::Var;

// ---------------------------------------------------------------------------
// Configuration

int TrainConfig::batch_size_at(int epoch) const {
  std::size_t i = 0;
  while (i < batch_epochs.size() && epoch > batch_epochs[i]) ++i;
  return batch_sizes[std::min(i, batch_sizes.size() - 1)];
}

void TrainConfig::validate() const {
  arch.validate();
  if (epochs < 0) throw UsageError("epochs must be non-negative");
  if (!(lr > 0.0)) throw UsageError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0)) {
    throw UsageError("invalid Adam parameters");
  }
  if (weight_decay < 0.0 || lambda_f < 0.0 || lambda_b < 0.0 || lambda_g < 0.0) {
    throw UsageError("weight decay and smoothness multipliers must be non-negative");
  }
  if (batch_sizes.empty() || batch_epochs.size() + 1 != batch_sizes.size()) {
    throw UsageError("batch schedule needs one more size than switch epochs");
  }
  for (std::size_t i = 0; i < batch_sizes.size(); ++i) {
    if (batch_sizes[i] < 1) throw UsageError("batch sizes must be positive");
    if (i > 0 && batch_sizes[i] < batch_sizes[i - 1]) throw UsageError("batch sizes must be ascending");
  }
  for (std::size_t i = 1; i < batch_epochs.size(); ++i) {
    if (batch_epochs[i] <= batch_epochs[i - 1]) throw UsageError("batch switch epochs must increase");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw UsageError("validation fraction must be in [0, 1)");
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw UsageError("invalid value for '" + key + "': " + text);
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw UsageError("invalid boolean for '" + key + "': " + text);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<int>(key, item));
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw UsageError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(std::string_view(line).substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

TrainConfig train_config_from(std::map<std::string, std::string>& kv) {
  TrainConfig c;
  auto take = [&kv](const char* key, auto&& apply) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    apply(std::string(key), it->second);
    kv.erase(it);
  };
  auto as_int = [](int& dst) { return [&dst](const std::string& k, const std::string& v) { dst = parse_number<int>(k, v); }; };
  auto as_real = [](double& dst) {
    return [&dst](const std::string& k, const std::string& v) { dst = parse_number<double>(k, v); };
  };
  auto as_bool = [](bool& dst) { return [&dst](const std::string& k, const std::string& v) { dst = parse_bool(k, v); }; };
  take("epochs", as_int(c.epochs));
  take("lr", as_real(c.lr));
  take("beta1", as_real(c.beta1));
  take("beta2", as_real(c.beta2));
  take("adam_eps", as_real(c.adam_eps));
  take("weight_decay", as_real(c.weight_decay));
  take("lambda_f", as_real(c.lambda_f));
  take("lambda_b", as_real(c.lambda_b));
  take("lambda_g", as_real(c.lambda_g));
  take("batch_sizes", [&c](const std::string& k, const std::string& v) { c.batch_sizes = parse_int_list(k, v); });
  take("batch_epochs", [&c](const std::string& k, const std::string& v) { c.batch_epochs = parse_int_list(k, v); });
  take("validation_fraction", as_real(c.validation_fraction));
  take("seed", [&c](const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); });
  take("m", as_int(c.arch.m));
  take("depth", as_int(c.arch.depth));
  take("base_channels", as_int(c.arch.base_channels));
  take("n", as_int(c.arch.n));
  take("convs_per_block", as_int(c.arch.convs_per_block));
  take("emit_gain", as_bool(c.arch.emit_gain));
  take("use_gradient", as_bool(c.arch.use_gradient));
  take("use_coords", as_bool(c.arch.use_coords));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Loss

double angular_error(const Rgb& a, const Rgb& b) {
  const double na = std::hypot(a[0], a[1], a[2]);
  const double nb = std::hypot(b[0], b[1], b[2]);
  if (!(na > 0.0) || !(nb > 0.0)) throw DataError("angular error of a zero vector");
  const double c = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
  return std::acos(std::clamp(c, -1.0, 1.0));
}

namespace {

constexpr std::array<double, 9> kSobelU{-1, 0, 1, -2, 0, 2, -1, 0, 1};
constexpr std::array<double, 9> kSobelV{-1, -2, -1, 0, 0, 0, 1, 2, 1};

double sobel_energy(const std::vector<double>& map, int n) {
  double s = 0.0;
  for (int i = 1; i + 1 < n; ++i)
    for (int j = 1; j + 1 < n; ++j) {
      double gu = 0.0, gv = 0.0;
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
          const double x = map[static_cast<std::size_t>(i + a) * n + (j + b)];
          gu += kSobelU[(a + 1) * 3 + (b + 1)] * x;
          gv += kSobelV[(a + 1) * 3 + (b + 1)] * x;
        }
      s += gu * gu + gv * gv;
    }
  return s;
}

// [B, C, n, n] -> [B] sum of squared Sobel responses in both directions.
Var sobel_energy(Var maps) {
  const int b = maps.value().dim(0);
  Var total;
  for (const auto& k : {kSobelU, kSobelV}) {
    Var f = ad::filter3x3_valid(maps, k);
    f = ad::reshape(f, {b, static_cast<int>(f.value().size() / b)});
    Var e = ad::dot_last(f, f);
    total = total.tape ? ad::add(total, e) : e;
  }
  return total;
}

}  // namespace

double smoothness_penalty(const CccParams& params, double lambda_f, double lambda_b, double lambda_g) {
  params.validate();
  double s = lambda_b * sobel_energy(params.bias, params.n);
  for (const auto& f : params.filters) s += lambda_f * sobel_energy(f, params.n);
  if (params.gain) s += lambda_g * sobel_energy(*params.gain, params.n);
  return s;
}

Var smoothness_penalty(const DecoderOutput& dec, double lambda_f, double lambda_b, double lambda_g) {
  Var s = ad::add(ad::scale(sobel_energy(dec.bias), lambda_b), ad::scale(sobel_energy(dec.filters), lambda_f));
  if (dec.gain) s = ad::add(s, ad::scale(sobel_energy(*dec.gain), lambda_g));
  return s;
}

LossTerms total_loss(const CccHeadOutput& head, const DecoderOutput& dec, const Tensor& targets,
                     const TrainConfig& cfg) {
  Tape& tape = *head.rgb.tape;
  if (targets.shape() != head.rgb.shape()) throw DataError("loss targets do not match the batch");
  Var t = tape.constant(targets);
  Var cosine = ad::div(ad::dot_last(head.rgb, t), ad::mul(ad::norm_last(head.rgb), ad::norm_last(t)));
  LossTerms out;
  out.angular = ad::scale(ad::arccos(cosine), 180.0 / std::numbers::pi);
  out.smoothness = smoothness_penalty(dec, cfg.lambda_f, cfg.lambda_b, cfg.lambda_g);
  out.total = ad::mean(ad::add(out.angular, out.smoothness));
  if (!std::isfinite(out.total.value().item())) throw NumericalError("loss is not finite");
  return out;
}

double lr_at(long step, long total_steps, double lr_initial) {
  if (total_steps <= 0) return lr_initial;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
  return lr_initial * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_update(std::vector<float>& w, const std::vector<double>& g, std::vector<double>& m, std::vector<double>& v,
                 long t, double lr, const TrainConfig& cfg) {
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
    throw DataError("Adam state does not match parameter size");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = m[i] / c1, vhat = v[i] / c2;
    const double wi = w[i];
    w[i] = static_cast<float>(wi - lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps)) - lr * cfg.weight_decay * wi);
  }
}

void adam_step(NetworkWeights& w, const std::map<std::string, std::vector<double>>& grads, AdamState& state,
               double lr, const TrainConfig& cfg) {
  for (const auto& [name, g] : grads)
    for (double x : g)
      if (!std::isfinite(x)) throw NumericalError("non-finite gradient in " + name);
  ++state.t;
  for (Parameter& p : w.params()) {
    if (!p.trainable) continue;
    auto it = grads.find(p.name);
    if (it == grads.end()) throw DataError("missing gradient for " + p.name);
    auto& m = state.m[p.name];
    auto& v = state.v[p.name];
    if (m.empty()) {
      m.assign(p.values.size(), 0.0);
      v.assign(p.values.size(), 0.0);
    }
    adam_update(p.values, it->second, m, v, state.t, lr, cfg);
  }
}

// ---------------------------------------------------------------------------
// Sampling

std::map<std::string, std::vector<int>> group_by_camera(const std::vector<LabeledSample>& data) {
  std::map<std::string, std::vector<int>> g;
  for (int i = 0; i < static_cast<int>(data.size()); ++i) g[data[i].camera].push_back(i);
  return g;
}

namespace {

// `count` picks from `candidates`, distinct while possible, then cycling.
std::vector<int> pick(std::vector<int> candidates, int count, std::mt19937_64& rng) {
  std::vector<int> out;
  if (candidates.empty() || count <= 0) return out;
  std::shuffle(candidates.begin(), candidates.end(), rng);
  for (int j = 0; j < count; ++j) out.push_back(candidates[j % candidates.size()]);
  return out;
}

}  // namespace

std::vector<int> draw_additional(const std::vector<LabeledSample>& data,
                                 const std::map<std::string, std::vector<int>>& by_camera, int query, int m,
                                 std::mt19937_64& rng) {
  auto it = by_camera.find(data.at(query).camera);
  if (it == by_camera.end()) throw DataError("query camera missing from camera index");
  std::vector<int> others;
  for (int i : it->second)
    if (i != query) others.push_back(i);
  if (others.empty()) return std::vector<int>(m - 1, query);
  return pick(std::move(others), m - 1, rng);
}

std::vector<std::vector<BatchItem>> sample_epoch(const std::vector<LabeledSample>& data, int batch_size, int m,
                                                 std::mt19937_64& rng) {
  if (data.empty()) throw DataError("cannot sample batches from an empty dataset");
  if (batch_size < 1) throw UsageError("batch size must be positive");
  const auto by_camera = group_by_camera(data);
  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<BatchItem>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::vector<BatchItem> batch;
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
      batch.push_back({order[i], draw_additional(data, by_camera, order[i], m, rng)});
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

void split_validation(const std::vector<LabeledSample>& data, double fraction, std::mt19937_64& rng,
                      std::vector<LabeledSample>& train, std::vector<LabeledSample>& validation) {
  train.clear();
  validation.clear();
  std::vector<bool> held(data.size(), false);
  for (auto& [camera, idx] : group_by_camera(data)) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto k = std::min(static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size()))),
                            idx.size() - 1);
    for (std::size_t i = 0; i < k; ++i) held[idx[i]] = true;
  }
  for (std::size_t i = 0; i < data.size(); ++i) (held[i] ? validation : train).push_back(data[i]);
}

// ---------------------------------------------------------------------------
// Training loop

std::string metrics_header() {
  return "epoch\tbatch_size\tlr\ttrain_loss\ttrain_angular_deg\tval_angular_deg\tbest_val_deg\tseconds";
}

std::string format_metrics(const EpochMetrics& e) {
  std::ostringstream os;
  os.precision(6);
  os << e.epoch << '\t' << e.batch_size << '\t' << e.lr << '\t' << e.train_loss << '\t' << e.train_angular_deg << '\t'
     << e.val_angular_deg << '\t' << e.best_val_deg << '\t' << e.seconds;
  return os.str();
}

double mean_error_deg(const NetworkWeights& w, const std::vector<LabeledSample>& queries,
                      const std::vector<LabeledSample>& pool, std::uint64_t seed) {
  if (queries.empty()) throw DataError("no queries to evaluate");
  const int m = w.arch().m;
  const auto by_camera = group_by_camera(pool);
  std::mt19937_64 rng(seed);
  const HistogramConfig cfg{w.arch().n, -2.85, 2.85};
  double total = 0.0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < queries.size(); start += kChunk) {
    std::vector<std::vector<const ChromaHistogram*>> sets;
    const std::size_t end = std::min(queries.size(), start + kChunk);
    for (std::size_t q = start; q < end; ++q) {
      std::vector<int> candidates;
      if (auto it = by_camera.find(queries[q].camera); it != by_camera.end()) {
        for (int i : it->second)
          if (pool[i].features != queries[q].features) candidates.push_back(i);
      }
      std::vector<const ChromaHistogram*> extra;
      for (int i : pick(std::move(candidates), m - 1, rng)) extra.push_back(pool[i].features.get());
      sets.push_back(complete_inputs(*queries[q].features, extra, m));
    }
    const auto results = c5_infer_batch(w, sets, cfg);
    for (std::size_t q = start; q < end; ++q) {
      total += degrees(angular_error(results[q - start].illuminant, queries[q].illuminant));
    }
  }
  return total / static_cast<double>(queries.size());
}

namespace {

struct StepResult {
  double loss = 0.0;
  double angular_sum = 0.0;
  std::map<std::string, std::vector<double>> grads;
  BatchNormUpdates bn;
};

StepResult forward_backward(const NetworkWeights& w, const std::vector<LabeledSample>& data,
                            const std::vector<BatchItem>& batch, const TrainConfig& cfg) {
  const ArchitectureConfig& a = w.arch();
  std::vector<std::vector<const ChromaHistogram*>> sets;
  Tensor targets({static_cast<int>(batch.size()), 3});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::vector<const ChromaHistogram*> set{data[batch[b].query].features.get()};
    for (int j : batch[b].additional) set.push_back(data[j].features.get());
    sets.push_back(std::move(set));
    for (int c = 0; c < 3; ++c) targets[b * 3 + c] = data[batch[b].query].illuminant[c];
  }
  Tape tape;
  const BoundParams p = bind_params(tape, w);
  Var input = tape.constant(make_network_input(a, sets));
  StepResult r;
  const EncoderOutput enc = encode(w, p, input, true, &r.bn);
  const DecoderOutput dec = decode(w, p, enc);
  std::vector<const ChromaHistogram*> queries;
  for (const auto& set : sets) queries.push_back(set.front());
  Var query = tape.constant(make_query_histograms(queries));
  const CccHeadOutput head = ccc_head(query, dec, cfg.histogram());
  const LossTerms loss = total_loss(head, dec, targets, cfg);
  tape.backward(loss.total);
  r.loss = loss.total.value().item();
  for (double v : loss.angular.value().values()) r.angular_sum += v;
  for (const auto& [name, var] : p.vars) {
    const Tensor& g = var.grad();
    r.grads[name].assign(g.values().begin(), g.values().end());
  }
  return r;
}

}  // namespace

TrainResult train(const std::vector<LabeledSample>& train_set, const std::vector<LabeledSample>& validation,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  for (const auto* set : {&train_set, &validation})
    for (const LabeledSample& s : *set) {
      if (!s.features || s.features->cfg.n != cfg.arch.n) throw DataError("sample features do not match n");
    }
  std::seed_seq seq{cfg.seed, std::uint64_t{0x5eed}};
  std::mt19937_64 rng(seq);
  TrainResult result;
  result.final_weights = NetworkWeights::initialize(cfg.arch, rng());
  result.best_weights = result.final_weights;
  if (cfg.epochs == 0) return result;

  const long n = static_cast<long>(train_set.size());
  long total_steps = 0;
  for (int e = 1; e <= cfg.epochs; ++e) {
    const long bs = std::min<long>(cfg.batch_size_at(e), n);
    total_steps += (n + bs - 1) / bs;
  }
  std::vector<LabeledSample> pool = train_set;
  pool.insert(pool.end(), validation.begin(), validation.end());
  const std::uint64_t val_seed = rng();

  NetworkWeights& w = result.final_weights;
  AdamState adam;
  long step = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochMetrics em;
    em.epoch = epoch;
    em.batch_size = static_cast<int>(std::min<long>(cfg.batch_size_at(epoch), n));
    double loss_sum = 0.0, ang_sum = 0.0;
    for (const auto& batch : sample_epoch(train_set, em.batch_size, cfg.arch.m, rng)) {
      em.lr = lr_at(step, total_steps, cfg.lr);
      try {
        StepResult r = forward_backward(w, train_set, batch, cfg);
        adam_step(w, r.grads, adam, em.lr, cfg);
        apply_batchnorm_updates(w, r.bn);
        loss_sum += r.loss * static_cast<double>(batch.size());
        ang_sum += r.angular_sum;
      } catch (const NumericalError& e) {
        // adam_step validates gradients before writing, so `w` still holds
        // the last good weights here.
        result.diverged = true;
        result.diagnostic = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step) + ": " + e.what();
        return result;
      }
      ++step;
    }
    em.train_loss = loss_sum / static_cast<double>(n);
    em.train_angular_deg = ang_sum / static_cast<double>(n);
    em.val_angular_deg = mean_error_deg(w, validation.empty() ? train_set : validation, pool, val_seed);
    if (em.val_angular_deg < best) {
      best = em.val_angular_deg;
      result.best_weights = w;
    }
    em.best_val_deg = best;
    em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  return result;
}

}  // namespace c5cc
