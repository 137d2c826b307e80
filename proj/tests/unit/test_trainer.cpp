#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "c5cc/error.hpp"
#include "c5cc/trainer.hpp"

using namespace c5cc;
using ad::Tape;
using ad::Tensor;

namespace {

std::shared_ptr<const ChromaHistogram> random_stack(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.05, 1.0);
  RawImage img(12, 10);
  const Rgb tint{d(rng), d(rng), d(rng)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) img.set(x, y, {tint[0] * d(rng), tint[1] * d(rng), tint[2] * d(rng)});
  return std::make_shared<ChromaHistogram>(assemble_feature_stack(img, HistogramConfig{n, -2.85, 2.85}));
}

std::vector<LabeledSample> toy_dataset(int n, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.3, 1.0);
  std::vector<LabeledSample> out;
  for (int i = 0; i < count; ++i) {
    Rgb l{d(rng), 1.0, d(rng)};
    const double s = std::hypot(l[0], l[1], l[2]);
    for (double& c : l) c /= s;
    out.push_back({random_stack(n, rng), l, "cam" + std::to_string(i % 3)});
  }
  return out;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.arch.n = 16;
  c.arch.depth = 2;
  c.arch.base_channels = 4;
  c.arch.convs_per_block = 1;
  c.arch.m = 3;
  c.epochs = 5;
  c.lr = 3e-3;
  c.batch_sizes = {4, 8};
  c.batch_epochs = {3};
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("angular error") {
  CHECK(angular_error({1, 2, 3}, {1, 2, 3}) == doctest::Approx(0.0));
  CHECK(degrees(angular_error({1, 0, 0}, {0, 1, 0})) == doctest::Approx(90.0));
  CHECK(angular_error({0.3, 0.5, 0.2}, {0.6, 1.0, 0.4}) == doctest::Approx(0.0));
  CHECK(angular_error({0.3, 0.5, 0.2}, {0.1, 0.9, 0.2}) == doctest::Approx(angular_error({0.1, 0.9, 0.2}, {0.3, 0.5, 0.2})));
  CHECK(angular_error({1, 0.2, 0.4}, {0.2, 0.4, 0.9}) ==
        doctest::Approx(angular_error({1, 0.2, 0.4}, {0.4, 0.8, 1.8})));
  CHECK_THROWS_AS(angular_error({0, 0, 0}, {1, 1, 1}), DataError);
}

TEST_CASE("smoothness penalty") {
  CccParams p = CccParams::zeros(8);
  for (double& v : p.bias) v = 3.0;
  for (auto& f : p.filters)
    for (double& v : f) v = -1.5;
  CHECK(smoothness_penalty(p, 0.15, 0.02, 0.02) == 0.0);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) p.bias[r * 8 + c] = c;
  CHECK(smoothness_penalty(p, 0.0, 0.0, 0.0) == 0.0);
  // Frozen from scipy.signal.convolve2d(ramp, sobel, 'valid'): 2304.
  CHECK(smoothness_penalty(p, 0.15, 0.02, 0.02) == doctest::Approx(0.02 * 2304.0));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d;
  for (int trial = 0; trial < 20; ++trial) {
    CccParams q = CccParams::zeros(8, true);
    for (double& v : q.bias) v = d(rng);
    for (double& v : *q.gain) v = d(rng);
    CHECK(smoothness_penalty(q, 0.15, 0.02, 0.02) > 0.0);
  }
}

TEST_CASE("differentiable smoothness agrees with the direct form") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> d;
  Tape tape;
  Tensor bias({2, 1, 8, 8}), filters({2, 2, 8, 8}), gain({2, 1, 8, 8});
  for (auto* t : {&bias, &filters, &gain})
    for (double& v : t->values()) v = d(rng);
  DecoderOutput dec{tape.constant(bias), tape.constant(filters), tape.constant(gain)};
  const ad::Var s = smoothness_penalty(dec, 0.15, 0.02, 0.03);
  for (int b = 0; b < 2; ++b) {
    const CccParams p = extract_params(dec, b);
    CHECK(s.value()[b] == doctest::Approx(smoothness_penalty(p, 0.15, 0.02, 0.03)).epsilon(1e-12));
  }
}

TEST_CASE("total loss") {
  Tape tape;
  TrainConfig cfg;
  cfg.lambda_f = cfg.lambda_b = cfg.lambda_g = 0.0;
  auto head_for = [&tape](const Tensor& rgb) {
    CccHeadOutput h;
    h.rgb = tape.constant(rgb);
    return h;
  };
  DecoderOutput zero{tape.constant(Tensor({2, 1, 4, 4})), tape.constant(Tensor({2, 2, 4, 4})), std::nullopt};
  const double s14 = std::sqrt(14.0), s110 = std::sqrt(1.1), s70 = std::sqrt(0.7);
  const Tensor pred({2, 3}, std::vector<double>{1 / s14, 2 / s14, 3 / s14, 0.2 / s110, 0.5 / s110, 0.9 / s110});
  const double r3 = 1 / std::sqrt(3.0);
  const Tensor target({2, 3}, std::vector<double>{r3, r3, r3, 0.3 / s70, 0.6 / s70, 0.5 / s70});
  // Hand-evaluated mean of the two arccos terms, in degrees.
  CHECK(total_loss(head_for(pred), zero, target, cfg).total.value().item() ==
        doctest::Approx(0.3911890330005585 * 57.29577951308232).epsilon(1e-10));
  CHECK(total_loss(head_for(target), zero, target, cfg).total.value().item() == doctest::Approx(0.0).epsilon(1e-6));
  DecoderOutput one{tape.constant(Tensor({1, 1, 4, 4})), tape.constant(Tensor({1, 2, 4, 4})), std::nullopt};
  const Tensor p1({1, 3}, std::vector<double>{1 / s14, 2 / s14, 3 / s14});
  const Tensor t1({1, 3}, std::vector<double>{r3, r3, r3});
  CHECK(total_loss(head_for(p1), one, t1, cfg).total.value().item() ==
        doctest::Approx(degrees(angular_error({1, 2, 3}, {1, 1, 1}))).epsilon(1e-12));
}

TEST_CASE("cosine learning rate") {
  CHECK(lr_at(0, 100, 5e-4) == 5e-4);
  CHECK(lr_at(100, 100, 5e-4) == doctest::Approx(0.0));
  CHECK(lr_at(50, 100, 5e-4) == doctest::Approx(2.5e-4));
  for (long s = 1; s <= 100; ++s) CHECK(lr_at(s, 100, 1.0) <= lr_at(s - 1, 100, 1.0));
}

TEST_CASE("Adam update") {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<float> w{0.5f, -1.0f, 2.0f};
  std::vector<double> m(3, 0.0), v(3, 0.0);
  adam_update(w, {0.0, 0.0, 0.0}, m, v, 1, 1e-2, cfg);
  CHECK(w == std::vector<float>{0.5f, -1.0f, 2.0f});

  const std::vector<double> g{0.3, -2.0, 1e-3};
  m.assign(3, 0.0);
  v.assign(3, 0.0);
  const std::vector<float> before = w;
  adam_update(w, g, m, v, 1, 1e-2, cfg);
  for (int i = 0; i < 3; ++i) {
    const double expect = before[i] - 1e-2 * g[i] / (std::abs(g[i]) + cfg.adam_eps);
    CHECK(w[i] == doctest::Approx(expect).epsilon(1e-6));
  }

  cfg.weight_decay = 0.1;
  m.assign(3, 0.0);
  v.assign(3, 0.0);
  std::vector<float> d{1.0f, -2.0f, 4.0f};
  adam_update(d, {0.0, 0.0, 0.0}, m, v, 1, 0.5, cfg);
  CHECK(d[0] == doctest::Approx(0.95f));
  CHECK(d[1] == doctest::Approx(-1.9f));
  CHECK(d[2] == doctest::Approx(3.8f));
}

TEST_CASE("adam_step rejects non-finite gradients without touching weights") {
  ArchitectureConfig a;
  a.n = 8;
  a.depth = 1;
  a.base_channels = 2;
  a.convs_per_block = 1;
  a.m = 2;
  NetworkWeights w = NetworkWeights::initialize(a, 1);
  const NetworkWeights before = w;
  std::map<std::string, std::vector<double>> grads;
  for (const Parameter& p : w.params())
    if (p.trainable) grads[p.name].assign(p.values.size(), 0.1);
  grads.begin()->second[0] = std::nan("");
  AdamState st;
  CHECK_THROWS_AS(adam_step(w, grads, st, 1e-3, TrainConfig{}), NumericalError);
  CHECK(w == before);
}

TEST_CASE("batch schedule") {
  TrainConfig c;
  CHECK(c.batch_size_at(1) == 16);
  CHECK(c.batch_size_at(20) == 16);
  CHECK(c.batch_size_at(21) == 32);
  CHECK(c.batch_size_at(41) == 64);
  CHECK(c.batch_size_at(60) == 64);
  c.batch_sizes = {32, 16};
  c.batch_epochs = {10};
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("config parsing") {
  auto kv = parse_key_values("# comment\nepochs = 3\nlr=0.01  # trailing\nbatch_sizes = 2, 4\nbatch_epochs = 1\n"
                             "n = 16\ndepth = 2\nemit_gain = true\ntrain_manifest = a.jsonl\n");
  const TrainConfig c = train_config_from(kv);
  CHECK(c.epochs == 3);
  CHECK(c.lr == 0.01);
  CHECK(c.batch_sizes == std::vector<int>{2, 4});
  CHECK(c.arch.emit_gain);
  CHECK(kv.size() == 1);
  CHECK(kv.at("train_manifest") == "a.jsonl");
  auto bad = parse_key_values("epochs = three\n");
  CHECK_THROWS_AS(train_config_from(bad), UsageError);
  CHECK_THROWS_AS(parse_key_values("no equals sign\n"), UsageError);
}

TEST_CASE("additional image sampling") {
  auto data = toy_dataset(8, 1, 1);
  data[0].camera = "solo";
  const auto by_cam = group_by_camera(data);
  std::mt19937_64 rng(1);
  CHECK(draw_additional(data, by_cam, 0, 3, rng) == std::vector<int>{0, 0});

  auto many = toy_dataset(8, 30, 2);
  const auto groups = group_by_camera(many);
  for (int q = 0; q < 30; ++q) {
    const auto extra = draw_additional(many, groups, q, 9, rng);
    REQUIRE(extra.size() == 8);
    std::set<int> distinct(extra.begin(), extra.end());
    CHECK(distinct.size() == 8);
    for (int j : extra) {
      CHECK(j != q);
      CHECK(many[j].camera == many[q].camera);
    }
  }
}

TEST_CASE("epoch sampling visits every query once and is seed-deterministic") {
  auto data = toy_dataset(8, 23, 3);
  std::mt19937_64 a(5), b(5);
  const auto ea = sample_epoch(data, 4, 3, a);
  const auto eb = sample_epoch(data, 4, 3, b);
  std::multiset<int> seen;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    REQUIRE(ea[i].size() == eb[i].size());
    for (std::size_t j = 0; j < ea[i].size(); ++j) {
      CHECK(ea[i][j].query == eb[i][j].query);
      CHECK(ea[i][j].additional == eb[i][j].additional);
      seen.insert(ea[i][j].query);
    }
  }
  CHECK(seen.size() == 23);
  CHECK(std::set<int>(seen.begin(), seen.end()).size() == 23);
  CHECK(ea.back().size() == 3);
}

TEST_CASE("validation split is stratified by camera") {
  auto data = toy_dataset(8, 60, 4);
  std::mt19937_64 rng(1);
  std::vector<LabeledSample> tr, va;
  split_validation(data, 0.1, rng, tr, va);
  CHECK(va.size() == 6);
  CHECK(tr.size() == 54);
  std::map<std::string, int> per;
  for (const auto& s : va) ++per[s.camera];
  for (const auto& [cam, k] : per) CHECK(k == 2);
}

TEST_CASE("zero epochs return the initial weights") {
  TrainConfig c = tiny_config();
  c.epochs = 0;
  const auto data = toy_dataset(16, 6, 5);
  const TrainResult r = train(data, {}, c);
  CHECK(r.metrics.empty());
  CHECK(r.final_weights == r.best_weights);
  TrainConfig c2 = c;
  c2.epochs = 0;
  CHECK(train(data, {}, c2).final_weights == r.final_weights);
}

TEST_CASE("toy training run") {
  const TrainConfig c = tiny_config();
  const auto data = toy_dataset(16, 24, 6);
  std::mt19937_64 rng(c.seed);
  std::vector<LabeledSample> tr, va;
  split_validation(data, 0.25, rng, tr, va);
  const TrainResult r = train(tr, va, c);
  CHECK_FALSE(r.diverged);
  REQUIRE(r.metrics.size() == 5);
  for (std::size_t i = 1; i < r.metrics.size(); ++i) CHECK(r.metrics[i].best_val_deg <= r.metrics[i - 1].best_val_deg);
  CHECK(r.metrics[0].batch_size == 4);
  CHECK(r.metrics[4].batch_size == 8);
  CHECK(r.metrics.back().train_loss < r.metrics.front().train_loss);
  // Same seed, same result.
  const TrainResult again = train(tr, va, c);
  CHECK(again.final_weights == r.final_weights);
  CHECK(again.metrics.back().val_angular_deg == r.metrics.back().val_angular_deg);
}

TEST_CASE("a small step against the gradient lowers the loss") {
  TrainConfig c = tiny_config();
  c.lambda_f = c.lambda_b = c.lambda_g = 0.0;
  const auto data = toy_dataset(16, 3, 8);
  NetworkWeights w = NetworkWeights::initialize(c.arch, 2);
  auto loss_of = [&](const NetworkWeights& weights, std::map<std::string, std::vector<double>>* grads) {
    Tape tape;
    const BoundParams p = bind_params(tape, weights);
    std::vector<const ChromaHistogram*> set{data[0].features.get(), data[1].features.get(), data[2].features.get()};
    ad::Var input = tape.constant(make_network_input(c.arch, {set}));
    // Inference-mode normalization keeps the objective a function of one sample.
    const DecoderOutput dec = decode(weights, p, encode(weights, p, input, false, nullptr));
    const CccHeadOutput head = ccc_head(tape.constant(make_query_histograms({set[0]})), dec, c.histogram());
    Tensor t({1, 3}, std::vector<double>(data[0].illuminant.begin(), data[0].illuminant.end()));
    const LossTerms l = total_loss(head, dec, t, c);
    if (grads) {
      tape.backward(l.total);
      for (const auto& [name, v] : p.vars) (*grads)[name].assign(v.grad().values().begin(), v.grad().values().end());
    }
    return l.total.value().item();
  };
  std::map<std::string, std::vector<double>> g;
  const double before = loss_of(w, &g);
  double gnorm = 0.0;
  for (const auto& [n, v] : g)
    for (double x : v) gnorm += x * x;
  const double step = 1e-3 / std::sqrt(gnorm);
  for (Parameter& p : w.params()) {
    if (!p.trainable) continue;
    const auto& gv = g.at(p.name);
    for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] -= static_cast<float>(step * gv[i]);
  }
  CHECK(loss_of(w, nullptr) < before);
}
