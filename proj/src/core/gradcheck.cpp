#include "c5cc/gradcheck.hpp"

#include <functional>
#include <random>

#include "c5cc/network.hpp"
#include "c5cc/trainer.hpp"

namespace c5cc {

using namespace ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return t;
}

// Reduces with fixed random weights so each output element has its own
// upstream gradient.
Var weighted_sum(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, y.tape->constant(random_tensor(y.shape(), rng))));
}

using UnaryOp = std::function<Var(const std::vector<Var>&)>;

std::shared_ptr<const ChromaHistogram> random_stack(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.05, 1.0);
  RawImage img(12, 10);
  const Rgb tint{d(rng), d(rng), d(rng)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) img.set(x, y, {tint[0] * d(rng), tint[1] * d(rng), tint[2] * d(rng)});
  return std::make_shared<ChromaHistogram>(assemble_feature_stack(img, HistogramConfig{n, -2.85, 2.85}));
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckOptions& opt) {
  std::vector<GradCheckCase> out;
  std::mt19937_64 rng(opt.seed);
  std::uint64_t salt = opt.seed * 1000;
  auto run = [&](const std::string& name, const UnaryOp& op, const std::vector<Tensor>& leaves) {
    const std::uint64_t s = ++salt;
    const GradCheckReport r =
        grad_check([&](Tape&, const std::vector<Var>& v) { return weighted_sum(op(v), s); }, leaves, opt.step,
                   opt.tolerance);
    out.push_back({name, r.worst, r.passed});
  };

  const Tensor a = random_tensor({2, 3, 4}, rng);
  const Tensor b = random_tensor({2, 3, 4}, rng, 0.5, 2.0);
  run("add", [](auto& v) { return add(v[0], v[1]); }, {a, b});
  run("sub", [](auto& v) { return sub(v[0], v[1]); }, {a, b});
  run("mul", [](auto& v) { return mul(v[0], v[1]); }, {a, b});
  run("div", [](auto& v) { return div(v[0], v[1]); }, {a, b});
  run("scale", [](auto& v) { return scale(v[0], -2.5); }, {a});
  run("add_scalar", [](auto& v) { return add_scalar(v[0], 0.3); }, {a});
  run("exp", [](auto& v) { return exp(v[0]); }, {a});
  run("leaky_relu", [](auto& v) { return leaky_relu(v[0], 0.2); }, {a});
  run("arccos", [](auto& v) { return arccos(v[0]); }, {random_tensor({6}, rng, -0.9, 0.9)});
  run("reshape", [](auto& v) { return reshape(v[0], {4, 6}); }, {a});
  run("sum", [](auto& v) { return sum(v[0]); }, {a});
  run("mean", [](auto& v) { return mean(mul(v[0], v[0])); }, {a});
  run("sum_squares", [](auto& v) { return sum_squares(v[0]); }, {a});
  run("dot_last", [](auto& v) { return dot_last(v[0], v[1]); }, {a, b});
  run("norm_last", [](auto& v) { return norm_last(v[0]); }, {a});
  run("dot", [](auto& v) { return dot(v[0], v[1]); }, {a, b});
  run("l2_norm", [](auto& v) { return l2_norm(v[0]); }, {a});

  const Tensor x = random_tensor({2, 3, 6, 4}, rng);
  const Tensor w = random_tensor({2, 3, 3, 3}, rng);
  const Tensor bias = random_tensor({2}, rng);
  run("conv3x3", [](auto& v) { return conv3x3(v[0], v[1]); }, {x, w});
  run("conv3x3+bias", [](auto& v) { return conv3x3(v[0], v[1], v[2]); }, {x, w, bias});
  const Tensor y = random_tensor({2, 2, 6, 4}, rng);
  run("max_pool2", [](auto& v) { return max_pool2(v[0]); }, {x});
  run("upsample2", [](auto& v) { return upsample2(v[0]); }, {x});
  run("concat_channels", [](auto& v) { return concat_channels({v[0], v[1]}); }, {x, y});
  run("slice_channels", [](auto& v) { return slice_channels(v[0], 1, 2); }, {x});
  run("channel_sum", [](auto& v) { return channel_sum(v[0]); }, {x});

  const Tensor nx = random_tensor({3, 2, 3, 3}, rng);
  const Tensor g = random_tensor({2}, rng, 0.5, 1.5);
  const Tensor be = random_tensor({2}, rng);
  run("batch_norm(train)", [](auto& v) { return batch_norm(v[0], v[1], v[2], true, {}, {}, 1e-5); }, {nx, g, be});
  const std::vector<double> rm{0.1, -0.2}, rv{0.5, 2.0};
  run("batch_norm(eval)", [&](auto& v) { return batch_norm(v[0], v[1], v[2], false, rm, rv, 1e-5); }, {nx, g, be});
  run("instance_norm", [](auto& v) { return instance_norm(v[0], v[1], v[2], 1e-5); }, {nx, g, be});

  const Tensor br = random_tensor({6, 2, 2, 2}, rng);
  run("branch_max", [](auto& v) { return branch_max(v[0], 3); }, {br});
  run("branch_broadcast", [](auto& v) { return branch_broadcast(v[0], 3); }, {random_tensor({2, 2, 2, 2}, rng)});
  run("select_branch", [](auto& v) { return select_branch(v[0], 3, 1); }, {br});

  const Tensor logits = random_tensor({2, 1, 4, 4}, rng);
  run("softmax2d", [](auto& v) { return softmax2d(v[0]); }, {logits});
  const std::vector<double> uc{-1.5, -0.5, 0.5, 1.5}, vc{-1.2, -0.4, 0.4, 1.2};
  run("expectation2d", [&](auto& v) { return expectation2d(softmax2d(v[0]), uc, vc); }, {logits});
  run("uv_to_rgb", [](auto& v) { return uv_to_rgb(v[0]); }, {random_tensor({3, 2}, rng)});
  run("convolve2d", [](auto& v) { return convolve2d(v[0], v[1]); },
      {random_tensor({2, 2, 4, 4}, rng), random_tensor({2, 2, 4, 4}, rng)});
  const std::array<double, 9> sobel{-1, 0, 1, -2, 0, 2, -1, 0, 1};
  run("filter3x3_valid", [&](auto& v) { return filter3x3_valid(v[0], sobel); }, {random_tensor({2, 2, 5, 4}, rng)});

  if (!opt.include_end_to_end) return out;

  // Full training loss (angular error plus smoothness) on n = 16, depth 2, m = 3.
  TrainConfig cfg;
  cfg.arch.n = 16;
  cfg.arch.depth = 2;
  cfg.arch.m = 3;
  cfg.arch.base_channels = opt.e2e_base_channels;
  cfg.arch.convs_per_block = 1;
  cfg.arch.emit_gain = true;
  const NetworkWeights net = NetworkWeights::initialize(cfg.arch, opt.seed + 1);
  std::vector<std::shared_ptr<const ChromaHistogram>> stacks;
  for (int i = 0; i < 6; ++i) stacks.push_back(random_stack(16, rng));
  const std::vector<std::vector<const ChromaHistogram*>> sets{
      {stacks[0].get(), stacks[1].get(), stacks[2].get()}, {stacks[3].get(), stacks[4].get(), stacks[5].get()}};
  const Tensor input = make_network_input(cfg.arch, sets);
  const Tensor query = make_query_histograms({stacks[0].get(), stacks[3].get()});
  const Tensor target({2, 3}, std::vector<double>{0.5, 0.7, 0.5, 0.4, 0.8, 0.45});
  std::vector<Tensor> leaves;
  for (const Parameter& p : net.params())
    if (p.trainable) leaves.emplace_back(p.shape, std::vector<double>(p.values.begin(), p.values.end()));
  const HistogramConfig hcfg{16, -2.85, 2.85};
  auto loss = [&](Tape& tape, const std::vector<Var>& vars) {
    const BoundParams p = bind_params(net, vars);
    const DecoderOutput dec = decode(net, p, encode(net, p, tape.constant(input), true, nullptr));
    const CccHeadOutput head = ccc_head(tape.constant(query), dec, hcfg);
    return total_loss(head, dec, target, cfg).total;
  };
  const GradCheckReport r = grad_check(loss, leaves, opt.step, opt.tolerance);
  out.push_back({"end-to-end loss", r.worst, r.passed});
  return out;
}

}  // namespace c5cc
