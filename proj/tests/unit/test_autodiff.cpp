#include <doctest.h>

#include <cmath>
#include <random>

#include "c5cc/autodiff.hpp"
#include "c5cc/error.hpp"

using namespace c5cc;
using namespace c5cc::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return t;
}

// Random weights for reducing a tensor to a scalar so every output element
// contributes its own gradient.
Var weighted_sum(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(y.shape(), rng);
  return sum(mul(y, y.tape->constant(w)));
}

void check(const GraphBuilder& f, const std::vector<Tensor>& leaves, double tol = 1e-6) {
  const GradCheckReport r = grad_check(f, leaves, 1e-5, tol);
  INFO("worst relative error " << r.worst);
  CHECK(r.passed);
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.dim(-1) == 3);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DataError);
  CHECK(Tensor::scalar(2.0).item() == 2.0);
}

TEST_CASE("backward requires a scalar output") {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, 1.0));
  CHECK_THROWS_AS(tape.backward(x), DataError);
}

TEST_CASE("gradient of x*x + x accumulates over both uses") {
  Tape tape;
  Var x = tape.leaf(Tensor({1}, 3.0));
  Var y = sum(add(mul(x, x), x));
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("constants receive no gradient requirement") {
  Tape tape;
  Var c = tape.constant(Tensor({2}, 1.0));
  Var y = sum(scale(c, 2.0));
  CHECK_FALSE(tape.requires_grad(y.id));
}

TEST_CASE("elementwise ops pass finite differences") {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({2, 3, 4}, rng);
  const Tensor b = random_tensor({2, 3, 4}, rng, 0.5, 2.0);
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(add(v[0], v[1]), 1); }, {a, b});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(sub(v[0], v[1]), 2); }, {a, b});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(mul(v[0], v[1]), 3); }, {a, b});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(div(v[0], v[1]), 4); }, {a, b});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(scale(v[0], -2.5), 5); }, {a});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(add_scalar(v[0], 0.3), 6); }, {a});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(exp(v[0]), 7); }, {a});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(leaky_relu(v[0], 0.2), 8); }, {a});
  const Tensor c = random_tensor({5}, rng, -0.9, 0.9);
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(arccos(v[0]), 9); }, {c});
}

TEST_CASE("reductions pass finite differences") {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({3, 4}, rng);
  check([](Tape&, const std::vector<Var>& v) { return sum(v[0]); }, {a});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(reshape(v[0], {2, 6}), 30); }, {a});
  check([](Tape&, const std::vector<Var>& v) { return mean(mul(v[0], v[0])); }, {a});
  check([](Tape&, const std::vector<Var>& v) { return sum_squares(v[0]); }, {a});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(dot_last(v[0], v[1]), 10); }, {a, b});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(norm_last(v[0]), 11); }, {a});
  check([](Tape&, const std::vector<Var>& v) { return dot(v[0], v[1]); }, {a, b});
  check([](Tape&, const std::vector<Var>& v) { return l2_norm(v[0]); }, {a});
}

TEST_CASE("arccos is clamped and has zero slope outside the domain") {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, std::vector<double>{1.0, -1.5}));
  Var y = sum(arccos(x));
  CHECK(std::isfinite(y.value().item()));
  tape.backward(y);
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("conv3x3 passes finite differences with and without bias") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({2, 3, 5, 4}, rng);
  const Tensor w = random_tensor({2, 3, 3, 3}, rng);
  const Tensor b = random_tensor({2}, rng);
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(conv3x3(v[0], v[1]), 12); }, {x, w});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(conv3x3(v[0], v[1], v[2]), 13); }, {x, w, b});
}

TEST_CASE("conv3x3 matches a hand-computed correlation") {
  // Single channel 3x3 input, kernel with a single 1 at the top-left tap:
  // out(y, x) = in(y - 1, x - 1) with zero padding.
  Tape tape;
  Tensor x({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w({1, 1, 3, 3}, 0.0);
  w[0] = 1.0;
  Var y = conv3x3(tape.constant(x), tape.constant(w));
  const std::vector<double> expect{0, 0, 0, 0, 1, 2, 0, 4, 5};
  for (int i = 0; i < 9; ++i) CHECK(y.value()[i] == expect[i]);
}

TEST_CASE("pooling, upsampling and channel ops pass finite differences") {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({2, 3, 4, 6}, rng);
  const Tensor y = random_tensor({2, 2, 4, 6}, rng);
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(max_pool2(v[0]), 14); }, {x});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(upsample2(v[0]), 15); }, {x});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(concat_channels({v[0], v[1]}), 16); }, {x, y});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(slice_channels(v[0], 1, 2), 17); }, {x});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(channel_sum(v[0]), 18); }, {x});
}

TEST_CASE("upsample2 uses half-pixel bilinear sampling") {
  Tape tape;
  Var x = tape.constant(Tensor({1, 1, 1, 2}, std::vector<double>{0.0, 4.0}));
  Var y = upsample2(x);
  // Output columns sit at input positions -0.25, 0.25, 0.75, 1.25 (clamped).
  const std::vector<double> expect{0.0, 1.0, 3.0, 4.0};
  for (int i = 0; i < 4; ++i) CHECK(y.value()[i] == doctest::Approx(expect[i]));
}

TEST_CASE("normalization layers pass finite differences") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({3, 2, 3, 3}, rng);
  const Tensor g = random_tensor({2}, rng, 0.5, 1.5);
  const Tensor b = random_tensor({2}, rng);
  check(
      [](Tape&, const std::vector<Var>& v) {
        return weighted_sum(batch_norm(v[0], v[1], v[2], true, {}, {}, 1e-5), 19);
      },
      {x, g, b});
  const std::vector<double> rm{0.1, -0.2}, rv{0.5, 2.0};
  check(
      [&](Tape&, const std::vector<Var>& v) {
        return weighted_sum(batch_norm(v[0], v[1], v[2], false, rm, rv, 1e-5), 20);
      },
      {x, g, b});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(instance_norm(v[0], v[1], v[2], 1e-5), 21); },
        {x, g, b});
}

TEST_CASE("batch norm output has zero mean and unit variance per channel") {
  std::mt19937_64 rng(6);
  Tape tape;
  const Tensor x = random_tensor({4, 2, 5, 5}, rng, -20.0, 20.0);
  BatchStatistics stats;
  Var y = batch_norm(tape.constant(x), tape.constant(Tensor({2}, 1.0)), tape.constant(Tensor({2}, 0.0)), true, {},
                     {}, 1e-5, &stats);
  REQUIRE(stats.mean.size() == 2);
  for (int c = 0; c < 2; ++c) {
    double s = 0, ss = 0;
    int count = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) {
        const double v = y.value()[(n * 2 + c) * 25 + i];
        s += v;
        ss += v * v;
        ++count;
      }
    CHECK(std::abs(s / count) < 1e-9);
    CHECK(ss / count == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("branch ops pass finite differences") {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({6, 2, 2, 2}, rng);  // B = 2, m = 3
  const Tensor s = random_tensor({2, 2, 2, 2}, rng);
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(branch_max(v[0], 3), 22); }, {x});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(branch_broadcast(v[0], 3), 23); }, {s});
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(select_branch(v[0], 3, 1), 24); }, {x});
}

TEST_CASE("branch_max is invariant to branch order") {
  std::mt19937_64 rng(8);
  Tape tape;
  Tensor x = random_tensor({3, 1, 2, 2}, rng);
  Tensor perm({3, 1, 2, 2});
  const int order[3] = {2, 0, 1};
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 4; ++i) perm[j * 4 + i] = x[order[j] * 4 + i];
  Var a = branch_max(tape.constant(x), 3);
  Var b = branch_max(tape.constant(perm), 3);
  for (int i = 0; i < 4; ++i) CHECK(a.value()[i] == b.value()[i]);
}

TEST_CASE("CCC head ops pass finite differences") {
  std::mt19937_64 rng(9);
  const Tensor logits = random_tensor({2, 1, 4, 4}, rng);
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(softmax2d(v[0]), 25); }, {logits});
  const std::vector<double> uc{-1.5, -0.5, 0.5, 1.5}, vc{-1.2, -0.4, 0.4, 1.2};
  check(
      [&](Tape&, const std::vector<Var>& v) { return weighted_sum(expectation2d(softmax2d(v[0]), uc, vc), 26); },
      {logits});
  const Tensor uv = random_tensor({3, 2}, rng);
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(uv_to_rgb(v[0]), 27); }, {uv});
  const Tensor x = random_tensor({2, 2, 4, 4}, rng);
  const Tensor k = random_tensor({2, 2, 4, 4}, rng);
  check([](Tape&, const std::vector<Var>& v) { return weighted_sum(convolve2d(v[0], v[1]), 28); }, {x, k});
  const std::array<double, 9> sobel{-1, 0, 1, -2, 0, 2, -1, 0, 1};
  check([&](Tape&, const std::vector<Var>& v) { return weighted_sum(filter3x3_valid(v[0], sobel), 29); }, {x});
}

TEST_CASE("softmax2d planes sum to one") {
  std::mt19937_64 rng(10);
  Tape tape;
  Var p = softmax2d(tape.constant(random_tensor({2, 1, 3, 3}, rng, -50.0, 50.0)));
  for (int n = 0; n < 2; ++n) {
    double s = 0;
    for (int i = 0; i < 9; ++i) s += p.value()[n * 9 + i];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("grad_check flags a wrong gradient") {
  // A custom op whose backward pass is deliberately off by a factor of 2.
  auto bad = [](Tape& tape, const std::vector<Var>& v) {
    Var x = v[0];
    Tensor y = x.value();
    for (double& e : y.values()) e = e * e;
    Var out = tape.record("bad_square", y, {x.id}, [x](Tape& t, int self) {
      Tensor& gx = t.grad_buffer(x.id);
      const Tensor& g = t.grad(self);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * 4.0 * x.value()[i];
    });
    return sum(out);
  };
  const GradCheckReport r = grad_check(bad, {Tensor({3}, std::vector<double>{0.5, 1.0, -2.0})}, 1e-5, 1e-4);
  CHECK_FALSE(r.passed);
}
