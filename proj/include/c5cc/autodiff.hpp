#pragma once

// Minimal reverse-mode differentiation over dense double arrays.
//
// Only the operations needed by the hypernetwork and its loss are provided.
// Image-like tensors use NCHW layout. Multi-branch activations are stored
// with the branch index innermost in the batch axis: row b * m + j holds
// branch j of sample b.

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace c5cc::ad {

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  // Negative axes count from the back.
  int dim(int axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  Tensor reshaped(Shape shape) const;
  void fill(double v);

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

// Handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  // Appends an operation result. `fn` propagates this node's gradient into
  // its parents and is only invoked when the node requires a gradient.
  Var record(std::string op, Tensor value, std::vector<int> parents, BackwardFn fn);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& grad(int id);
  // Gradient buffer for accumulation, allocated on first use.
  Tensor& grad_buffer(int id);
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const std::string& op_name(int id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(output)/d(output) = 1 and walks the tape in reverse order.
  // Throws DataError if `output` is not a single-element array.
  void backward(Var output);
  void zero_grad();

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// ---- elementwise / reductions ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var exp(Var a);
Var leaky_relu(Var x, double slope);
// Exact value on [-1, 1] (inputs are clamped there). The slope is evaluated
// at most 1 - clamp_margin away from +-1 so it stays finite, and is zero for
// |x| >= 1.
Var arccos(Var x, double clamp_margin = 1e-7);
Var reshape(Var a, Shape shape);
Var sum(Var a);
Var mean(Var a);
Var sum_squares(Var a);
// Contracts the last axis: result shape is the input shape minus that axis.
Var dot_last(Var a, Var b);
Var norm_last(Var a);
Var dot(Var a, Var b);
Var l2_norm(Var a);

// ---- image ops, NCHW ----
// 3x3 convolution, stride 1, zero padding 1. `weight` is [Co, Ci, 3, 3];
// `bias` is [Co] or a default-constructed Var for none.
Var conv3x3(Var x, Var weight, Var bias = {});
Var max_pool2(Var x);
Var upsample2(Var x);
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(Var x, int begin, int count);
Var channel_sum(Var x);

struct BatchStatistics {
  std::vector<double> mean;
  std::vector<double> var;
};

// Batch normalization over (N, H, W) per channel. In training mode batch
// statistics are used and written to `stats` if given; otherwise the
// supplied running statistics are treated as constants.
Var batch_norm(Var x, Var gamma, Var beta, bool training, std::span<const double> running_mean,
               std::span<const double> running_var, double eps, BatchStatistics* stats = nullptr);
Var instance_norm(Var x, Var gamma, Var beta, double eps);

// ---- branch ops ----
// [B*m, ...] -> [B, ...], elementwise max over the m branches of each sample.
Var branch_max(Var x, int branches);
// [B, ...] -> [B*m, ...] by repetition.
Var branch_broadcast(Var x, int branches);
// [B*m, ...] -> [B, ...], keeps branch `index`.
Var select_branch(Var x, int branches, int index);

// ---- CCC head ops ----
// Softmax over each H x W plane.
Var softmax2d(Var x);
// p is [N, 1, H, W]; returns [N, 2] holding (sum u p, sum v p) where the
// column index carries u and the row index carries v.
Var expectation2d(Var p, std::span<const double> u_coords, std::span<const double> v_coords);
// [N, 2] log-chroma -> [N, 3] unit-norm RGB.
Var uv_to_rgb(Var uv);
// Linear, same-size, zero-padded 2-D convolution of matching [N, C, H, W]
// planes, kernel anchored at (H/2, W/2).
Var convolve2d(Var x, Var kernel);
// Valid-region 2-D convolution of every plane with a constant 3x3 kernel.
Var filter3x3_valid(Var x, const std::array<double, 9>& kernel);

// ---- gradient checking ----
struct GradCheckReport {
  std::vector<double> max_rel_error;  // per leaf
  double worst = 0.0;
  bool passed = false;
};

using GraphBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares analytic gradients with central differences. Relative error is
// |a - n| / max(|a|, |n|, abs_floor).
GradCheckReport grad_check(const GraphBuilder& f, const std::vector<Tensor>& leaves, double step,
                           double tol, double abs_floor = 1e-3);

}  // namespace c5cc::ad
