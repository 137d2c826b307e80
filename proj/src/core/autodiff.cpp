#include "c5cc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

#include <Eigen/Dense>

#include "c5cc/error.hpp"

namespace c5cc::ad {

namespace {

struct Dims4 {
  int n, c, h, w;
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
};

Dims4 dims4(const Tensor& t, const char* op) {
  if (t.rank() != 4) {
    throw DataError(std::string(op) + ": expected NCHW array, got " + shape_string(t.shape()));
  }
  return {t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DataError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                    shape_string(b.shape()));
  }
}

void require_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw DataError(std::string(op) + ": operands belong to different tapes");
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DataError("negative dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw DataError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                    shape_string(shape_));
  }
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw DataError("axis out of range for " + shape_string(shape_));
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) throw DataError("item() on array of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{"leaf", std::move(value), {}, {}, {}, true});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{"const", std::move(value), {}, {}, {}, false});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(std::string op, Tensor value, std::vector<int> parents, BackwardFn fn) {
  bool needs = false;
  for (int p : parents) needs = needs || nodes_[p].requires_grad;
  nodes_.push_back(Node{std::move(op), std::move(value), {}, std::move(parents), std::move(fn), needs});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buffer(int id) {
  Node& node = nodes_[id];
  if (node.grad.size() != node.value.size()) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

const Tensor& Tape::grad(int id) { return grad_buffer(id); }

void Tape::zero_grad() {
  for (Node& node : nodes_) node.grad = Tensor();
}

void Tape::backward(Var output) {
  if (output.tape != this) throw DataError("backward: variable from another tape");
  if (value(output.id).size() != 1) {
    throw DataError("backward: output must be scalar, got " + shape_string(value(output.id).shape()));
  }
  grad_buffer(output.id)[0] += 1.0;
  for (int id = output.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !node.backward) continue;
    if (node.grad.size() != node.value.size()) continue;  // never reached
    node.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

Var add(Var a, Var b) {
  require_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record("add", std::move(out), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    for (int p : {a.id, b.id}) {
      if (!t.requires_grad(p)) continue;
      Tensor& gp = t.grad_buffer(p);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  require_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record("mul", std::move(out), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(a.id);
    const Tensor& bv = t.value(b.id);
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var div(Var a, Var b) {
  require_tape(a, b, "div");
  require_same_shape(a.value(), b.value(), "div");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  return a.tape->record("div", std::move(out), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(a.id);
    const Tensor& bv = t.value(b.id);
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return a.tape->record("scale", std::move(out), {a.id}, [a, s](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  return a.tape->record("add_scalar", std::move(out), {a.id}, [a](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var exp(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::exp(v);
  return a.tape->record("exp", std::move(out), {a.id}, [a](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

Var leaky_relu(Var x, double slope) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : slope * v;
  return x.tape->record("leaky_relu", std::move(out), {x.id}, [x, slope](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(x.id);
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0.0 ? g[i] : slope * g[i];
  });
}

Var arccos(Var x, double clamp_margin) {
  const double hi = 1.0 - clamp_margin;
  Tensor out = x.value();
  for (double& v : out.values()) v = std::acos(std::clamp(v, -1.0, 1.0));
  return x.tape->record("arccos", std::move(out), {x.id}, [x, hi](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(x.id);
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      if (!(std::abs(v) < 1.0)) continue;
      const double c = std::clamp(v, -hi, hi);
      gx[i] -= g[i] / std::sqrt(1.0 - c * c);
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record("reshape", std::move(out), {a.id}, [a](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.values()) s += v;
  return a.tape->record("sum", Tensor::scalar(s), {a.id}, [a](Tape& t, int self) {
    const double g = t.grad(self)[0];
    Tensor& ga = t.grad_buffer(a.id);
    for (double& v : ga.values()) v += g;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw DataError("mean of empty array");
  return scale(sum(a), 1.0 / n);
}

Var sum_squares(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.values()) s += v * v;
  return a.tape->record("sum_squares", Tensor::scalar(s), {a.id}, [a](Tape& t, int self) {
    const double g = t.grad(self)[0];
    const Tensor& av = t.value(a.id);
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += 2.0 * g * av[i];
  });
}

Var dot_last(Var a, Var b) {
  require_tape(a, b, "dot_last");
  require_same_shape(a.value(), b.value(), "dot_last");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 1) throw DataError("dot_last: rank-0 input");
  const int k = av.dim(-1);
  Shape out_shape(av.shape().begin(), av.shape().end() - 1);
  Tensor out(out_shape);
  for (std::size_t r = 0; r < out.size(); ++r) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += av[r * k + j] * bv[r * k + j];
    out[r] = s;
  }
  return a.tape->record("dot_last", std::move(out), {a.id, b.id}, [a, b, k](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(a.id);
    const Tensor& bv = t.value(b.id);
    if (t.requires_grad(a.id)) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t r = 0; r < g.size(); ++r)
        for (int j = 0; j < k; ++j) ga[r * k + j] += g[r] * bv[r * k + j];
    }
    if (t.requires_grad(b.id)) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::size_t r = 0; r < g.size(); ++r)
        for (int j = 0; j < k; ++j) gb[r * k + j] += g[r] * av[r * k + j];
    }
  });
}

Var norm_last(Var a) {
  const Tensor& av = a.value();
  if (av.rank() < 1) throw DataError("norm_last: rank-0 input");
  const int k = av.dim(-1);
  Shape out_shape(av.shape().begin(), av.shape().end() - 1);
  Tensor out(out_shape);
  for (std::size_t r = 0; r < out.size(); ++r) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += av[r * k + j] * av[r * k + j];
    out[r] = std::sqrt(s);
  }
  return a.tape->record("norm_last", std::move(out), {a.id}, [a, k](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    const Tensor& av = t.value(a.id);
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t r = 0; r < g.size(); ++r) {
      if (y[r] == 0.0) continue;
      for (int j = 0; j < k; ++j) ga[r * k + j] += g[r] * av[r * k + j] / y[r];
    }
  });
}

namespace {

// Flattens to rank 1; gradient passes straight through.
Var flatten(Var v) {
  const auto n = static_cast<int>(v.value().size());
  return v.tape->record("reshape", v.value().reshaped({n}), {v.id}, [v](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gv = t.grad_buffer(v.id);
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
  });
}

}  // namespace

Var dot(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "dot");
  return dot_last(flatten(a), flatten(b));
}

Var l2_norm(Var a) { return norm_last(flatten(a)); }

// ---------------------------------------------------------------------------
// Image ops

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rows are (channel, ky, kx), columns are output pixels; zero outside the image.
void im2col3x3(const double* in, int c, int H, int W, RowMat& col) {
  col.setZero(static_cast<Eigen::Index>(c) * 9, static_cast<Eigen::Index>(H) * W);
  for (int ic = 0; ic < c; ++ic) {
    const double* ip = in + static_cast<std::size_t>(ic) * H * W;
    for (int ky = 0; ky < 3; ++ky) {
      const int y0 = std::max(0, 1 - ky), y1 = std::min(H, H + 1 - ky);
      for (int kx = 0; kx < 3; ++kx) {
        const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
        double* row = col.row(ic * 9 + ky * 3 + kx).data();
        for (int y = y0; y < y1; ++y) {
          const double* irow = ip + static_cast<std::size_t>(y + ky - 1) * W + (kx - 1);
          double* crow = row + static_cast<std::size_t>(y) * W;
          for (int xx = x0; xx < x1; ++xx) crow[xx] = irow[xx];
        }
      }
    }
  }
}

void col2im3x3(const RowMat& col, int c, int H, int W, double* out) {
  for (int ic = 0; ic < c; ++ic) {
    double* op = out + static_cast<std::size_t>(ic) * H * W;
    for (int ky = 0; ky < 3; ++ky) {
      const int y0 = std::max(0, 1 - ky), y1 = std::min(H, H + 1 - ky);
      for (int kx = 0; kx < 3; ++kx) {
        const int x0 = std::max(0, 1 - kx), x1 = std::min(W, W + 1 - kx);
        const double* row = col.row(ic * 9 + ky * 3 + kx).data();
        for (int y = y0; y < y1; ++y) {
          double* orow = op + static_cast<std::size_t>(y + ky - 1) * W + (kx - 1);
          const double* crow = row + static_cast<std::size_t>(y) * W;
          for (int xx = x0; xx < x1; ++xx) orow[xx] += crow[xx];
        }
      }
    }
  }
}

}  // namespace

Var conv3x3(Var x, Var weight, Var bias) {
  const Dims4 d = dims4(x.value(), "conv3x3");
  const Tensor& wv = weight.value();
  if (wv.rank() != 4 || wv.dim(1) != d.c || wv.dim(2) != 3 || wv.dim(3) != 3) {
    throw DataError("conv3x3: weight " + shape_string(wv.shape()) + " incompatible with input " +
                    shape_string(x.shape()));
  }
  const int co = wv.dim(0);
  const bool has_bias = bias.tape != nullptr;
  if (has_bias && (bias.value().rank() != 1 || bias.value().dim(0) != co)) {
    throw DataError("conv3x3: bias shape " + shape_string(bias.shape()));
  }
  const auto plane = static_cast<Eigen::Index>(d.plane());
  const auto k = static_cast<Eigen::Index>(d.c) * 9;
  Tensor out({d.n, co, d.h, d.w});
  const Eigen::Map<const RowMat> w(wv.data(), co, k);
  RowMat col;
  for (int n = 0; n < d.n; ++n) {
    im2col3x3(x.value().data() + static_cast<std::size_t>(n) * d.c * d.plane(), d.c, d.h, d.w, col);
    Eigen::Map<RowMat> o(out.data() + static_cast<std::size_t>(n) * co * d.plane(), co, plane);
    o.noalias() = w * col;
    if (has_bias)
      for (int oc = 0; oc < co; ++oc) o.row(oc).array() += bias.value()[oc];
  }
  std::vector<int> parents{x.id, weight.id};
  if (has_bias) parents.push_back(bias.id);
  return x.tape->record("conv3x3", std::move(out), parents, [x, weight, bias, has_bias, d, co](Tape& t, int self) {
    const auto plane = static_cast<Eigen::Index>(d.plane());
    const auto k = static_cast<Eigen::Index>(d.c) * 9;
    const double* g = t.grad(self).data();
    const bool want_x = t.requires_grad(x.id);
    const bool want_w = t.requires_grad(weight.id);
    if (has_bias && t.requires_grad(bias.id)) {
      Tensor& gb = t.grad_buffer(bias.id);
      for (int n = 0; n < d.n; ++n)
        for (int oc = 0; oc < co; ++oc) {
          const double* gp = g + (static_cast<std::size_t>(n) * co + oc) * d.plane();
          double s = 0.0;
          for (std::size_t i = 0; i < d.plane(); ++i) s += gp[i];
          gb[oc] += s;
        }
    }
    if (!want_x && !want_w) return;
    const Eigen::Map<const RowMat> w(t.value(weight.id).data(), co, k);
    RowMat col, gcol;
    for (int n = 0; n < d.n; ++n) {
      const Eigen::Map<const RowMat> gn(g + static_cast<std::size_t>(n) * co * d.plane(), co, plane);
      if (want_w) {
        im2col3x3(t.value(x.id).data() + static_cast<std::size_t>(n) * d.c * d.plane(), d.c, d.h, d.w, col);
        Eigen::Map<RowMat> gw(t.grad_buffer(weight.id).data(), co, k);
        gw.noalias() += gn * col.transpose();
      }
      if (want_x) {
        gcol.noalias() = w.transpose() * gn;
        col2im3x3(gcol, d.c, d.h, d.w, t.grad_buffer(x.id).data() + static_cast<std::size_t>(n) * d.c * d.plane());
      }
    }
  });
}

Var max_pool2(Var x) {
  const Dims4 d = dims4(x.value(), "max_pool2");
  if (d.h % 2 || d.w % 2) throw DataError("max_pool2: odd spatial size " + shape_string(x.shape()));
  const int oh = d.h / 2, ow = d.w / 2;
  Tensor out({d.n, d.c, oh, ow});
  std::vector<std::uint32_t> argmax(out.size());
  const double* in = x.value().data();
  std::size_t o = 0;
  for (int p = 0; p < d.n * d.c; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * d.plane();
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx, ++o) {
        // Row-major scan; strict comparison keeps the first maximum.
        std::size_t best = base + static_cast<std::size_t>(2 * y) * d.w + 2 * xx;
        const std::size_t cand[3] = {best + 1, best + d.w, best + d.w + 1};
        for (std::size_t c : cand)
          if (in[c] > in[best]) best = c;
        out[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return x.tape->record("max_pool2", std::move(out), {x.id}, [x, argmax = std::move(argmax)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
  });
}

namespace {

// Half-pixel-centred bilinear taps for 2x upsampling along one axis.
struct Taps {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

Taps upsample_taps(int in_size) {
  Taps t;
  const int out_size = in_size * 2;
  t.lo.resize(out_size);
  t.hi.resize(out_size);
  t.frac.resize(out_size);
  for (int i = 0; i < out_size; ++i) {
    double src = (i + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in_size - 1) lo = in_size - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in_size - 1);
    t.frac[i] = src - lo;
  }
  return t;
}

}  // namespace

Var upsample2(Var x) {
  const Dims4 d = dims4(x.value(), "upsample2");
  const int oh = 2 * d.h, ow = 2 * d.w;
  const Taps ty = upsample_taps(d.h), tx = upsample_taps(d.w);
  Tensor out({d.n, d.c, oh, ow});
  const double* in = x.value().data();
  for (int p = 0; p < d.n * d.c; ++p) {
    const double* ip = in + static_cast<std::size_t>(p) * d.plane();
    double* op = out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const double fy = ty.frac[y];
      const double* r0 = ip + static_cast<std::size_t>(ty.lo[y]) * d.w;
      const double* r1 = ip + static_cast<std::size_t>(ty.hi[y]) * d.w;
      for (int xx = 0; xx < ow; ++xx) {
        const double fx = tx.frac[xx];
        const int a = tx.lo[xx], b = tx.hi[xx];
        const double top = r0[a] + fx * (r0[b] - r0[a]);
        const double bot = r1[a] + fx * (r1[b] - r1[a]);
        op[static_cast<std::size_t>(y) * ow + xx] = top + fy * (bot - top);
      }
    }
  }
  return x.tape->record("upsample2", std::move(out), {x.id}, [x, d, ty, tx](Tape& t, int self) {
    const int oh = 2 * d.h, ow = 2 * d.w;
    const double* g = t.grad(self).data();
    double* gx = t.grad_buffer(x.id).data();
    for (int p = 0; p < d.n * d.c; ++p) {
      const double* gp = g + static_cast<std::size_t>(p) * oh * ow;
      double* gi = gx + static_cast<std::size_t>(p) * d.plane();
      for (int y = 0; y < oh; ++y) {
        const double fy = ty.frac[y];
        double* r0 = gi + static_cast<std::size_t>(ty.lo[y]) * d.w;
        double* r1 = gi + static_cast<std::size_t>(ty.hi[y]) * d.w;
        for (int xx = 0; xx < ow; ++xx) {
          const double gv = gp[static_cast<std::size_t>(y) * ow + xx];
          const double fx = tx.frac[xx];
          const int a = tx.lo[xx], b = tx.hi[xx];
          const double top = gv * (1.0 - fy), bot = gv * fy;
          r0[a] += top * (1.0 - fx);
          r0[b] += top * fx;
          r1[a] += bot * (1.0 - fx);
          r1[b] += bot * fx;
        }
      }
    }
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw DataError("concat_channels: no inputs");
  const Dims4 d0 = dims4(parts[0].value(), "concat_channels");
  int total_c = 0;
  std::vector<int> offsets;
  std::vector<int> parents;
  for (const Var& v : parts) {
    const Dims4 d = dims4(v.value(), "concat_channels");
    if (v.tape != parts[0].tape || d.n != d0.n || d.h != d0.h || d.w != d0.w) {
      throw DataError("concat_channels: incompatible " + shape_string(v.shape()) + " vs " +
                      shape_string(parts[0].shape()));
    }
    offsets.push_back(total_c);
    total_c += d.c;
    parents.push_back(v.id);
  }
  Tensor out({d0.n, total_c, d0.h, d0.w});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    const int c = v.dim(1);
    for (int n = 0; n < d0.n; ++n) {
      const double* src = v.data() + static_cast<std::size_t>(n) * c * d0.plane();
      double* dst = out.data() + (static_cast<std::size_t>(n) * total_c + offsets[k]) * d0.plane();
      std::copy(src, src + c * d0.plane(), dst);
    }
  }
  return parts[0].tape->record("concat_channels", std::move(out), parents,
                               [parts, offsets, total_c, d0](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!t.requires_grad(parts[k].id)) continue;
      Tensor& gp = t.grad_buffer(parts[k].id);
      const int c = gp.dim(1);
      for (int n = 0; n < d0.n; ++n) {
        const double* src = g.data() + (static_cast<std::size_t>(n) * total_c + offsets[k]) * d0.plane();
        double* dst = gp.data() + static_cast<std::size_t>(n) * c * d0.plane();
        for (std::size_t i = 0; i < c * d0.plane(); ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice_channels(Var x, int begin, int count) {
  const Dims4 d = dims4(x.value(), "slice_channels");
  if (begin < 0 || count <= 0 || begin + count > d.c) {
    throw DataError("slice_channels: range out of bounds for " + shape_string(x.shape()));
  }
  Tensor out({d.n, count, d.h, d.w});
  for (int n = 0; n < d.n; ++n) {
    const double* src = x.value().data() + (static_cast<std::size_t>(n) * d.c + begin) * d.plane();
    std::copy(src, src + count * d.plane(), out.data() + static_cast<std::size_t>(n) * count * d.plane());
  }
  return x.tape->record("slice_channels", std::move(out), {x.id}, [x, d, begin, count](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id);
    for (int n = 0; n < d.n; ++n) {
      const double* src = g.data() + static_cast<std::size_t>(n) * count * d.plane();
      double* dst = gx.data() + (static_cast<std::size_t>(n) * d.c + begin) * d.plane();
      for (std::size_t i = 0; i < count * d.plane(); ++i) dst[i] += src[i];
    }
  });
}

Var channel_sum(Var x) {
  const Dims4 d = dims4(x.value(), "channel_sum");
  Tensor out({d.n, 1, d.h, d.w});
  for (int n = 0; n < d.n; ++n)
    for (int c = 0; c < d.c; ++c) {
      const double* src = x.value().data() + (static_cast<std::size_t>(n) * d.c + c) * d.plane();
      double* dst = out.data() + static_cast<std::size_t>(n) * d.plane();
      for (std::size_t i = 0; i < d.plane(); ++i) dst[i] += src[i];
    }
  return x.tape->record("channel_sum", std::move(out), {x.id}, [x, d](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id);
    for (int n = 0; n < d.n; ++n)
      for (int c = 0; c < d.c; ++c) {
        const double* src = g.data() + static_cast<std::size_t>(n) * d.plane();
        double* dst = gx.data() + (static_cast<std::size_t>(n) * d.c + c) * d.plane();
        for (std::size_t i = 0; i < d.plane(); ++i) dst[i] += src[i];
      }
  });
}

namespace {

// Normalizes groups of elements addressed by (group, index) -> offset.
// Shared by batch and instance normalization.
struct NormGroups {
  int groups;                // number of independent statistics
  int per_group;             // elements per statistic
  std::function<std::size_t(int, int)> offset;
  std::function<int(int)> channel;  // group -> channel for gamma/beta
};

Var normalize(const char* op, Var x, Var gamma, Var beta, const NormGroups& ng, double eps,
              const std::vector<double>* fixed_mean, const std::vector<double>* fixed_var,
              BatchStatistics* stats) {
  const Tensor& xv = x.value();
  const bool training = fixed_mean == nullptr;
  std::vector<double> mean(ng.groups), inv_std(ng.groups), var(ng.groups);
  for (int g = 0; g < ng.groups; ++g) {
    if (training) {
      double s = 0.0;
      for (int i = 0; i < ng.per_group; ++i) s += xv[ng.offset(g, i)];
      const double m = s / ng.per_group;
      double ss = 0.0;
      for (int i = 0; i < ng.per_group; ++i) {
        const double dv = xv[ng.offset(g, i)] - m;
        ss += dv * dv;
      }
      mean[g] = m;
      var[g] = ss / ng.per_group;
    } else {
      mean[g] = (*fixed_mean)[ng.channel(g)];
      var[g] = (*fixed_var)[ng.channel(g)];
    }
    inv_std[g] = 1.0 / std::sqrt(var[g] + eps);
  }
  if (stats) {
    stats->mean = mean;
    stats->var = var;
  }
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (int g = 0; g < ng.groups; ++g) {
    const int c = ng.channel(g);
    for (int i = 0; i < ng.per_group; ++i) {
      const std::size_t o = ng.offset(g, i);
      xhat[o] = (xv[o] - mean[g]) * inv_std[g];
      out[o] = gv[c] * xhat[o] + bv[c];
    }
  }
  return x.tape->record(op, std::move(out), {x.id, gamma.id, beta.id},
                        [x, gamma, beta, ng, training, inv_std, xhat = std::move(xhat)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& gv = t.value(gamma.id);
    const bool want_x = t.requires_grad(x.id);
    const bool want_gamma = t.requires_grad(gamma.id);
    const bool want_beta = t.requires_grad(beta.id);
    Tensor* gx = want_x ? &t.grad_buffer(x.id) : nullptr;
    Tensor* gg = want_gamma ? &t.grad_buffer(gamma.id) : nullptr;
    Tensor* gb = want_beta ? &t.grad_buffer(beta.id) : nullptr;
    for (int grp = 0; grp < ng.groups; ++grp) {
      const int c = ng.channel(grp);
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int i = 0; i < ng.per_group; ++i) {
        const std::size_t o = ng.offset(grp, i);
        sum_dy += g[o];
        sum_dy_xhat += g[o] * xhat[o];
      }
      if (gg) (*gg)[c] += sum_dy_xhat;
      if (gb) (*gb)[c] += sum_dy;
      if (!gx) continue;
      const double scale_c = gv[c] * inv_std[grp];
      if (training) {
        const double m = ng.per_group;
        for (int i = 0; i < ng.per_group; ++i) {
          const std::size_t o = ng.offset(grp, i);
          (*gx)[o] += scale_c * (g[o] - sum_dy / m - xhat[o] * sum_dy_xhat / m);
        }
      } else {
        for (int i = 0; i < ng.per_group; ++i) {
          const std::size_t o = ng.offset(grp, i);
          (*gx)[o] += scale_c * g[o];
        }
      }
    }
  });
}

void check_affine(const Dims4& d, Var gamma, Var beta, const char* op) {
  if (gamma.value().size() != static_cast<std::size_t>(d.c) ||
      beta.value().size() != static_cast<std::size_t>(d.c)) {
    throw DataError(std::string(op) + ": scale/shift must have one entry per channel");
  }
}

}  // namespace

Var batch_norm(Var x, Var gamma, Var beta, bool training, std::span<const double> running_mean,
               std::span<const double> running_var, double eps, BatchStatistics* stats) {
  const Dims4 d = dims4(x.value(), "batch_norm");
  check_affine(d, gamma, beta, "batch_norm");
  const std::size_t plane = d.plane();
  const int c_count = d.c;
  NormGroups ng{d.c, static_cast<int>(d.n * plane),
                [plane, c_count](int g, int i) {
                  const std::size_t n = static_cast<std::size_t>(i) / plane;
                  return (n * c_count + g) * plane + static_cast<std::size_t>(i) % plane;
                },
                [](int g) { return g; }};
  if (training) return normalize("batch_norm", x, gamma, beta, ng, eps, nullptr, nullptr, stats);
  if (running_mean.size() != static_cast<std::size_t>(d.c) || running_var.size() != static_cast<std::size_t>(d.c)) {
    throw DataError("batch_norm: running statistics have wrong length");
  }
  const std::vector<double> rm(running_mean.begin(), running_mean.end());
  const std::vector<double> rv(running_var.begin(), running_var.end());
  return normalize("batch_norm", x, gamma, beta, ng, eps, &rm, &rv, stats);
}

Var instance_norm(Var x, Var gamma, Var beta, double eps) {
  const Dims4 d = dims4(x.value(), "instance_norm");
  check_affine(d, gamma, beta, "instance_norm");
  const std::size_t plane = d.plane();
  const int c_count = d.c;
  NormGroups ng{d.n * d.c, static_cast<int>(plane),
                [plane](int g, int i) { return static_cast<std::size_t>(g) * plane + i; },
                [c_count](int g) { return g % c_count; }};
  return normalize("instance_norm", x, gamma, beta, ng, eps, nullptr, nullptr, nullptr);
}

// ---------------------------------------------------------------------------
// Branch ops

namespace {

std::size_t check_branches(const Tensor& v, int branches, const char* op) {
  if (v.rank() < 1 || branches < 1 || v.dim(0) % branches != 0) {
    throw DataError(std::string(op) + ": leading axis of " + shape_string(v.shape()) +
                    " not divisible by branch count " + std::to_string(branches));
  }
  return v.size() / v.dim(0);
}

}  // namespace

Var branch_max(Var x, int branches) {
  const Tensor& xv = x.value();
  const std::size_t row = check_branches(xv, branches, "branch_max");
  const int b_count = xv.dim(0) / branches;
  Shape shape = xv.shape();
  shape[0] = b_count;
  Tensor out(shape);
  std::vector<std::uint32_t> src(out.size());
  for (int b = 0; b < b_count; ++b) {
    for (std::size_t i = 0; i < row; ++i) {
      std::size_t best = (static_cast<std::size_t>(b) * branches) * row + i;
      for (int j = 1; j < branches; ++j) {
        const std::size_t cand = (static_cast<std::size_t>(b) * branches + j) * row + i;
        if (xv[cand] > xv[best]) best = cand;
      }
      out[b * row + i] = xv[best];
      src[b * row + i] = static_cast<std::uint32_t>(best);
    }
  }
  return x.tape->record("branch_max", std::move(out), {x.id}, [x, src = std::move(src)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[src[i]] += g[i];
  });
}

Var branch_broadcast(Var x, int branches) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || branches < 1) throw DataError("branch_broadcast: bad input");
  const std::size_t row = xv.size() / xv.dim(0);
  Shape shape = xv.shape();
  shape[0] *= branches;
  Tensor out(shape);
  for (int b = 0; b < xv.dim(0); ++b)
    for (int j = 0; j < branches; ++j)
      std::copy(xv.data() + b * row, xv.data() + (b + 1) * row,
                out.data() + (static_cast<std::size_t>(b) * branches + j) * row);
  return x.tape->record("branch_broadcast", std::move(out), {x.id}, [x, branches, row](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id);
    const int b_count = gx.dim(0);
    for (int b = 0; b < b_count; ++b)
      for (int j = 0; j < branches; ++j) {
        const double* src = g.data() + (static_cast<std::size_t>(b) * branches + j) * row;
        double* dst = gx.data() + b * row;
        for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
      }
  });
}

Var select_branch(Var x, int branches, int index) {
  const Tensor& xv = x.value();
  const std::size_t row = check_branches(xv, branches, "select_branch");
  if (index < 0 || index >= branches) throw DataError("select_branch: index out of range");
  const int b_count = xv.dim(0) / branches;
  Shape shape = xv.shape();
  shape[0] = b_count;
  Tensor out(shape);
  for (int b = 0; b < b_count; ++b) {
    const double* src = xv.data() + (static_cast<std::size_t>(b) * branches + index) * row;
    std::copy(src, src + row, out.data() + b * row);
  }
  return x.tape->record("select_branch", std::move(out), {x.id}, [x, branches, index, row](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id);
    for (int b = 0; b < g.dim(0); ++b) {
      double* dst = gx.data() + (static_cast<std::size_t>(b) * branches + index) * row;
      for (std::size_t i = 0; i < row; ++i) dst[i] += g[b * row + i];
    }
  });
}

// ---------------------------------------------------------------------------
// CCC head

Var softmax2d(Var x) {
  const Dims4 d = dims4(x.value(), "softmax2d");
  Tensor out(x.shape());
  const double* in = x.value().data();
  for (int p = 0; p < d.n * d.c; ++p) {
    const double* ip = in + static_cast<std::size_t>(p) * d.plane();
    double* op = out.data() + static_cast<std::size_t>(p) * d.plane();
    const double mx = *std::max_element(ip, ip + d.plane());
    double s = 0.0;
    for (std::size_t i = 0; i < d.plane(); ++i) {
      op[i] = std::exp(ip[i] - mx);
      s += op[i];
    }
    for (std::size_t i = 0; i < d.plane(); ++i) op[i] /= s;
  }
  return x.tape->record("softmax2d", std::move(out), {x.id}, [x, d](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_buffer(x.id);
    for (int p = 0; p < d.n * d.c; ++p) {
      const std::size_t base = static_cast<std::size_t>(p) * d.plane();
      double s = 0.0;
      for (std::size_t i = 0; i < d.plane(); ++i) s += g[base + i] * y[base + i];
      for (std::size_t i = 0; i < d.plane(); ++i) gx[base + i] += y[base + i] * (g[base + i] - s);
    }
  });
}

Var expectation2d(Var p, std::span<const double> u_coords, std::span<const double> v_coords) {
  const Dims4 d = dims4(p.value(), "expectation2d");
  if (d.c != 1 || u_coords.size() != static_cast<std::size_t>(d.w) ||
      v_coords.size() != static_cast<std::size_t>(d.h)) {
    throw DataError("expectation2d: coordinate grids do not match " + shape_string(p.shape()));
  }
  std::vector<double> uc(u_coords.begin(), u_coords.end()), vc(v_coords.begin(), v_coords.end());
  Tensor out({d.n, 2});
  for (int n = 0; n < d.n; ++n) {
    const double* pp = p.value().data() + static_cast<std::size_t>(n) * d.plane();
    double eu = 0.0, ev = 0.0;
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) {
        const double w = pp[static_cast<std::size_t>(y) * d.w + x];
        eu += uc[x] * w;
        ev += vc[y] * w;
      }
    out[2 * n] = eu;
    out[2 * n + 1] = ev;
  }
  return p.tape->record("expectation2d", std::move(out), {p.id}, [p, d, uc, vc](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gp = t.grad_buffer(p.id);
    for (int n = 0; n < d.n; ++n) {
      double* dst = gp.data() + static_cast<std::size_t>(n) * d.plane();
      for (int y = 0; y < d.h; ++y)
        for (int x = 0; x < d.w; ++x) dst[static_cast<std::size_t>(y) * d.w + x] += g[2 * n] * uc[x] + g[2 * n + 1] * vc[y];
    }
  });
}

Var uv_to_rgb(Var uv) {
  const Tensor& v = uv.value();
  if (v.rank() != 2 || v.dim(1) != 2) throw DataError("uv_to_rgb: expected [N,2], got " + shape_string(v.shape()));
  const int n = v.dim(0);
  Tensor out({n, 3});
  for (int i = 0; i < n; ++i) {
    const double a = std::exp(-v[2 * i]), c = std::exp(-v[2 * i + 1]);
    const double z = std::sqrt(a * a + c * c + 1.0);
    out[3 * i] = a / z;
    out[3 * i + 1] = 1.0 / z;
    out[3 * i + 2] = c / z;
  }
  return uv.tape->record("uv_to_rgb", std::move(out), {uv.id}, [uv, n](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& v = t.value(uv.id);
    Tensor& gv = t.grad_buffer(uv.id);
    for (int i = 0; i < n; ++i) {
      const double a = std::exp(-v[2 * i]), c = std::exp(-v[2 * i + 1]);
      const double z = std::sqrt(a * a + c * c + 1.0);
      const double z3 = z * z * z;
      const double gr = g[3 * i], gg = g[3 * i + 1], gb = g[3 * i + 2];
      // d/du: a' = -a, z' = -a^2 / z.
      const double du = gr * (-a / z + a * a * a / z3) + gg * (a * a / z3) + gb * (c * a * a / z3);
      const double dv = gr * (a * c * c / z3) + gg * (c * c / z3) + gb * (-c / z + c * c * c / z3);
      gv[2 * i] += du;
      gv[2 * i + 1] += dv;
    }
  });
}

Var convolve2d(Var x, Var kernel) {
  require_tape(x, kernel, "convolve2d");
  require_same_shape(x.value(), kernel.value(), "convolve2d");
  const Dims4 d = dims4(x.value(), "convolve2d");
  const int H = d.h, W = d.w, ch = H / 2, cw = W / 2;
  Tensor out(x.shape());
  for (int p = 0; p < d.n * d.c; ++p) {
    const double* xp = x.value().data() + static_cast<std::size_t>(p) * d.plane();
    const double* kp = kernel.value().data() + static_cast<std::size_t>(p) * d.plane();
    double* op = out.data() + static_cast<std::size_t>(p) * d.plane();
    for (int ky = 0; ky < H; ++ky) {
      // out(i, j) += k(ky, kx) * x(i - ky + ch, j - kx + cw)
      const int dy = ch - ky;
      const int i0 = std::max(0, -dy), i1 = std::min(H, H - dy);
      for (int kx = 0; kx < W; ++kx) {
        const double kv = kp[static_cast<std::size_t>(ky) * W + kx];
        if (kv == 0.0) continue;
        const int dx = cw - kx;
        const int j0 = std::max(0, -dx), j1 = std::min(W, W - dx);
        for (int i = i0; i < i1; ++i) {
          double* orow = op + static_cast<std::size_t>(i) * W;
          const double* xrow = xp + static_cast<std::size_t>(i + dy) * W + dx;
          for (int j = j0; j < j1; ++j) orow[j] += kv * xrow[j];
        }
      }
    }
  }
  return x.tape->record("convolve2d", std::move(out), {x.id, kernel.id}, [x, kernel, d](Tape& t, int self) {
    const int H = d.h, W = d.w, ch = H / 2, cw = W / 2;
    const Tensor& g = t.grad(self);
    const bool want_x = t.requires_grad(x.id), want_k = t.requires_grad(kernel.id);
    double* gx = want_x ? t.grad_buffer(x.id).data() : nullptr;
    double* gk = want_k ? t.grad_buffer(kernel.id).data() : nullptr;
    for (int p = 0; p < d.n * d.c; ++p) {
      const std::size_t base = static_cast<std::size_t>(p) * d.plane();
      const double* xp = t.value(x.id).data() + base;
      const double* kp = t.value(kernel.id).data() + base;
      const double* gp = g.data() + base;
      for (int ky = 0; ky < H; ++ky) {
        const int dy = ch - ky;
        const int i0 = std::max(0, -dy), i1 = std::min(H, H - dy);
        for (int kx = 0; kx < W; ++kx) {
          const double kv = kp[static_cast<std::size_t>(ky) * W + kx];
          const int dx = cw - kx;
          const int j0 = std::max(0, -dx), j1 = std::min(W, W - dx);
          double acc = 0.0;
          for (int i = i0; i < i1; ++i) {
            const double* grow = gp + static_cast<std::size_t>(i) * W;
            const std::size_t xoff = static_cast<std::size_t>(i + dy) * W + dx;
            if (want_k) {
              const double* xrow = xp + xoff;
              for (int j = j0; j < j1; ++j) acc += grow[j] * xrow[j];
            }
            if (want_x && kv != 0.0) {
              double* gxrow = gx + base + xoff;
              for (int j = j0; j < j1; ++j) gxrow[j] += kv * grow[j];
            }
          }
          if (want_k) gk[base + static_cast<std::size_t>(ky) * W + kx] += acc;
        }
      }
    }
  });
}

Var filter3x3_valid(Var x, const std::array<double, 9>& kernel) {
  const Dims4 d = dims4(x.value(), "filter3x3_valid");
  if (d.h < 3 || d.w < 3) throw DataError("filter3x3_valid: plane smaller than 3x3");
  const int oh = d.h - 2, ow = d.w - 2;
  Tensor out({d.n, d.c, oh, ow});
  // True convolution: the kernel is applied flipped.
  auto tap = [&kernel](int a, int b) { return kernel[(2 - a) * 3 + (2 - b)]; };
  for (int p = 0; p < d.n * d.c; ++p) {
    const double* ip = x.value().data() + static_cast<std::size_t>(p) * d.plane();
    double* op = out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        double s = 0.0;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) s += tap(a, b) * ip[static_cast<std::size_t>(y + a) * d.w + xx + b];
        op[static_cast<std::size_t>(y) * ow + xx] = s;
      }
  }
  return x.tape->record("filter3x3_valid", std::move(out), {x.id}, [x, d, kernel](Tape& t, int self) {
    const int oh = d.h - 2, ow = d.w - 2;
    auto tap = [&kernel](int a, int b) { return kernel[(2 - a) * 3 + (2 - b)]; };
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad_buffer(x.id);
    for (int p = 0; p < d.n * d.c; ++p) {
      double* gi = gx.data() + static_cast<std::size_t>(p) * d.plane();
      const double* gp = g.data() + static_cast<std::size_t>(p) * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          const double gv = gp[static_cast<std::size_t>(y) * ow + xx];
          for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) gi[static_cast<std::size_t>(y + a) * d.w + xx + b] += tap(a, b) * gv;
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckReport grad_check(const GraphBuilder& f, const std::vector<Tensor>& leaves, double step, double tol,
                           double abs_floor) {
  auto evaluate = [&f](const std::vector<Tensor>& at) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : at) vars.push_back(tape.leaf(t));
    return f(tape, vars).value().item();
  };

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : leaves) vars.push_back(tape.leaf(t));
    Var out = f(tape, vars);
    tape.backward(out);
    for (const Var& v : vars) analytic.push_back(tape.grad(v.id));
  }
  const double base1 = evaluate(leaves);
  const double base2 = evaluate(leaves);
  if (base1 != base2) throw NumericalError("grad_check: graph builder is not deterministic");

  GradCheckReport report;
  std::vector<Tensor> probe = leaves;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    double worst = 0.0;
    for (std::size_t i = 0; i < leaves[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + step;
      const double fp = evaluate(probe);
      probe[k][i] = orig - step;
      const double fm = evaluate(probe);
      probe[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    report.max_rel_error.push_back(worst);
    report.worst = std::max(report.worst, worst);
  }
  report.passed = report.worst < tol;
  return report;
}

}  // namespace c5cc::ad
