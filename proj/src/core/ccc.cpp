#include "c5cc/ccc.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>

#include "c5cc/error.hpp"

namespace c5cc {

namespace {

// FFTW planning is not thread-safe.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwBuffer {
  explicit FftwBuffer(std::size_t bytes) : ptr(fftw_malloc(bytes)) {
    if (!ptr) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  void* ptr;
};

class Plan {
 public:
  explicit Plan(fftw_plan p) : plan_(p) {
    if (!plan_) throw NumericalError("FFTW plan creation failed");
  }
  ~Plan() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
  void execute() const { fftw_execute(plan_); }

 private:
  fftw_plan plan_;
};

std::vector<double> convolve_fft(std::span<const double> x, std::span<const double> k, int rows, int cols) {
  // Padding to twice the size holds the full linear convolution without wrap.
  const int pr = 2 * rows, pc = 2 * cols;
  const int pc_half = pc / 2 + 1;
  const std::size_t real_count = static_cast<std::size_t>(pr) * pc;
  const std::size_t cplx_count = static_cast<std::size_t>(pr) * pc_half;
  FftwBuffer rx(sizeof(double) * real_count), rk(sizeof(double) * real_count);
  FftwBuffer cx(sizeof(fftw_complex) * cplx_count), ck(sizeof(fftw_complex) * cplx_count);
  auto* xr = static_cast<double*>(rx.ptr);
  auto* kr = static_cast<double*>(rk.ptr);
  auto* xc = static_cast<fftw_complex*>(cx.ptr);
  auto* kc = static_cast<fftw_complex*>(ck.ptr);

  std::unique_ptr<Plan> fwd_x, fwd_k, inv;
  {
    std::lock_guard lock(fftw_planner_mutex());
    fwd_x = std::make_unique<Plan>(fftw_plan_dft_r2c_2d(pr, pc, xr, xc, FFTW_ESTIMATE));
    fwd_k = std::make_unique<Plan>(fftw_plan_dft_r2c_2d(pr, pc, kr, kc, FFTW_ESTIMATE));
    inv = std::make_unique<Plan>(fftw_plan_dft_c2r_2d(pr, pc, xc, xr, FFTW_ESTIMATE));
  }
  std::fill(xr, xr + real_count, 0.0);
  std::fill(kr, kr + real_count, 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      xr[static_cast<std::size_t>(i) * pc + j] = x[static_cast<std::size_t>(i) * cols + j];
      kr[static_cast<std::size_t>(i) * pc + j] = k[static_cast<std::size_t>(i) * cols + j];
    }
  fwd_x->execute();
  fwd_k->execute();
  for (std::size_t i = 0; i < cplx_count; ++i) {
    const double a = xc[i][0], b = xc[i][1], c = kc[i][0], d = kc[i][1];
    xc[i][0] = a * c - b * d;
    xc[i][1] = a * d + b * c;
  }
  inv->execute();
  const double norm = 1.0 / static_cast<double>(real_count);
  const int cr = rows / 2, cc = cols / 2;
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      out[static_cast<std::size_t>(i) * cols + j] = xr[static_cast<std::size_t>(i + cr) * pc + (j + cc)] * norm;
  return out;
}

std::vector<double> convolve_direct(std::span<const double> x, std::span<const double> k, int rows, int cols) {
  std::vector<double> out(static_cast<std::size_t>(rows) * cols, 0.0);
  const int cr = rows / 2, cc = cols / 2;
  for (int p = 0; p < rows; ++p)
    for (int q = 0; q < cols; ++q) {
      const double kv = k[static_cast<std::size_t>(p) * cols + q];
      if (kv == 0.0) continue;
      for (int i = 0; i < rows; ++i) {
        const int si = i - p + cr;
        if (si < 0 || si >= rows) continue;
        for (int j = 0; j < cols; ++j) {
          const int sj = j - q + cc;
          if (sj < 0 || sj >= cols) continue;
          out[static_cast<std::size_t>(i) * cols + j] += kv * x[static_cast<std::size_t>(si) * cols + sj];
        }
      }
    }
  return out;
}

}  // namespace

CccParams CccParams::zeros(int n, bool with_gain) {
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  CccParams p;
  p.n = n;
  p.filters = {std::vector<double>(plane, 0.0), std::vector<double>(plane, 0.0)};
  p.bias.assign(plane, 0.0);
  if (with_gain) p.gain = std::vector<double>(plane, 1.0);
  return p;
}

void CccParams::validate() const {
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  auto check = [plane](const std::vector<double>& v, const char* name) {
    if (v.size() != plane) throw DataError(std::string("CCC ") + name + " has wrong size");
    for (double x : v)
      if (!std::isfinite(x)) throw DataError(std::string("CCC ") + name + " has non-finite entries");
  };
  if (n < 2) throw DataError("CCC parameters have invalid size");
  check(filters[0], "pixel filter");
  check(filters[1], "gradient filter");
  check(bias, "bias");
  if (gain) check(*gain, "gain");
}

std::vector<double> convolve2d(std::span<const double> x, std::span<const double> kernel, int rows, int cols,
                               ConvMode mode) {
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  if (rows <= 0 || cols <= 0 || x.size() != count || kernel.size() != count) {
    throw DataError("convolve2d: input and kernel sizes do not match");
  }
  return mode == ConvMode::kFft ? convolve_fft(x, kernel, rows, cols) : convolve_direct(x, kernel, rows, cols);
}

std::vector<double> ccc_logits(const ChromaHistogram& h, const CccParams& params, ConvMode mode) {
  params.validate();
  const int n = params.n;
  if (h.cfg.n != n) throw DataError("histogram size differs from CCC parameter size");
  std::vector<double> response(static_cast<std::size_t>(n) * n, 0.0);
  for (int c = 0; c < 2; ++c) {
    const std::vector<double> r = convolve2d(h.channel(c), params.filters[c], n, n, mode);
    for (std::size_t i = 0; i < r.size(); ++i) response[i] += r[i];
  }
  std::vector<double> logits = params.bias;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    logits[i] += params.gain ? (*params.gain)[i] * response[i] : response[i];
    if (!std::isfinite(logits[i])) throw NumericalError("CCC logits are not finite");
  }
  return logits;
}

HeatMap softmax_heatmap(std::span<const double> logits, int n) {
  if (logits.size() != static_cast<std::size_t>(n) * n) throw DataError("softmax: logit count mismatch");
  HeatMap hm{n, std::vector<double>(logits.size())};
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    hm.p[i] = std::exp(logits[i] - mx);
    s += hm.p[i];
  }
  for (double& v : hm.p) v /= s;
  return hm;
}

HeatMap evaluate_ccc(const ChromaHistogram& h, const CccParams& params, ConvMode mode) {
  return softmax_heatmap(ccc_logits(h, params, mode), params.n);
}

Uv soft_argmax(const HeatMap& p, const HistogramConfig& cfg) {
  if (p.n != cfg.n) throw DataError("heat map size differs from histogram configuration");
  Uv uv;
  for (int row = 0; row < p.n; ++row)
    for (int col = 0; col < p.n; ++col) {
      const double w = p.p[static_cast<std::size_t>(row) * p.n + col];
      uv.u += cfg.bin_center(col) * w;
      uv.v += cfg.bin_center(row) * w;
    }
  return uv;
}

Rgb uv_to_rgb(const Uv& uv) {
  if (!std::isfinite(uv.u) || !std::isfinite(uv.v) || std::abs(uv.u) > 700.0 || std::abs(uv.v) > 700.0) {
    throw NumericalError("log-chroma coordinates outside the representable range");
  }
  const double a = std::exp(-uv.u), c = std::exp(-uv.v);
  // hypot avoids overflow of the squares for large |u|, |v|.
  const double z = std::hypot(a, c, 1.0);
  return {a / z, 1.0 / z, c / z};
}

Rgb estimate_illuminant(const ChromaHistogram& h, const CccParams& params, const HistogramConfig& cfg) {
  return uv_to_rgb(soft_argmax(evaluate_ccc(h, params), cfg));
}

}  // namespace c5cc
