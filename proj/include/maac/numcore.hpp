#pragma once

// Dense double-precision kernel: row-major matrices, affine layers with
// hand-written backward passes, softmax, Adam and a central-difference
// gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace maac {

using Rng = std::mt19937_64;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kLeakySlope = 0.01;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    m.data_.reserve(m.rows_ * m.cols_);
    for (const auto& r : rows) {
      if (r.size() != m.cols_) throw DimensionError("Matrix::from_rows: ragged rows");
      m.data_.insert(m.data_.end(), r.begin(), r.end());
    }
    return m;
  }

  static Matrix row_vector(std::span<const double> values) {
    Matrix m(1, values.size());
    std::copy(values.begin(), values.end(), m.data_.begin());
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(0.0); }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  void require_same_shape(const Matrix& o, const char* what) const {
    if (!same_shape(o)) throw DimensionError(std::string(what) + ": shape mismatch");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + shape_str(a) + " * " + shape_str(b));
  Matrix out(a.rows(), b.cols());
  const std::size_t n = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    const double* ar = a.row(i).data();
    for (std::size_t k = 0; k < n; ++k) {
      const double av = ar[k];
      if (av == 0.0) continue;
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// a^T * b, accumulated into out (used for weight gradients).
inline void matmul_tn_accumulate(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols())
    throw DimensionError("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
  const std::size_t m = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* ar = a.row(r).data();
    const double* br = b.row(r).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
  Matrix out(a.rows(), b.rows());
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

// Concatenate blocks column-wise; all blocks must share a row count.
inline Matrix hconcat(std::span<const Matrix* const> blocks) {
  if (blocks.empty()) return {};
  const std::size_t rows = blocks.front()->rows();
  std::size_t cols = 0;
  for (const Matrix* b : blocks) {
    if (b->rows() != rows) throw DimensionError("hconcat: row count mismatch");
    cols += b->cols();
  }
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.row(r).data();
    for (const Matrix* b : blocks) {
      const auto src = b->row(r);
      o = std::copy(src.begin(), src.end(), o);
    }
  }
  return out;
}

inline Matrix hconcat(std::initializer_list<const Matrix*> blocks) {
  return hconcat(std::span<const Matrix* const>(blocks.begin(), blocks.size()));
}

inline Matrix column_block(const Matrix& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.cols()) throw DimensionError("column_block: out of range");
  Matrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto src = m.row(r).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

inline Matrix one_hot(std::span<const int> indices, std::size_t width) {
  Matrix out(indices.size(), width);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || static_cast<std::size_t>(indices[r]) >= width)
      throw DimensionError("one_hot: index out of range");
    out(r, static_cast<std::size_t>(indices[r])) = 1.0;
  }
  return out;
}

// --- Learnable parameters -------------------------------------------------

struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
  std::int64_t step_count = 0;

  ParamTensor() = default;
  ParamTensor(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)),
        value(rows, cols),
        grad(rows, cols),
        adam_m(rows, cols),
        adam_v(rows, cols) {}

  std::size_t rows() const noexcept { return value.rows(); }
  std::size_t cols() const noexcept { return value.cols(); }
  void zero_grad() { grad.set_zero(); }
};

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline void init_uniform_fan_in(ParamTensor& p, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : p.value.data()) v = dist(rng);
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_step(ParamTensor& p, const AdamConfig& cfg) {
  ++p.step_count;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step_count));
  auto value = p.value.data();
  auto grad = p.grad.data();
  auto m = p.adam_m.data();
  auto v = p.adam_v.data();
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  p.zero_grad();
}

// --- Layer primitives -----------------------------------------------------

// y = x W + b. `b` may be null for bias-free projections.
inline Matrix affine(const Matrix& x, const ParamTensor& w, const ParamTensor* b) {
  if (x.cols() != w.rows())
    throw DimensionError("affine: input width " + std::to_string(x.cols()) +
                         " does not match weight " + shape_str(w.value) + " (" + w.name + ")");
  Matrix y = matmul(x, w.value);
  if (b != nullptr) {
    if (b->rows() != 1 || b->cols() != w.cols())
      throw DimensionError("affine: bias shape mismatch (" + b->name + ")");
    const auto bias = b->value.row(0);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      for (std::size_t c = 0; c < yr.size(); ++c) yr[c] += bias[c];
    }
  }
  return y;
}

// Accumulates dW, db and returns dx.
inline Matrix affine_backward(const Matrix& x, const Matrix& dy, ParamTensor& w, ParamTensor* b,
                              bool need_dx = true) {
  if (dy.rows() != x.rows() || dy.cols() != w.cols())
    throw DimensionError("affine_backward: upstream gradient shape mismatch (" + w.name + ")");
  matmul_tn_accumulate(x, dy, w.grad);
  if (b != nullptr) {
    auto db = b->grad.row(0);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      const auto g = dy.row(r);
      for (std::size_t c = 0; c < g.size(); ++c) db[c] += g[c];
    }
  }
  if (!need_dx) return {};
  return matmul_nt(dy, w.value);
}

inline double leaky_relu(double x, double slope = kLeakySlope) noexcept {
  return x > 0.0 ? x : slope * x;
}

inline Matrix leaky_relu(const Matrix& x, double slope = kLeakySlope) {
  Matrix y = x;
  for (double& v : y.data()) v = leaky_relu(v, slope);
  return y;
}

// Gradient through leaky ReLU given the pre-activation.
inline Matrix leaky_relu_backward(const Matrix& pre, const Matrix& dy, double slope = kLeakySlope) {
  if (!pre.same_shape(dy)) throw DimensionError("leaky_relu_backward: shape mismatch");
  Matrix dx = dy;
  auto d = dx.data();
  const auto p = pre.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (p[i] <= 0.0) d[i] *= slope;
  return dx;
}

inline void softmax_inplace(std::span<double> v) {
  if (v.empty()) throw DimensionError("softmax: empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  softmax_inplace(out);
  return out;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out = logits;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

// log of softmax probabilities, stable for large logits.
inline std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("log_softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

// Backward through softmax: dz = p * (dp - <dp, p>).
inline std::vector<double> softmax_backward(std::span<const double> probs,
                                            std::span<const double> dprobs) {
  double dot = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) dot += probs[k] * dprobs[k];
  std::vector<double> dz(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) dz[k] = probs[k] * (dprobs[k] - dot);
  return dz;
}

inline double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

// Fully connected layer owning its weight and bias.
struct Linear {
  ParamTensor weight;
  ParamTensor bias;
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true)
      : weight(name + ".weight", in, out), bias(name + ".bias", 1, out), has_bias(with_bias) {
    init_uniform_fan_in(weight, in, rng);
    if (!has_bias) bias = ParamTensor(name + ".bias", 0, 0);
  }

  std::size_t in_dim() const noexcept { return weight.rows(); }
  std::size_t out_dim() const noexcept { return weight.cols(); }

  Matrix forward(const Matrix& x) const { return affine(x, weight, has_bias ? &bias : nullptr); }
  Matrix backward(const Matrix& x, const Matrix& dy, bool need_dx = true) {
    return affine_backward(x, dy, weight, has_bias ? &bias : nullptr, need_dx);
  }

  template <class F>
  void for_each_param(F&& f) {
    f(weight);
    if (has_bias) f(bias);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f(weight);
    if (has_bias) f(bias);
  }
};

// --- Gradient checking ----------------------------------------------------

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

enum class Stencil {
  central2,  // (f(x+h) - f(x-h)) / 2h
  central4,  // fourth-order central difference
};

// Compares the gradients already stored in each ParamTensor::grad with
// central differences of `loss`. `loss` must not touch the grads.
// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
// Differencing loses about machine-eps * |loss| / eps in absolute terms, so
// for losses of order one a floor near 1e-6 keeps near-zero components from
// reporting rounding noise as error.
template <class LossFn>
GradCheckReport grad_check(LossFn&& loss, std::span<ParamTensor* const> params, double eps = 1e-5,
                           Stencil stencil = Stencil::central2, double floor = 1e-8) {
  GradCheckReport report;
  const auto eval = [&] {
    const double v = loss();
    if (!std::isfinite(v)) throw EvaluationError("grad_check: non-finite loss");
    return v;
  };
  eval();
  for (ParamTensor* p : params) {
    auto value = p->value.data();
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double saved = value[k];
      const auto at = [&](double offset) {
        value[k] = saved + offset;
        const double v = eval();
        value[k] = saved;
        return v;
      };
      double numeric = (at(eps) - at(-eps)) / (2.0 * eps);
      if (stencil == Stencil::central4) {
        const double wide = (at(2.0 * eps) - at(-2.0 * eps)) / (4.0 * eps);
        numeric = (4.0 * numeric - wide) / 3.0;
      }
      const double analytic = p->grad[k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > report.max_relative_error) report = {rel, p->name, k, analytic, numeric};
    }
  }
  return report;
}

}  // namespace maac
