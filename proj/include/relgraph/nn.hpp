#pragma once

// Dense 64-bit layers with hand-written backward passes: exactly the set
// the relation model needs, plus Adam and a central-difference checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relgraph/error.hpp"
#include "relgraph/random.hpp"

namespace relgraph::nn {

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      fail(ErrorCode::kDimMismatch, "matrix data length " + std::to_string(data_.size()) +
                                        " does not match " + shape_string());
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols_) fail(ErrorCode::kDimMismatch, "ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  std::string shape_string() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    fail(ErrorCode::kDimMismatch,
         std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
  }
}

/// Horizontal concatenation of blocks with equal row counts.
inline Matrix hconcat(std::span<const Matrix* const> blocks) {
  if (blocks.empty()) return {};
  const std::size_t rows = blocks.front()->rows();
  std::size_t cols = 0;
  for (const auto* b : blocks) {
    require_shape(b->rows() == rows, "hconcat", *blocks.front(), *b);
    cols += b->cols();
  }
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = out.row(r).begin();
    for (const auto* b : blocks) dst = std::copy(b->row(r).begin(), b->row(r).end(), dst);
  }
  return out;
}

/// Column slice [begin, begin + width).
inline Matrix column_slice(const Matrix& m, std::size_t begin, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto src = m.row(r).subspan(begin, width);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

/// Trainable tensor with its gradient and Adam moment estimates.
struct Parameter {
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;

  Parameter() = default;
  explicit Parameter(Matrix init)
      : value(std::move(init)),
        grad(value.rows(), value.cols()),
        adam_m(value.rows(), value.cols()),
        adam_v(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
};

enum class Mode { kTrain, kEval };

// ---------------------------------------------------------------------------
// Linear

/// out = input * weight + bias (bias broadcast over rows).
inline Matrix linear_forward(const Matrix& input, const Parameter& weight, const Parameter& bias) {
  const Matrix& w = weight.value;
  const Matrix& b = bias.value;
  require_shape(input.cols() == w.rows(), "linear_forward(input, weight)", input, w);
  require_shape(b.rows() == 1 && b.cols() == w.cols(), "linear_forward(weight, bias)", w, b);
  const std::size_t n = w.rows(), m = w.cols();
  Matrix out(input.rows(), m);
  for (std::size_t r = 0; r < input.rows(); ++r) {
    double* o = out.row(r).data();
    std::copy(b.data().begin(), b.data().end(), o);
    const double* x = input.row(r).data();
    for (std::size_t k = 0; k < n; ++k) {
      const double xk = x[k];
      if (xk == 0.0) continue;
      const double* wk = w.row(k).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += xk * wk[j];
    }
  }
  return out;
}

struct LinearGrads {
  Matrix grad_input;
  Matrix grad_weight;
  Matrix grad_bias;
};

inline LinearGrads linear_backward(const Matrix& grad_out, const Matrix& input, const Matrix& weight,
                                   bool need_input_grad = true) {
  require_shape(grad_out.rows() == input.rows(), "linear_backward(grad_out, input)", grad_out, input);
  require_shape(input.cols() == weight.rows() && grad_out.cols() == weight.cols(),
                "linear_backward(input, weight)", input, weight);
  const std::size_t batch = input.rows(), n = weight.rows(), m = weight.cols();
  LinearGrads g{need_input_grad ? Matrix(batch, n) : Matrix(), Matrix(n, m), Matrix(1, m)};
  for (std::size_t r = 0; r < batch; ++r) {
    const double* go = grad_out.row(r).data();
    const double* x = input.row(r).data();
    double* gb = g.grad_bias.data().data();
    for (std::size_t j = 0; j < m; ++j) gb[j] += go[j];
    for (std::size_t k = 0; k < n; ++k) {
      const double xk = x[k];
      if (xk == 0.0) continue;
      double* gw = g.grad_weight.row(k).data();
      for (std::size_t j = 0; j < m; ++j) gw[j] += xk * go[j];
    }
    if (need_input_grad) {
      double* gi = g.grad_input.row(r).data();
      for (std::size_t k = 0; k < n; ++k) {
        const double* wk = weight.row(k).data();
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += wk[j] * go[j];
        gi[k] = acc;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU

inline Matrix relu_forward(const Matrix& x) {
  Matrix out = x;
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

/// Subgradient at exactly zero is taken as zero.
inline Matrix relu_backward(const Matrix& grad_out, const Matrix& x) {
  require_shape(grad_out.same_shape(x), "relu_backward", grad_out, x);
  Matrix g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(x.data()[i] > 0.0)) g.data()[i] = 0.0;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dropout (inverted)

struct DropoutResult {
  Matrix output;
  Matrix mask;  // per-element multiplier: 0 or 1/(1-rate); empty when identity
};

inline DropoutResult dropout_forward(const Matrix& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::kEval || rate == 0.0) return {x, Matrix()};
  const double keep_scale = 1.0 / (1.0 - rate);
  DropoutResult r{Matrix(x.rows(), x.cols()), Matrix(x.rows(), x.cols())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : keep_scale;
    r.mask.data()[i] = m;
    r.output.data()[i] = x.data()[i] * m;
  }
  return r;
}

inline Matrix dropout_backward(const Matrix& grad_out, const Matrix& mask) {
  if (mask.size() == 0) return grad_out;
  require_shape(grad_out.same_shape(mask), "dropout_backward", grad_out, mask);
  Matrix g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= mask.data()[i];
  return g;
}

// ---------------------------------------------------------------------------
// Softmax and loss

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto out = p.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) sum += out[j] = std::exp(in[j] - mx);
    for (auto& v : out) v /= sum;
  }
  return p;
}

struct LossResult {
  double loss = 0.0;
  Matrix grad_logits;
};

/// Mean categorical cross-entropy of softmax(logits) against integer targets.
inline LossResult softmax_cross_entropy(const Matrix& logits, std::span<const int> targets) {
  if (targets.size() != logits.rows()) {
    fail(ErrorCode::kDimMismatch, "softmax_cross_entropy: " + std::to_string(targets.size()) +
                                      " targets for " + logits.shape_string() + " logits");
  }
  const std::size_t batch = logits.rows(), classes = logits.cols();
  LossResult res{0.0, Matrix(batch, classes)};
  if (batch == 0) return res;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      fail(ErrorCode::kInvalidArgument, "target " + std::to_string(t) + " out of range [0," +
                                            std::to_string(classes) + ")");
    }
    auto in = logits.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (double v : in) sum += std::exp(v - mx);
    const double log_sum = std::log(sum);
    res.loss += -(in[t] - mx - log_sum);
    auto g = res.grad_logits.row(r);
    for (std::size_t j = 0; j < classes; ++j) g[j] = std::exp(in[j] - mx - log_sum) * inv_batch;
    g[t] -= inv_batch;
  }
  res.loss *= inv_batch;
  return res;
}

// ---------------------------------------------------------------------------
// Initialisation and optimisation

/// Glorot uniform: U(-a, a) with a = sqrt(6 / (rows + cols)).
inline Matrix xavier_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) fail(ErrorCode::kInvalidArgument, "xavier_init needs positive dims");
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = rng.uniform(-limit, limit);
  return m;
}

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline void check(const AdamConfig& c) {
  if (!(c.learning_rate >= 0.0) || !(c.beta1 >= 0.0 && c.beta1 < 1.0) ||
      !(c.beta2 >= 0.0 && c.beta2 < 1.0) || !(c.epsilon > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "invalid Adam hyperparameters");
  }
}

/// One bias-corrected Adam update at step t (1-based); clears gradients.
inline void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg, std::int64_t t) {
  if (t < 1) fail(ErrorCode::kInvalidArgument, "Adam step index must start at 1");
  check(cfg);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (Parameter* p : params) {
    auto& theta = p->value.data();
    auto& g = p->grad.data();
    auto& m = p->adam_m.data();
    auto& v = p->adam_v.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
      g[i] = 0.0;
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Compares the gradients stored in `params` against central differences of
/// `loss`. At most `max_coords_per_param` evenly strided coordinates of each
/// tensor are probed. Returns the largest |a - n| / max(|a|, |n|, 1e-8).
inline double finite_difference_check(const std::function<double()>& loss,
                                      std::span<Parameter* const> params, double epsilon,
                                      std::size_t max_coords_per_param = 64) {
  double worst = 0.0;
  for (Parameter* p : params) {
    auto& theta = p->value.data();
    const std::size_t n = theta.size();
    const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_coords_per_param));
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = theta[i];
      theta[i] = saved + epsilon;
      const double up = loss();
      theta[i] = saved - epsilon;
      const double down = loss();
      theta[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic = p->grad.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace relgraph::nn
