#include "eeg2rep/autodiff.hpp"

#include "eeg2rep/losses.hpp"

#include <cmath>
#include <numbers>

namespace eeg2rep::ad {

const Matrix& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Matrix& value, Matrix* grad_sink) {
  const bool rg = grad_enabled_ && grad_sink != nullptr;
  nodes_.push_back(Node{value, {}, rg, false, {}, rg ? grad_sink : nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool rg = false;
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (in.tape_ != this) throw Error("autodiff: op inputs belong to a different tape");
      rg = rg || nodes_[in.id()].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), {}, rg, false, rg ? std::move(backward) : Backward{}, nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& loss) {
  if (!grad_enabled_) throw Error("autodiff: backward() on a tape with gradients disabled");
  if (loss.rows() != 1 || loss.cols() != 1) throw Error("autodiff: backward() needs a 1x1 loss");
  if (!requires_grad(loss)) return;
  accumulate(loss, Matrix::Ones(1, 1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.grad_ready) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.sink) *n.sink += n.grad;
  }
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string("autodiff: shape mismatch in ") + op + ": " + std::to_string(a.rows()) + "x" +
                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * (1.0 / std::numbers::sqrt2)));
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return cdf + x * pdf;
}

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * (1.0 / std::numbers::sqrt2))); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var scale(const Var& x, double s) {
  return x.tape().record(x.value() * s, {x}, [x, s](Tape& t, const Matrix& g) { t.accumulate(x, g * s); });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw Error("autodiff: inner dimension mismatch in matmul");
  return a.tape().record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Var add_row(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) throw Error("autodiff: add_row expects a 1 x d row");
  Matrix out = x.value().rowwise() + row.value().row(0);
  return x.tape().record(std::move(out), {x, row}, [x, row](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw Error("autodiff: shape mismatch in linear");
  }
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return x.tape().record(std::move(out), {x, w, b}, [x, w, b](Tape& t, const Matrix& g) {
    if (x.requires_grad()) t.accumulate(x, g * w.value().transpose());
    if (w.requires_grad()) t.accumulate(w, x.value().transpose() * g);
    if (b.requires_grad()) t.accumulate(b, g.colwise().sum());
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index d = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw Error("autodiff: layer_norm parameters must be 1 x d");
  }
  const Vector mean = xv.rowwise().mean();
  Matrix xhat = xv.colwise() - mean;
  Vector inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    inv_std(i) = 1.0 / std::sqrt(xhat.row(i).squaredNorm() / static_cast<double>(d) + eps);
    xhat.row(i) *= inv_std(i);
  }
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Matrix& g) {
        if (gamma.requires_grad()) t.accumulate(gamma, (g.array() * xhat.array()).colwise().sum().matrix());
        if (beta.requires_grad()) t.accumulate(beta, g.colwise().sum());
        if (!x.requires_grad()) return;
        const Matrix gx = g.array().rowwise() * gamma.value().row(0).array();
        const double inv_d = 1.0 / static_cast<double>(gx.cols());
        Matrix dx(gx.rows(), gx.cols());
        for (Eigen::Index i = 0; i < gx.rows(); ++i) {
          const double m1 = gx.row(i).sum() * inv_d;
          const double m2 = gx.row(i).dot(xhat.row(i)) * inv_d;
          dx.row(i) = inv_std(i) * (gx.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
        }
        t.accumulate(x, dx);
      });
}

Var gelu(const Var& x) {
  Matrix out = x.value().unaryExpr([](double v) { return gelu_value(v); });
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, (g.array() * x.value().unaryExpr([](double v) { return gelu_grad(v); }).array()).matrix());
  });
}

namespace {

Matrix softmax_rows(const Matrix& s) {
  Matrix p(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    p.row(i) = (s.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

int head_dim(Eigen::Index d, int heads) {
  if (heads < 1 || d % heads != 0) throw Error("autodiff: attention width must be divisible by heads");
  return static_cast<int>(d / heads);
}

}  // namespace

std::vector<Matrix> attention_weights(const Matrix& q, const Matrix& k, int heads) {
  const int dh = head_dim(q.cols(), heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> probs;
  probs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    probs.push_back(softmax_rows(q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * inv_sqrt));
  }
  return probs;
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  if (qv.cols() != kv.cols() || kv.cols() != vv.cols() || kv.rows() != vv.rows()) {
    throw Error("autodiff: shape mismatch in attention");
  }
  if (kv.rows() == 0) throw Error("autodiff: attention over an empty key set");
  const int dh = head_dim(qv.cols(), heads);
  auto probs = attention_weights(qv, kv, heads);
  Matrix out(qv.rows(), qv.cols());
  for (int h = 0; h < heads; ++h) out.middleCols(h * dh, dh) = probs[h] * vv.middleCols(h * dh, dh);
  return q.tape().record(std::move(out), {q, k, v}, [q, k, v, heads, dh, probs = std::move(probs)](Tape& t, const Matrix& g) {
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix dq = Matrix::Zero(q.rows(), q.cols());
    Matrix dk = Matrix::Zero(k.rows(), k.cols());
    Matrix dv = Matrix::Zero(v.rows(), v.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = probs[h];
      const auto go = g.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * go;
      const Matrix dp = go * v.value().middleCols(h * dh, dh).transpose();
      Matrix ds = p.cwiseProduct(dp);
      const Vector rowdot = ds.rowwise().sum();
      ds -= (p.array().colwise() * rowdot.array()).matrix();
      ds *= inv_sqrt;
      dq.middleCols(h * dh, dh).noalias() = ds * k.value().middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * q.value().middleCols(h * dh, dh);
    }
    t.accumulate(q, dq);
    t.accumulate(k, dk);
    t.accumulate(v, dv);
  });
}

Var gather_rows(const Var& x, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) throw Error("autodiff: gather_rows index out of range");
    out.row(i) = x.value().row(rows[i]);
  }
  IndexList idx(rows.begin(), rows.end());
  return x.tape().record(std::move(out), {x}, [x, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix dx = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) dx.row(idx[i]) += g.row(i);
    t.accumulate(x, dx);
  });
}

Var mean_rows(const Var& x) {
  const double n = static_cast<double>(x.rows());
  return x.tape().record(x.value().colwise().mean(), {x}, [x, n](Tape& t, const Matrix& g) {
    t.accumulate(x, Matrix(g.replicate(x.rows(), 1) / n));
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw Error("autodiff: stack_rows of nothing");
  const Eigen::Index d = rows.front().cols();
  Matrix out(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].rows() != 1 || rows[i].cols() != d) throw Error("autodiff: stack_rows expects 1 x d rows");
    out.row(i) = rows[i].value();
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  return rows.front().tape().record(std::move(out), rows, [inputs](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) t.accumulate(inputs[i], g.row(i));
  });
}

Var squared_error_sum(const Var& x, const Matrix& target) {
  require_same_shape(x.value(), target, "squared_error_sum");
  Matrix diff = x.value() - target;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm();
  return x.tape().record(std::move(out), {x}, [x, diff = std::move(diff)](Tape& t, const Matrix& g) {
    t.accumulate(x, 2.0 * g(0, 0) * diff);
  });
}

Var weighted_sum(std::span<const std::pair<double, Var>> terms) {
  if (terms.empty()) throw Error("autodiff: weighted_sum of nothing");
  Matrix out = Matrix::Zero(1, 1);
  std::vector<Var> inputs;
  std::vector<double> weights;
  for (const auto& [w, v] : terms) {
    if (v.rows() != 1 || v.cols() != 1) throw Error("autodiff: weighted_sum expects 1 x 1 terms");
    out(0, 0) += w * v.value()(0, 0);
    inputs.push_back(v);
    weights.push_back(w);
  }
  Tape& tape = inputs.front().tape();
  return tape.record(std::move(out), std::span<const Var>(inputs), [inputs, weights](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) t.accumulate(inputs[i], Matrix::Constant(1, 1, weights[i] * g(0, 0)));
  });
}

Var variance_hinge(const Var& r, double target, double eps) {
  Matrix out(1, 1);
  out(0, 0) = variance_loss(r.value(), target, eps);
  return r.tape().record(std::move(out), {r}, [r, target, eps](Tape& t, const Matrix& g) {
    const Matrix& x = r.value();
    const double n = static_cast<double>(x.rows());
    const double d = static_cast<double>(x.cols());
    const Matrix centered = x.rowwise() - x.colwise().mean();
    const RowVector std = column_std(x, eps);
    Matrix dx = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (target - std(c) <= 0.0) continue;
      // d/dx of -sqrt(var + eps) with var = mean((x - mean)^2)
      dx.col(c) = -centered.col(c) / (n * std(c) * d);
    }
    t.accumulate(r, g(0, 0) * dx);
  });
}

Var offdiag_covariance(const Var& r) {
  Matrix out(1, 1);
  out(0, 0) = covariance_loss(r.value());
  return r.tape().record(std::move(out), {r}, [r](Tape& t, const Matrix& g) {
    const Matrix& x = r.value();
    const double n = static_cast<double>(x.rows());
    const double d = static_cast<double>(x.cols());
    const Matrix centered = x.rowwise() - x.colwise().mean();
    Matrix c = centered.transpose() * centered / (n - 1.0);
    c.diagonal().setZero();
    // dL/dC = (2/d) offdiag(C); dC/dcentered contributes (2/(n-1)) centered * dL/dC.
    Matrix dcentered = centered * c * (4.0 / (d * (n - 1.0)));
    const RowVector mean = dcentered.colwise().mean();
    dcentered.rowwise() -= mean;
    t.accumulate(r, g(0, 0) * dcentered);
  });
}

Var depthwise_conv1d(const Matrix& x, const Var& w, const Var& b) {
  const Eigen::Index channels = x.rows();
  const Eigen::Index len = x.cols();
  const Eigen::Index k = w.cols();
  if (w.rows() != channels || b.rows() != channels || b.cols() != 1) {
    throw Error("autodiff: depthwise_conv1d parameter shape mismatch");
  }
  const Eigen::Index left = (k - 1) / 2;
  Matrix out(channels, len);
  const Matrix& wv = w.value();
  for (Eigen::Index c = 0; c < channels; ++c) {
    for (Eigen::Index t = 0; t < len; ++t) {
      double acc = b.value()(c, 0);
      for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::Index s = t + j - left;
        if (s >= 0 && s < len) acc += wv(c, j) * x(c, s);
      }
      out(c, t) = acc;
    }
  }
  return w.tape().record(std::move(out), {w, b}, [x, w, b, left](Tape& t, const Matrix& g) {
    const Eigen::Index channels = x.rows();
    const Eigen::Index len = x.cols();
    const Eigen::Index k = w.cols();
    if (w.requires_grad()) {
      Matrix dw = Matrix::Zero(channels, k);
      for (Eigen::Index c = 0; c < channels; ++c)
        for (Eigen::Index j = 0; j < k; ++j)
          for (Eigen::Index tt = 0; tt < len; ++tt) {
            const Eigen::Index s = tt + j - left;
            if (s >= 0 && s < len) dw(c, j) += g(c, tt) * x(c, s);
          }
      t.accumulate(w, dw);
    }
    if (b.requires_grad()) t.accumulate(b, g.rowwise().sum());
  });
}

Var channel_mix(const Var& x, const Var& w, const Var& b) {
  if (w.cols() != x.rows() || b.rows() != w.rows() || b.cols() != 1) {
    throw Error("autodiff: channel_mix shape mismatch");
  }
  Matrix mixed = w.value() * x.value();
  mixed.colwise() += b.value().col(0);
  return x.tape().record(mixed.transpose(), {x, w, b}, [x, w, b](Tape& t, const Matrix& g) {
    const Matrix gt = g.transpose();
    if (x.requires_grad()) t.accumulate(x, w.value().transpose() * gt);
    if (w.requires_grad()) t.accumulate(w, gt * x.value().transpose());
    if (b.requires_grad()) t.accumulate(b, gt.rowwise().sum());
  });
}

Var max_pool_rows(const Var& x, int pool) {
  if (pool < 1 || x.rows() % pool != 0) throw Error("autodiff: pool size must divide the row count");
  const Eigen::Index out_rows = x.rows() / pool;
  Matrix out(out_rows, x.cols());
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> arg(out_rows, x.cols());
  const Matrix& xv = x.value();
  for (Eigen::Index r = 0; r < out_rows; ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      Eigen::Index best = r * pool;
      for (Eigen::Index s = r * pool + 1; s < (r + 1) * pool; ++s)
        if (xv(s, c) > xv(best, c)) best = s;
      arg(r, c) = best;
      out(r, c) = xv(best, c);
    }
  }
  return x.tape().record(std::move(out), {x}, [x, arg = std::move(arg)](Tape& t, const Matrix& g) {
    Matrix dx = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); ++c) dx(arg(r, c), c) += g(r, c);
    t.accumulate(x, dx);
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    throw Error("autodiff: softmax_cross_entropy label count mismatch");
  }
  Matrix p = softmax_rows(logits.value());
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= logits.cols()) throw Error("autodiff: label out of range");
    loss -= std::log(std::max(p(i, labels[i]), 1e-300));
  }
  const double n = static_cast<double>(labels.size());
  Matrix out(1, 1);
  out(0, 0) = loss / n;
  IndexList y(labels.begin(), labels.end());
  return logits.tape().record(std::move(out), {logits}, [logits, p = std::move(p), y = std::move(y), n](Tape& t, const Matrix& g) {
    Matrix d = p;
    for (std::size_t i = 0; i < y.size(); ++i) d(i, y[i]) -= 1.0;
    t.accumulate(logits, d * (g(0, 0) / n));
  });
}

}  // namespace eeg2rep::ad
