#pragma once

// Parameter containers are class templates over the tensor type T so the
// same layout can hold values (T = Matrix) or tape handles (T = ad::Var).
// Each provides
//
//   template <class F, class... S> static void zip(const std::string& prefix, F&& f, S&&... s);
//   template <class U> void resize_like(const X<U>& other);
//
// where zip calls f(name, s.field...) for every tensor field in a fixed
// order. The helpers below are written once against that protocol.

#include "eeg2rep/autodiff.hpp"

#include <cmath>
#include <string>

namespace eeg2rep {

template <class P>
std::size_t parameter_count(const P& p) {
  std::size_t n = 0;
  P::zip("", [&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); }, p);
  return n;
}

template <class P>
P zeros_like(const P& p) {
  P out = p;
  P::zip("", [](const std::string&, Matrix& m) { m.setZero(); }, out);
  return out;
}

/// Binds every tensor of `value` as a tape leaf. With a gradient container
/// (same layout, zero-filled) the leaves accumulate into it on backward().
template <template <class> class X>
X<ad::Var> bind(ad::Tape& tape, const X<Matrix>& value, X<Matrix>* grad = nullptr) {
  X<ad::Var> out;
  out.resize_like(value);
  if (grad) {
    X<Matrix>::zip(
        "", [&](const std::string&, ad::Var& o, const Matrix& v, Matrix& g) { o = tape.parameter(v, &g); }, out,
        value, *grad);
  } else {
    X<Matrix>::zip("", [&](const std::string&, ad::Var& o, const Matrix& v) { o = tape.parameter(v, nullptr); }, out,
                   value);
  }
  return out;
}

/// Elementwise target = tau * target + (1 - tau) * source.
template <class P>
void ema_blend(P& target, const P& source, double tau) {
  P::zip(
      "",
      [tau](const std::string& name, Matrix& t, const Matrix& s) {
        if (t.rows() != s.rows() || t.cols() != s.cols()) throw Error("EMA shape mismatch at " + name);
        t = tau * t + (1.0 - tau) * s;
      },
      target, source);
}

template <class P>
bool all_finite(const P& p) {
  bool ok = true;
  P::zip("", [&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); }, p);
  return ok;
}

/// One bias-corrected Adam update; `t` is the 1-based step count.
template <class P>
void adam_update(P& params, const P& grads, P& m, P& v, long t, double lr, double beta1, double beta2, double eps) {
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  P::zip(
      "",
      [&](const std::string&, Matrix& p, const Matrix& g, Matrix& mm, Matrix& vv) {
        mm = beta1 * mm + (1.0 - beta1) * g;
        vv = beta2 * vv + (1.0 - beta2) * g.cwiseProduct(g);
        p.array() -= lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + eps);
      },
      params, grads, m, v);
}

}  // namespace eeg2rep
