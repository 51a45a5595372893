#include "recon/tape.hpp"

#include <algorithm>
#include <cmath>

namespace recon {

const Tensor& Var::value() const { return tape->val(id); }

int Tape::push(Tensor value, std::string name, bool needs_grad,
               std::function<void(Tape&, int)> backward) {
  value.quantize();
  if (check_finite && !all_finite(value)) {
    throw NonFiniteError("non-finite value produced by node '" + name + "' (id " +
                         std::to_string(nodes_.size()) + ")");
  }
  Node n;
  n.value = std::move(value);
  n.name = std::move(name);
  n.needs_grad = needs_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::leaf(Tensor value, std::string name) {
  int id = push(std::move(value), std::move(name), true, nullptr);
  return Var{this, id};
}

Var Tape::constant(Tensor value, std::string name) {
  int id = push(std::move(value), std::move(name), false, nullptr);
  return Var{this, id};
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(int id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  Tensor& dst = grad(id);
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += g.data[i];
  dst.quantize();
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw GraphError("backward: loss var belongs to a different tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw GraphError("backward: loss must be scalar, got shape " +
                     nodes_[loss.id].value.shape_str());
  }
  grad(loss.id).data[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.needs_grad) continue;
    if (check_finite && !all_finite(n.grad)) {
      throw NonFiniteError("non-finite gradient at node '" + n.name + "' (id " +
                           std::to_string(i) + ")");
    }
    if (n.backward) n.backward(*this, i);
  }
}

const Tensor* Tape::grad_of(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? &n.grad : nullptr;
}

// ---- op helpers ------------------------------------------------------------

namespace {

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) throw GraphError(std::string(op) + ": operands on different tapes");
}

void require_same_shape(Var a, Var b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw GraphError(std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " +
                     b.value().shape_str());
  }
}

// Elementwise unary op with a precomputed local derivative.
Var unary_op(Var a, const char* name, const std::function<double(double)>& f,
             const std::function<double(double, double)>& dfdx /* (x, y) */) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = f(x.data[i]);
  const bool ng = t.needs_grad(a.id);
  Tensor deriv;
  if (ng) {
    deriv = Tensor(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) deriv.data[i] = dfdx(x.data[i], y.data[i]);
  }
  int aid = a.id;
  int id = t.push(std::move(y), name, ng,
                  ng ? std::function<void(Tape&, int)>([aid, deriv](Tape& tp, int self) {
                    const Tensor& go = tp.grad(self);
                    Tensor g(go.shape);
                    for (std::size_t i = 0; i < g.size(); ++i)
                      g.data[i] = go.data[i] * deriv.data[i];
                    g.quantize();
                    tp.accumulate(aid, g);
                  })
                     : nullptr);
  return Var{&t, id};
}

}  // namespace

// ---- arithmetic ------------------------------------------------------------

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  require_same_shape(a, b, "add");
  Tape& t = *a.tape;
  const Tensor& xa = a.value();
  const Tensor& xb = b.value();
  Tensor y(xa.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = xa.data[i] + xb.data[i];
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  int aid = a.id, bid = b.id;
  int id = t.push(std::move(y), "add", ng, ng ? std::function<void(Tape&, int)>(
      [aid, bid](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        tp.accumulate(aid, go);
        tp.accumulate(bid, go);
      }) : nullptr);
  return Var{&t, id};
}

Var add_rowvec(Var a, Var b) {
  require_same_tape(a, b, "add_rowvec");
  Tape& t = *a.tape;
  const Tensor& xa = a.value();
  const Tensor& xb = b.value();
  const std::size_t n = xa.rows(), c = xa.cols();
  if (xb.size() != c) {
    throw GraphError("add_rowvec: vector size " + xb.shape_str() + " does not match cols of " +
                     xa.shape_str());
  }
  Tensor y(xa.shape);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) y.data[i * c + j] = xa.data[i * c + j] + xb.data[j];
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  int aid = a.id, bid = b.id;
  int id = t.push(std::move(y), "add_rowvec", ng, ng ? std::function<void(Tape&, int)>(
      [aid, bid, n, c](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        tp.accumulate(aid, go);
        if (tp.needs_grad(bid)) {
          Tensor gb(tp.val(bid).shape);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) gb.data[j] += go.data[i * c + j];
          gb.quantize();
          tp.accumulate(bid, gb);
        }
      }) : nullptr);
  return Var{&t, id};
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  Tape& t = *a.tape;
  const Tensor& xa = a.value();
  const Tensor& xb = b.value();
  Tensor y(xa.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = xa.data[i] - xb.data[i];
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  int aid = a.id, bid = b.id;
  int id = t.push(std::move(y), "sub", ng, ng ? std::function<void(Tape&, int)>(
      [aid, bid](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        tp.accumulate(aid, go);
        if (tp.needs_grad(bid)) {
          Tensor gb(go.shape);
          for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] = -go.data[i];
          tp.accumulate(bid, gb);
        }
      }) : nullptr);
  return Var{&t, id};
}

Var neg(Var a) { return scale(a, -1.0); }

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  Tape& t = *a.tape;
  const Tensor& xa = a.value();
  const Tensor& xb = b.value();
  Tensor y(xa.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = xa.data[i] * xb.data[i];
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  int aid = a.id, bid = b.id;
  int id = t.push(std::move(y), "mul", ng, ng ? std::function<void(Tape&, int)>(
      [aid, bid](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        if (tp.needs_grad(aid)) {
          const Tensor& xb2 = tp.val(bid);
          Tensor ga(go.shape);
          for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] = go.data[i] * xb2.data[i];
          ga.quantize();
          tp.accumulate(aid, ga);
        }
        if (tp.needs_grad(bid)) {
          const Tensor& xa2 = tp.val(aid);
          Tensor gb(go.shape);
          for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] = go.data[i] * xa2.data[i];
          gb.quantize();
          tp.accumulate(bid, gb);
        }
      }) : nullptr);
  return Var{&t, id};
}

Var mul_scalarv(Var a, Var s) {
  require_same_tape(a, s, "mul_scalarv");
  Tape& t = *a.tape;
  if (s.value().size() != 1) throw GraphError("mul_scalarv: scalar operand has size != 1");
  const Tensor& xa = a.value();
  const double sv = s.value().data[0];
  Tensor y(xa.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = xa.data[i] * sv;
  const bool ng = t.needs_grad(a.id) || t.needs_grad(s.id);
  int aid = a.id, sid = s.id;
  int id = t.push(std::move(y), "mul_scalarv", ng, ng ? std::function<void(Tape&, int)>(
      [aid, sid](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        const double sv2 = tp.val(sid).data[0];
        if (tp.needs_grad(aid)) {
          Tensor ga(go.shape);
          for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] = go.data[i] * sv2;
          ga.quantize();
          tp.accumulate(aid, ga);
        }
        if (tp.needs_grad(sid)) {
          const Tensor& xa2 = tp.val(aid);
          double acc = 0.0;
          for (std::size_t i = 0; i < go.size(); ++i) acc += go.data[i] * xa2.data[i];
          Tensor gs({1});
          gs.data[0] = round_scalar(acc);
          tp.accumulate(sid, gs);
        }
      }) : nullptr);
  return Var{&t, id};
}

Var mul_colvec(Var a, Var c) {
  require_same_tape(a, c, "mul_colvec");
  Tape& t = *a.tape;
  const Tensor& xa = a.value();
  const Tensor& xc = c.value();
  const std::size_t n = xa.rows(), m = xa.cols();
  if (xc.size() != n) {
    throw GraphError("mul_colvec: column vector " + xc.shape_str() + " does not match rows of " +
                     xa.shape_str());
  }
  Tensor y(xa.shape);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y.data[i * m + j] = xa.data[i * m + j] * xc.data[i];
  const bool ng = t.needs_grad(a.id) || t.needs_grad(c.id);
  int aid = a.id, cid = c.id;
  int id = t.push(std::move(y), "mul_colvec", ng, ng ? std::function<void(Tape&, int)>(
      [aid, cid, n, m](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        if (tp.needs_grad(aid)) {
          const Tensor& xc2 = tp.val(cid);
          Tensor ga(go.shape);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j)
              ga.data[i * m + j] = go.data[i * m + j] * xc2.data[i];
          ga.quantize();
          tp.accumulate(aid, ga);
        }
        if (tp.needs_grad(cid)) {
          const Tensor& xa2 = tp.val(aid);
          Tensor gc(tp.val(cid).shape);
          for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += go.data[i * m + j] * xa2.data[i * m + j];
            gc.data[i] = acc;
          }
          gc.quantize();
          tp.accumulate(cid, gc);
        }
      }) : nullptr);
  return Var{&t, id};
}

Var vdiv(Var a, Var b) {
  require_same_tape(a, b, "div");
  require_same_shape(a, b, "div");
  Tape& t = *a.tape;
  const Tensor& xa = a.value();
  const Tensor& xb = b.value();
  Tensor y(xa.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = xa.data[i] / xb.data[i];
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  int aid = a.id, bid = b.id;
  int id = t.push(std::move(y), "div", ng, ng ? std::function<void(Tape&, int)>(
      [aid, bid](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        const Tensor& xa2 = tp.val(aid);
        const Tensor& xb2 = tp.val(bid);
        if (tp.needs_grad(aid)) {
          Tensor ga(go.shape);
          for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] = go.data[i] / xb2.data[i];
          ga.quantize();
          tp.accumulate(aid, ga);
        }
        if (tp.needs_grad(bid)) {
          Tensor gb(go.shape);
          for (std::size_t i = 0; i < gb.size(); ++i)
            gb.data[i] = -go.data[i] * xa2.data[i] / (xb2.data[i] * xb2.data[i]);
          gb.quantize();
          tp.accumulate(bid, gb);
        }
      }) : nullptr);
  return Var{&t, id};
}

Var scale(Var a, double c) {
  return unary_op(a, "scale", [c](double x) { return c * x; },
                  [c](double, double) { return c; });
}

Var offset(Var a, double c) {
  return unary_op(a, "offset", [c](double x) { return x + c; },
                  [](double, double) { return 1.0; });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  Tape& t = *a.tape;
  const Tensor& xa = a.value();
  const Tensor& xb = b.value();
  if (xa.cols() != xb.rows()) {
    throw GraphError("matmul: shape mismatch " + xa.shape_str() + " vs " + xb.shape_str());
  }
  const std::size_t n = xa.rows(), k = xa.cols(), m = xb.cols();
  Tensor y({n, m});
  kernels::gemm_nn(xa.data.data(), xb.data.data(), y.data.data(), n, k, m);
  const bool ng = t.needs_grad(a.id) || t.needs_grad(b.id);
  int aid = a.id, bid = b.id;
  int id = t.push(std::move(y), "matmul", ng, ng ? std::function<void(Tape&, int)>(
      [aid, bid, n, k, m](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        if (tp.needs_grad(aid)) {
          // dA = dC * B^T
          Tensor ga({n, k});
          kernels::gemm_nt(go.data.data(), tp.val(bid).data.data(), ga.data.data(), n, m, k);
          ga.quantize();
          tp.accumulate(aid, ga);
        }
        if (tp.needs_grad(bid)) {
          // dB = A^T * dC
          Tensor gb({k, m});
          kernels::gemm_tn(tp.val(aid).data.data(), go.data.data(), gb.data.data(), k, n, m);
          gb.quantize();
          tp.accumulate(bid, gb);
        }
      }) : nullptr);
  return Var{&t, id};
}

// ---- nonlinearities ---------------------------------------------------------

Var softplus(Var a, double sharpness) {
  const double s = sharpness;
  return unary_op(
      a, "softplus",
      [s](double x) {
        const double z = s * x;
        if (z > 30.0) return x;
        return std::log1p(std::exp(z)) / s;
      },
      [s](double x, double) {
        const double z = s * x;
        if (z > 30.0) return 1.0;
        if (z < -30.0) return std::exp(z);
        return 1.0 / (1.0 + std::exp(-z));
      });
}

Var sigmoid(Var a) {
  return unary_op(
      a, "sigmoid",
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var vexp(Var a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Var vlog(Var a) {
  return unary_op(a, "log", [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Var vsqrt(Var a) {
  return unary_op(a, "sqrt", [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Var vsin(Var a) {
  return unary_op(a, "sin", [](double x) { return std::sin(x); },
                  [](double x, double) { return std::cos(x); });
}

Var vcos(Var a) {
  return unary_op(a, "cos", [](double x) { return std::cos(x); },
                  [](double x, double) { return -std::sin(x); });
}

Var vabs(Var a) {
  return unary_op(a, "abs", [](double x) { return std::fabs(x); },
                  [](double x, double) { return x >= 0.0 ? 1.0 : -1.0; });
}

Var clampv(Var a, double lo, double hi) {
  return unary_op(
      a, "clamp",
      [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---- reductions / reshaping -------------------------------------------------

Var sum_all(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  double acc = 0.0;
  for (double v : x.data) acc += v;
  Tensor y({1});
  y.data[0] = acc;
  const bool ng = t.needs_grad(a.id);
  int aid = a.id;
  int id = t.push(std::move(y), "sum", ng, ng ? std::function<void(Tape&, int)>(
      [aid](Tape& tp, int self) {
        const double g = tp.grad(self).data[0];
        Tensor ga(tp.val(aid).shape, g);
        tp.accumulate(aid, ga);
      }) : nullptr);
  return Var{&t, id};
}

Var mean_all(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t n = x.size();
  double acc = 0.0;
  for (double v : x.data) acc += v;
  Tensor y({1});
  y.data[0] = n == 0 ? 0.0 : acc / static_cast<double>(n);
  const bool ng = t.needs_grad(a.id);
  int aid = a.id;
  int id = t.push(std::move(y), "mean", ng, ng ? std::function<void(Tape&, int)>(
      [aid, n](Tape& tp, int self) {
        if (n == 0) return;
        const double g = tp.grad(self).data[0] / static_cast<double>(n);
        Tensor ga(tp.val(aid).shape, round_scalar(g));
        tp.accumulate(aid, ga);
      }) : nullptr);
  return Var{&t, id};
}

Var row_sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), c = x.cols();
  Tensor y({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += x.data[i * c + j];
    y.data[i] = acc;
  }
  const bool ng = t.needs_grad(a.id);
  int aid = a.id;
  int id = t.push(std::move(y), "row_sum", ng, ng ? std::function<void(Tape&, int)>(
      [aid, n, c](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        Tensor ga(tp.val(aid).shape);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) ga.data[i * c + j] = go.data[i];
        tp.accumulate(aid, ga);
      }) : nullptr);
  return Var{&t, id};
}

Var block_sum_rows(Var a, std::size_t block) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), c = x.cols();
  if (block == 0 || n % block != 0) {
    throw GraphError("block_sum_rows: rows " + std::to_string(n) + " not divisible by block " +
                     std::to_string(block));
  }
  const std::size_t r = n / block;
  Tensor y({r, c});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ri = i / block;
    for (std::size_t j = 0; j < c; ++j) y.data[ri * c + j] += x.data[i * c + j];
  }
  y.quantize();
  const bool ng = t.needs_grad(a.id);
  int aid = a.id;
  int id = t.push(std::move(y), "block_sum_rows", ng, ng ? std::function<void(Tape&, int)>(
      [aid, n, c, block](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        Tensor ga(tp.val(aid).shape);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t ri = i / block;
          for (std::size_t j = 0; j < c; ++j) ga.data[i * c + j] = go.data[ri * c + j];
        }
        tp.accumulate(aid, ga);
      }) : nullptr);
  return Var{&t, id};
}

Var repeat_rows(Var a, std::size_t n) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t c = x.size();
  Tensor y({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) y.data[i * c + j] = x.data[j];
  const bool ng = t.needs_grad(a.id);
  int aid = a.id;
  int id = t.push(std::move(y), "repeat_rows", ng, ng ? std::function<void(Tape&, int)>(
      [aid, n, c](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        Tensor ga(tp.val(aid).shape);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) ga.data[j] += go.data[i * c + j];
        ga.quantize();
        tp.accumulate(aid, ga);
      }) : nullptr);
  return Var{&t, id};
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw GraphError("concat_cols: empty input list");
  Tape& t = *xs[0].tape;
  const std::size_t n = xs[0].value().rows();
  std::size_t total = 0;
  bool ng = false;
  for (const Var& v : xs) {
    if (v.tape != &t) throw GraphError("concat_cols: operands on different tapes");
    if (v.value().rows() != n) {
      throw GraphError("concat_cols: row mismatch " + v.value().shape_str());
    }
    total += v.value().cols();
    ng = ng || t.needs_grad(v.id);
  }
  Tensor y({n, total});
  std::size_t off = 0;
  for (const Var& v : xs) {
    const Tensor& x = v.value();
    const std::size_t c = x.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) y.data[i * total + off + j] = x.data[i * c + j];
    off += c;
  }
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (const Var& v : xs) {
    ids.push_back(v.id);
    widths.push_back(v.value().cols());
  }
  int id = t.push(std::move(y), "concat_cols", ng, ng ? std::function<void(Tape&, int)>(
      [ids, widths, n, total](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        std::size_t off2 = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t c = widths[k];
          if (tp.needs_grad(ids[k])) {
            Tensor g(tp.val(ids[k]).shape);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < c; ++j) g.data[i * c + j] = go.data[i * total + off2 + j];
            tp.accumulate(ids[k], g);
          }
          off2 += c;
        }
      }) : nullptr);
  return Var{&t, id};
}

Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), c = x.cols();
  if (c0 >= c1 || c1 > c) throw GraphError("slice_cols: bad range on " + x.shape_str());
  const std::size_t w = c1 - c0;
  Tensor y({n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) y.data[i * w + j] = x.data[i * c + c0 + j];
  const bool ng = t.needs_grad(a.id);
  int aid = a.id;
  int id = t.push(std::move(y), "slice_cols", ng, ng ? std::function<void(Tape&, int)>(
      [aid, n, c, c0, w](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        Tensor ga(tp.val(aid).shape);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) ga.data[i * c + c0 + j] = go.data[i * w + j];
        tp.accumulate(aid, ga);
      }) : nullptr);
  return Var{&t, id};
}

Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw GraphError("concat_rows: empty input list");
  Tape& t = *xs[0].tape;
  const std::size_t c = xs[0].value().cols();
  std::size_t total = 0;
  bool ng = false;
  for (const Var& v : xs) {
    if (v.tape != &t) throw GraphError("concat_rows: operands on different tapes");
    if (v.value().cols() != c) throw GraphError("concat_rows: col mismatch");
    total += v.value().rows();
    ng = ng || t.needs_grad(v.id);
  }
  Tensor y({total, c});
  std::size_t off = 0;
  for (const Var& v : xs) {
    const Tensor& x = v.value();
    std::copy(x.data.begin(), x.data.end(), y.data.begin() + off * c);
    off += x.rows();
  }
  std::vector<int> ids;
  std::vector<std::size_t> rows;
  for (const Var& v : xs) {
    ids.push_back(v.id);
    rows.push_back(v.value().rows());
  }
  int id = t.push(std::move(y), "concat_rows", ng, ng ? std::function<void(Tape&, int)>(
      [ids, rows, c](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        std::size_t off2 = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (tp.needs_grad(ids[k])) {
            Tensor g(tp.val(ids[k]).shape);
            std::copy(go.data.begin() + off2 * c, go.data.begin() + (off2 + rows[k]) * c,
                      g.data.begin());
            tp.accumulate(ids[k], g);
          }
          off2 += rows[k];
        }
      }) : nullptr);
  return Var{&t, id};
}

Var reshape(Var a, std::vector<std::size_t> shape) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  if (n != x.size()) throw GraphError("reshape: element count mismatch");
  Tensor y = x;
  y.shape = shape;
  const bool ng = t.needs_grad(a.id);
  int aid = a.id;
  int id = t.push(std::move(y), "reshape", ng, ng ? std::function<void(Tape&, int)>(
      [aid](Tape& tp, int self) {
        Tensor g = tp.grad(self);
        g.shape = tp.val(aid).shape;
        tp.accumulate(aid, g);
      }) : nullptr);
  return Var{&t, id};
}

Var cumsum_exclusive_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), c = x.cols();
  Tensor y(x.shape);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y.data[i * c + j] = acc;
      acc += x.data[i * c + j];
    }
  }
  const bool ng = t.needs_grad(a.id);
  int aid = a.id;
  int id = t.push(std::move(y), "cumsum_exclusive_rows", ng, ng ? std::function<void(Tape&, int)>(
      [aid, n, c](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        Tensor ga(tp.val(aid).shape);
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (std::size_t j = c; j-- > 0;) {
            ga.data[i * c + j] = acc;
            acc += go.data[i * c + j];
          }
        }
        ga.quantize();
        tp.accumulate(aid, ga);
      }) : nullptr);
  return Var{&t, id};
}

// ---- geometry ops -----------------------------------------------------------

namespace {

// Inverts a single affine 4x4 (row-major, last row assumed (0,0,0,1)).
// Returns the determinant of the rotation block.
double invert_affine4(const double* m, double* out) {
  const double a = m[0], b = m[1], c = m[2];
  const double d = m[4], e = m[5], f = m[6];
  const double g = m[8], h = m[9], i = m[10];
  const double det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
  if (std::fabs(det) <= 1e-10) return det;
  const double inv = 1.0 / det;
  double r[9];
  r[0] = (e * i - f * h) * inv;
  r[1] = (c * h - b * i) * inv;
  r[2] = (b * f - c * e) * inv;
  r[3] = (f * g - d * i) * inv;
  r[4] = (a * i - c * g) * inv;
  r[5] = (c * d - a * f) * inv;
  r[6] = (d * h - e * g) * inv;
  r[7] = (b * g - a * h) * inv;
  r[8] = (a * e - b * d) * inv;
  const double tx = m[3], ty = m[7], tz = m[11];
  out[0] = r[0]; out[1] = r[1]; out[2] = r[2];
  out[4] = r[3]; out[5] = r[4]; out[6] = r[5];
  out[8] = r[6]; out[9] = r[7]; out[10] = r[8];
  out[3] = -(r[0] * tx + r[1] * ty + r[2] * tz);
  out[7] = -(r[3] * tx + r[4] * ty + r[5] * tz);
  out[11] = -(r[6] * tx + r[7] * ty + r[8] * tz);
  out[12] = 0.0; out[13] = 0.0; out[14] = 0.0; out[15] = 1.0;
  return det;
}

}  // namespace

Var inverse4(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  if (x.cols() != 16) throw GraphError("inverse4: expected [N,16], got " + x.shape_str());
  const std::size_t n = x.rows();
  Tensor y(x.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double det = invert_affine4(&x.data[i * 16], &y.data[i * 16]);
    if (std::fabs(det) <= 1e-10) {
      throw GraphError("inverse4: near-singular blend at row " + std::to_string(i) +
                       ", det = " + std::to_string(det));
    }
  }
  const bool ng = t.needs_grad(a.id);
  int aid = a.id;
  int id = t.push(std::move(y), "inverse4", ng, ng ? std::function<void(Tape&, int)>(
      [aid, n](Tape& tp, int self) {
        // dA = -Y^T dY Y^T for Y = A^{-1}, applied per item.
        const Tensor& go = tp.grad(self);
        const Tensor& yv = tp.val(self);
        Tensor ga(tp.val(aid).shape);
        for (std::size_t it = 0; it < n; ++it) {
          const double* y4 = &yv.data[it * 16];
          const double* g4 = &go.data[it * 16];
          double tmp[16];  // Y^T * dY
          for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
              double acc = 0.0;
              for (int k = 0; k < 4; ++k) acc += y4[k * 4 + i] * g4[k * 4 + j];
              tmp[i * 4 + j] = acc;
            }
          double* out = &ga.data[it * 16];
          // Input last row is assumed (0,0,0,1), so it carries no gradient.
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 4; ++j) {
              double acc = 0.0;
              for (int k = 0; k < 4; ++k) acc += tmp[i * 4 + k] * y4[j * 4 + k];
              out[i * 4 + j] = -acc;
            }
        }
        ga.quantize();
        tp.accumulate(aid, ga);
      }) : nullptr);
  return Var{&t, id};
}

Var transform_points(Var mats, const Tensor& pts) {
  Tape& t = *mats.tape;
  const Tensor& m = mats.value();
  if (m.cols() != 16) throw GraphError("transform_points: mats must be [N,16]");
  const std::size_t n = m.rows();
  if (pts.rows() != n || pts.cols() != 3) {
    throw GraphError("transform_points: pts must be [N,3] matching mats rows");
  }
  Tensor y({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    const double* mi = &m.data[i * 16];
    const double px = pts.data[i * 3], py = pts.data[i * 3 + 1], pz = pts.data[i * 3 + 2];
    for (int r = 0; r < 3; ++r) {
      y.data[i * 3 + r] = mi[r * 4] * px + mi[r * 4 + 1] * py + mi[r * 4 + 2] * pz + mi[r * 4 + 3];
    }
  }
  const bool ng = t.needs_grad(mats.id);
  int mid = mats.id;
  Tensor pcopy = pts;
  int id = t.push(std::move(y), "transform_points", ng, ng ? std::function<void(Tape&, int)>(
      [mid, n, pcopy](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        Tensor gm(tp.val(mid).shape);
        for (std::size_t i = 0; i < n; ++i) {
          const double px = pcopy.data[i * 3], py = pcopy.data[i * 3 + 1],
                       pz = pcopy.data[i * 3 + 2];
          for (int r = 0; r < 3; ++r) {
            const double g = go.data[i * 3 + r];
            double* row = &gm.data[i * 16 + r * 4];
            row[0] = g * px;
            row[1] = g * py;
            row[2] = g * pz;
            row[3] = g;
          }
        }
        gm.quantize();
        tp.accumulate(mid, gm);
      }) : nullptr);
  return Var{&t, id};
}

Var rotate_covector(Var mats, Var g) {
  require_same_tape(mats, g, "rotate_covector");
  Tape& t = *mats.tape;
  const Tensor& m = mats.value();
  const Tensor& x = g.value();
  if (m.cols() != 16) throw GraphError("rotate_covector: mats must be [N,16]");
  const std::size_t n = m.rows();
  if (x.rows() != n || x.cols() != 3) throw GraphError("rotate_covector: g must be [N,3]");
  Tensor y({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    const double* mi = &m.data[i * 16];
    const double* gi = &x.data[i * 3];
    for (int j = 0; j < 3; ++j) {
      y.data[i * 3 + j] = gi[0] * mi[j] + gi[1] * mi[4 + j] + gi[2] * mi[8 + j];
    }
  }
  const bool ng = t.needs_grad(mats.id) || t.needs_grad(g.id);
  int mid = mats.id, gid = g.id;
  int id = t.push(std::move(y), "rotate_covector", ng, ng ? std::function<void(Tape&, int)>(
      [mid, gid, n](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        const Tensor& m2 = tp.val(mid);
        const Tensor& x2 = tp.val(gid);
        if (tp.needs_grad(gid)) {
          Tensor gg({n, 3});
          for (std::size_t i = 0; i < n; ++i) {
            const double* mi = &m2.data[i * 16];
            const double* goi = &go.data[i * 3];
            for (int r = 0; r < 3; ++r) {
              gg.data[i * 3 + r] = mi[r * 4] * goi[0] + mi[r * 4 + 1] * goi[1] +
                                   mi[r * 4 + 2] * goi[2];
            }
          }
          gg.quantize();
          tp.accumulate(gid, gg);
        }
        if (tp.needs_grad(mid)) {
          Tensor gm(m2.shape);
          for (std::size_t i = 0; i < n; ++i) {
            const double* xi = &x2.data[i * 3];
            const double* goi = &go.data[i * 3];
            for (int r = 0; r < 3; ++r)
              for (int j = 0; j < 3; ++j) gm.data[i * 16 + r * 4 + j] = xi[r] * goi[j];
          }
          gm.quantize();
          tp.accumulate(mid, gm);
        }
      }) : nullptr);
  return Var{&t, id};
}

Var laplace_cdf(Var xi, Var beta) {
  require_same_tape(xi, beta, "laplace_cdf");
  Tape& t = *xi.tape;
  if (beta.value().size() != 1) throw GraphError("laplace_cdf: beta must be scalar");
  const Tensor& x = xi.value();
  const double b = beta.value().data[0];
  if (b <= 0.0) throw GraphError("laplace_cdf: beta must be positive");
  Tensor y(x.shape);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = x.data[i];
    y.data[i] = v < 0.0 ? 0.5 * std::exp(v / b) : 1.0 - 0.5 * std::exp(-v / b);
  }
  const bool ng = t.needs_grad(xi.id) || t.needs_grad(beta.id);
  int xid = xi.id, bid = beta.id;
  int id = t.push(std::move(y), "laplace_cdf", ng, ng ? std::function<void(Tape&, int)>(
      [xid, bid](Tape& tp, int self) {
        const Tensor& go = tp.grad(self);
        const Tensor& x2 = tp.val(xid);
        const double b2 = tp.val(bid).data[0];
        if (tp.needs_grad(xid)) {
          Tensor gx(x2.shape);
          for (std::size_t i = 0; i < gx.size(); ++i) {
            gx.data[i] = go.data[i] * std::exp(-std::fabs(x2.data[i]) / b2) / (2.0 * b2);
          }
          gx.quantize();
          tp.accumulate(xid, gx);
        }
        if (tp.needs_grad(bid)) {
          double acc = 0.0;
          for (std::size_t i = 0; i < x2.size(); ++i) {
            acc += go.data[i] * (-x2.data[i] / (2.0 * b2 * b2)) *
                   std::exp(-std::fabs(x2.data[i]) / b2);
          }
          Tensor gb({1});
          gb.data[0] = round_scalar(acc);
          tp.accumulate(bid, gb);
        }
      }) : nullptr);
  return Var{&t, id};
}

}  // namespace recon
