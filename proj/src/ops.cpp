#include "pyrhead/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pyrhead/errors.hpp"

namespace pyrhead::num {
namespace {

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw ContractError("operation on an unbound Var");
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

struct Broadcast {
  std::size_t rows, cols;
  std::size_t ar, ac, br, bc;
  Shape shape;

  // element strides in the broadcast view (0 along a broadcast axis)
  std::size_t a_rs() const { return ar == 1 ? 0 : ac; }
  std::size_t a_cs() const { return ac == 1 ? 0 : 1; }
  std::size_t b_rs() const { return br == 1 ? 0 : bc; }
  std::size_t b_cs() const { return bc == 1 ? 0 : 1; }
};

Broadcast broadcast(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast bc{0, 0, a.rows(), a.cols(), b.rows(), b.cols(), {}};
  auto dim = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a.shape()) + " with " +
                         shape_string(b.shape()));
  };
  bc.rows = dim(bc.ar, bc.br);
  bc.cols = dim(bc.ac, bc.bc);
  if (a.rows() == bc.rows && a.cols() == bc.cols) {
    bc.shape = a.shape();
  } else if (b.rows() == bc.rows && b.cols() == bc.cols) {
    bc.shape = b.shape();
  } else {
    bc.shape = {bc.rows, bc.cols};
  }
  return bc;
}

// f(x, y) with partials dfx(x, y, out), dfy(x, y, out).
template <class F, class Dx, class Dy>
Var binary(Var a, Var b, const char* name, F f, Dx dfx, Dy dfy) {
  Tape& tape = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast bc = broadcast(x, y, name);
  const bool same = x.shape() == y.shape();
  Tensor out(bc.shape);
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  } else {
    const std::size_t ars = bc.a_rs(), acs = bc.a_cs(), brs = bc.b_rs(), bcs = bc.b_cs();
    for (std::size_t r = 0; r < bc.rows; ++r)
      for (std::size_t c = 0; c < bc.cols; ++c) out[r * bc.cols + c] = f(x[r * ars + c * acs], y[r * brs + c * bcs]);
  }
  const bool rg = tape.requires_grad(a.id()) || tape.requires_grad(b.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [ida = a.id(), idb = b.id(), bc, same, dfx, dfy](Tape& t, Tape::NodeId self) {
      const Tensor& g = t.out_grad(self);
      const Tensor& x = t.value(ida);
      const Tensor& y = t.value(idb);
      const Tensor& o = t.value(self);
      Tensor* sa = t.requires_grad(ida) ? &t.grad_sink(ida) : nullptr;
      Tensor* sb = t.requires_grad(idb) ? &t.grad_sink(idb) : nullptr;
      if (same) {
        if (sa)
          for (std::size_t k = 0; k < g.size(); ++k) (*sa)[k] += g[k] * dfx(x[k], y[k], o[k]);
        if (sb)
          for (std::size_t k = 0; k < g.size(); ++k) (*sb)[k] += g[k] * dfy(x[k], y[k], o[k]);
        return;
      }
      const std::size_t ars = bc.a_rs(), acs = bc.a_cs(), brs = bc.b_rs(), bcs = bc.b_cs();
      for (std::size_t r = 0; r < bc.rows; ++r) {
        for (std::size_t c = 0; c < bc.cols; ++c) {
          const std::size_t k = r * bc.cols + c;
          const std::size_t i = r * ars + c * acs;
          const std::size_t j = r * brs + c * bcs;
          if (sa) (*sa)[i] += g[k] * dfx(x[i], y[j], o[k]);
          if (sb) (*sb)[j] += g[k] * dfy(x[i], y[j], o[k]);
        }
      }
    };
  }
  return tape.record(std::move(out), rg, std::move(fn));
}

// f(x) with derivative df(x, out).
template <class F, class D>
Var unary(Var a, F f, D df) {
  Tape& tape = a.tape();
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  const bool rg = tape.requires_grad(a.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [ida = a.id(), df](Tape& t, Tape::NodeId self) {
      const Tensor& g = t.out_grad(self);
      const Tensor& x = t.value(ida);
      const Tensor& o = t.value(self);
      Tensor& s = t.grad_sink(ida);
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[i] * df(x[i], o[i]);
    };
  }
  return tape.record(std::move(out), rg, std::move(fn));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_offsets(std::span<const std::size_t> offsets, std::size_t rows, const char* op) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != rows) {
    throw DimensionError(std::string(op) + ": segment offsets do not cover " + std::to_string(rows) + " rows");
  }
  for (std::size_t g = 1; g < offsets.size(); ++g) {
    if (offsets[g] < offsets[g - 1]) throw DimensionError(std::string(op) + ": decreasing segment offsets");
  }
}

Tensor matrix_product(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const std::size_t n = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t m = tb ? b.rows() : b.cols();
  if (k != kb) throw DimensionError("matmul: inner dimensions " + std::to_string(k) + " vs " + std::to_string(kb));
  Tensor out({n, m});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* O = out.data().data();
  const std::size_t acols = a.cols();
  const std::size_t bcols = b.cols();
  if (!ta && !tb) {
    for (std::size_t i = 0; i < n; ++i) {
      double* orow = O + i * m;
      const double* arow = A + i * acols;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = B + p * bcols;
        for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) {
    // rows of a against rows of b
    for (std::size_t i = 0; i < n; ++i) {
      const double* arow = A + i * acols;
      for (std::size_t j = 0; j < m; ++j) {
        const double* brow = B + j * bcols;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        O[i * m + j] = acc;
      }
    }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = A + p * acols;
      const double* brow = B + p * bcols;
      for (std::size_t i = 0; i < n; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* orow = O + i * m;
        for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += A[p * acols + i] * B[j * bcols + p];
        O[i * m + j] = acc;
      }
  }
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Var neg(Var a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var shift(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var one_minus(Var a) {
  return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return stable_sigmoid(x); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var smooth_l1(Var a) {
  return unary(
      a, [](double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; },
      [](double x, double) { return std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0); });
}

Var clamp_min(Var a, double lo) {
  return unary(
      a, [lo](double x) { return std::max(x, lo); }, [lo](double x, double) { return x >= lo ? 1.0 : 0.0; });
}

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  if (a.value().rank() != 2 || b.value().rank() != 2) throw DimensionError("matmul expects rank-2 operands");
  Tensor out = matrix_product(a.value(), b.value(), false, false);
  const bool rg = tape.requires_grad(a.id()) || tape.requires_grad(b.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [ida = a.id(), idb = b.id()](Tape& t, Tape::NodeId self) {
      const Tensor& g = t.out_grad(self);
      if (t.requires_grad(ida)) t.grad_sink(ida) += matrix_product(g, t.value(idb), false, true);
      if (t.requires_grad(idb)) t.grad_sink(idb) += matrix_product(t.value(ida), g, true, false);
    };
  }
  return tape.record(std::move(out), rg, std::move(fn));
}

Var linear(Var x, Var weight, Var bias) {
  Tape& tape = same_tape(x, weight);
  same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || wv.rank() != 2) throw DimensionError("linear expects rank-2 input and weight");
  if (xv.cols() != wv.rows()) {
    throw DimensionError("linear: input " + shape_string(xv.shape()) + " vs weight " + shape_string(wv.shape()));
  }
  if (bv.size() != wv.cols()) {
    throw DimensionError("linear: bias " + shape_string(bv.shape()) + " vs weight " + shape_string(wv.shape()));
  }
  Tensor out = matrix_product(xv, wv, false, false);
  const std::size_t m = wv.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] += bv[c];
  const bool rg = tape.requires_grad(x.id()) || tape.requires_grad(weight.id()) || tape.requires_grad(bias.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [idx = x.id(), idw = weight.id(), idb = bias.id()](Tape& t, Tape::NodeId self) {
      const Tensor& g = t.out_grad(self);
      if (t.requires_grad(idx)) t.grad_sink(idx) += matrix_product(g, t.value(idw), false, true);
      if (t.requires_grad(idw)) t.grad_sink(idw) += matrix_product(t.value(idx), g, true, false);
      if (t.requires_grad(idb)) {
        Tensor& sb = t.grad_sink(idb);
        const std::size_t m = g.cols();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < m; ++c) sb[c] += g[r * m + c];
      }
    };
  }
  return tape.record(std::move(out), rg, std::move(fn));
}

Var sum(Var a) {
  Tape& tape = a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const bool rg = tape.requires_grad(a.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [ida = a.id()](Tape& t, Tape::NodeId self) {
      const double g = t.out_grad(self)[0];
      for (double& v : t.grad_sink(ida).data()) v += g;
    };
  }
  return tape.record(Tensor::scalar(s), rg, std::move(fn));
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mean_rows(Var a) {
  Tape& tape = a.tape();
  const Tensor& x = a.value();
  const std::size_t n = x.rows();
  const std::size_t m = x.cols();
  if (n == 0) throw DimensionError("mean_rows of empty matrix");
  Tensor out({1, m});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[c] += x[r * m + c];
  out *= 1.0 / static_cast<double>(n);
  const bool rg = tape.requires_grad(a.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [ida = a.id(), n, m](Tape& t, Tape::NodeId self) {
      const Tensor& g = t.out_grad(self);
      Tensor& s = t.grad_sink(ida);
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) s[r * m + c] += g[c] * inv;
    };
  }
  return tape.record(std::move(out), rg, std::move(fn));
}

Var softmax(Var a) {
  Tape& tape = a.tape();
  const Tensor& x = a.value();
  if (x.size() == 0) throw DimensionError("softmax of empty input");
  require_finite(x, "softmax");
  const double mx = *std::max_element(x.data().begin(), x.data().end());
  Tensor out(x.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    z += out[i];
  }
  out *= 1.0 / z;
  const bool rg = tape.requires_grad(a.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [ida = a.id()](Tape& t, Tape::NodeId self) {
      const Tensor& g = t.out_grad(self);
      const Tensor& y = t.value(self);
      double dot = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
      Tensor& s = t.grad_sink(ida);
      for (std::size_t i = 0; i < y.size(); ++i) s[i] += y[i] * (g[i] - dot);
    };
  }
  return tape.record(std::move(out), rg, std::move(fn));
}

Var reshape(Var a, Shape shape) {
  Tape& tape = a.tape();
  const bool rg = tape.requires_grad(a.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [ida = a.id()](Tape& t, Tape::NodeId self) {
      Tensor& s = t.grad_sink(ida);
      const Tensor& g = t.out_grad(self);
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[i];
    };
  }
  return tape.record(a.value().reshaped(std::move(shape)), rg, std::move(fn));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  Tape& tape = parts.front().tape();
  const std::size_t n = parts.front().value().rows();
  std::size_t total = 0;
  bool rg = false;
  std::vector<Tape::NodeId> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    if (p.value().rows() != n) throw DimensionError("concat_cols: row count mismatch");
    total += p.value().cols();
    rg = rg || tape.requires_grad(p.id());
    ids.push_back(p.id());
    widths.push_back(p.value().cols());
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < w; ++c) out[r * total + off + c] = v[r * w + c];
    off += w;
  }
  Tape::BackwardFn fn;
  if (rg) {
    fn = [ids, widths, n, total](Tape& t, Tape::NodeId self) {
      const Tensor& g = t.out_grad(self);
      std::size_t off = 0;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        const std::size_t w = widths[k];
        if (t.requires_grad(ids[k])) {
          Tensor& s = t.grad_sink(ids[k]);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c) s[r * w + c] += g[r * total + off + c];
        }
        off += w;
      }
    };
  }
  return tape.record(std::move(out), rg, std::move(fn));
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& tape = a.tape();
  const Tensor& x = a.value();
  const std::size_t n = x.rows();
  const std::size_t m = x.cols();
  if (begin + count > m) throw DimensionError("slice_cols out of range");
  Tensor out({n, count});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = x[r * m + begin + c];
  const bool rg = tape.requires_grad(a.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [ida = a.id(), n, m, begin, count](Tape& t, Tape::NodeId self) {
      const Tensor& g = t.out_grad(self);
      Tensor& s = t.grad_sink(ida);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < count; ++c) s[r * m + begin + c] += g[r * count + c];
    };
  }
  return tape.record(std::move(out), rg, std::move(fn));
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Tape& tape = a.tape();
  const Tensor& x = a.value();
  const std::size_t n = x.rows();
  const std::size_t m = x.cols();
  Tensor out({rows.size(), m});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= n) throw DimensionError("gather_rows index out of range");
    std::copy_n(x.data().data() + rows[k] * m, m, out.data().data() + k * m);
  }
  const bool rg = tape.requires_grad(a.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [ida = a.id(), idx = std::vector<std::size_t>(rows.begin(), rows.end()), m](Tape& t, Tape::NodeId self) {
      const Tensor& g = t.out_grad(self);
      Tensor& s = t.grad_sink(ida);
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t c = 0; c < m; ++c) s[idx[k] * m + c] += g[k * m + c];
    };
  }
  return tape.record(std::move(out), rg, std::move(fn));
}

Var segment_softmax(Var logits, std::span<const std::size_t> offsets) {
  Tape& tape = logits.tape();
  const Tensor& x = logits.value();
  if (x.rank() != 2) throw DimensionError("segment_softmax expects [M,H] logits");
  const std::size_t h = x.cols();
  check_offsets(offsets, x.rows(), "segment_softmax");
  require_finite(x, "segment_softmax");
  Tensor out(x.shape());
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
    const std::size_t lo = offsets[g];
    const std::size_t hi = offsets[g + 1];
    if (lo == hi) continue;
    for (std::size_t c = 0; c < h; ++c) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = lo; i < hi; ++i) mx = std::max(mx, x[i * h + c]);
      double z = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        const double e = std::exp(x[i * h + c] - mx);
        out[i * h + c] = e;
        z += e;
      }
      for (std::size_t i = lo; i < hi; ++i) out[i * h + c] /= z;
    }
  }
  const bool rg = tape.requires_grad(logits.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [ida = logits.id(), off = std::vector<std::size_t>(offsets.begin(), offsets.end()), h](Tape& t,
                                                                                                 Tape::NodeId self) {
      const Tensor& g = t.out_grad(self);
      const Tensor& y = t.value(self);
      Tensor& s = t.grad_sink(ida);
      for (std::size_t seg = 0; seg + 1 < off.size(); ++seg) {
        for (std::size_t c = 0; c < h; ++c) {
          double dot = 0.0;
          for (std::size_t i = off[seg]; i < off[seg + 1]; ++i) dot += g[i * h + c] * y[i * h + c];
          for (std::size_t i = off[seg]; i < off[seg + 1]; ++i) s[i * h + c] += y[i * h + c] * (g[i * h + c] - dot);
        }
      }
    };
  }
  return tape.record(std::move(out), rg, std::move(fn));
}

Var segment_weighted_sum(Var weights, Var values, std::span<const std::size_t> offsets) {
  Tape& tape = same_tape(weights, values);
  const Tensor& w = weights.value();
  const Tensor& v = values.value();
  if (w.rank() != 2 || v.rank() != 2) throw DimensionError("segment_weighted_sum expects rank-2 operands");
  if (w.rows() != v.rows()) throw DimensionError("segment_weighted_sum: weight/value row mismatch");
  const std::size_t heads = w.cols();
  const std::size_t d = v.cols();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("segment_weighted_sum: value width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  check_offsets(offsets, w.rows(), "segment_weighted_sum");
  const std::size_t groups = offsets.size() - 1;
  Tensor out({groups, d});
  for (std::size_t g = 0; g < groups; ++g) {
    double* o = out.data().data() + g * d;
    for (std::size_t i = offsets[g]; i < offsets[g + 1]; ++i) {
      for (std::size_t hh = 0; hh < heads; ++hh) {
        const double wi = w[i * heads + hh];
        const double* vi = v.data().data() + i * d + hh * dh;
        for (std::size_t c = 0; c < dh; ++c) o[hh * dh + c] += wi * vi[c];
      }
    }
  }
  const bool rg = tape.requires_grad(weights.id()) || tape.requires_grad(values.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [idw = weights.id(), idv = values.id(), off = std::vector<std::size_t>(offsets.begin(), offsets.end()),
          heads, d, dh](Tape& t, Tape::NodeId self) {
      const Tensor& g = t.out_grad(self);
      const Tensor& w = t.value(idw);
      const Tensor& v = t.value(idv);
      Tensor* sw = t.requires_grad(idw) ? &t.grad_sink(idw) : nullptr;
      Tensor* sv = t.requires_grad(idv) ? &t.grad_sink(idv) : nullptr;
      for (std::size_t seg = 0; seg + 1 < off.size(); ++seg) {
        const double* go = g.data().data() + seg * d;
        for (std::size_t i = off[seg]; i < off[seg + 1]; ++i) {
          for (std::size_t hh = 0; hh < heads; ++hh) {
            const double wi = w[i * heads + hh];
            double acc = 0.0;
            for (std::size_t c = 0; c < dh; ++c) {
              acc += go[hh * dh + c] * v[i * d + hh * dh + c];
              if (sv) (*sv)[i * d + hh * dh + c] += wi * go[hh * dh + c];
            }
            if (sw) (*sw)[i * heads + hh] += acc;
          }
        }
      }
    };
  }
  return tape.record(std::move(out), rg, std::move(fn));
}

Var segment_max(Var values, std::span<const std::size_t> offsets) {
  Tape& tape = values.tape();
  const Tensor& v = values.value();
  if (v.rank() != 2) throw DimensionError("segment_max expects [M,D] values");
  const std::size_t d = v.cols();
  check_offsets(offsets, v.rows(), "segment_max");
  const std::size_t groups = offsets.size() - 1;
  Tensor out({groups, d});
  std::vector<std::size_t> arg(groups * d, static_cast<std::size_t>(-1));
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = offsets[g]; i < offsets[g + 1]; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        std::size_t& a = arg[g * d + c];
        if (a == static_cast<std::size_t>(-1) || v[i * d + c] > v[a * d + c]) a = i;
      }
    }
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t a = arg[g * d + c];
      out[g * d + c] = a == static_cast<std::size_t>(-1) ? 0.0 : v[a * d + c];
    }
  }
  const bool rg = tape.requires_grad(values.id());
  Tape::BackwardFn fn;
  if (rg) {
    fn = [idv = values.id(), arg = std::move(arg), d](Tape& t, Tape::NodeId self) {
      const Tensor& g = t.out_grad(self);
      Tensor& s = t.grad_sink(idv);
      for (std::size_t k = 0; k < arg.size(); ++k) {
        if (arg[k] != static_cast<std::size_t>(-1)) s[arg[k] * d + k % d] += g[k];
      }
    };
  }
  return tape.record(std::move(out), rg, std::move(fn));
}

}  // namespace pyrhead::num
