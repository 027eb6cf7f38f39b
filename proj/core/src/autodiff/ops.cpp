#include "maoml/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "maoml/error.hpp"

namespace maoml::ad {

namespace {

Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = a.tape();
  t.check(a);
  t.check(b);
  return t;
}

Tape& tape_of(const Var& a) {
  Tape& t = a.tape();
  t.check(a);
  return t;
}

enum class Broadcast { same, row_bias };

Broadcast broadcast_mode(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::same;
  if (a.size() == 2 && b.size() == 1 && a[1] == b[0]) return Broadcast::row_bias;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double stable_softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  const double* A = av.data().data();
  const double* B = bv.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  const auto ai = a.id(), bi = b.id();
  return t.record(std::move(out), {ai, bi}, [ai, bi, m, k, n](const Tensor& g, BackwardContext& ctx) {
    const double* G = g.data().data();
    if (ctx.needs_grad(ai)) {
      const double* B = ctx.value(bi).data().data();
      double* dA = ctx.grad(ai).data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
          dA[i * k + p] += acc;
        }
    }
    if (ctx.needs_grad(bi)) {
      const double* A = ctx.value(ai).data().data();
      double* dB = ctx.grad(bi).data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * G[i * n + j];
        }
    }
  });
}

namespace {

// Shared implementation of add/sub: out = a + sign * b.
Var add_signed(const char* op, const Var& a, const Var& b, double sign) {
  Tape& t = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto mode = broadcast_mode(op, av.shape(), bv.shape());
  Tensor out = av;
  const std::size_t cols = mode == Broadcast::row_bias ? bv.size() : av.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * bv[i % cols];
  const auto ai = a.id(), bi = b.id();
  return t.record(std::move(out), {ai, bi}, [ai, bi, sign, cols](const Tensor& g, BackwardContext& ctx) {
    if (ctx.needs_grad(ai)) {
      auto dA = ctx.grad(ai).data();
      for (std::size_t i = 0; i < g.size(); ++i) dA[i] += g[i];
    }
    if (ctx.needs_grad(bi)) {
      auto dB = ctx.grad(bi).data();
      for (std::size_t i = 0; i < g.size(); ++i) dB[i % cols] += sign * g[i];
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) { return add_signed("add", a, b, 1.0); }
Var sub(const Var& a, const Var& b) { return add_signed("sub", a, b, -1.0); }

Var mul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto mode = broadcast_mode("mul", av.shape(), bv.shape());
  Tensor out = av;
  const std::size_t cols = mode == Broadcast::row_bias ? bv.size() : av.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i % cols];
  const auto ai = a.id(), bi = b.id();
  return t.record(std::move(out), {ai, bi}, [ai, bi, cols](const Tensor& g, BackwardContext& ctx) {
    if (ctx.needs_grad(ai)) {
      const Tensor& bv = ctx.value(bi);
      auto dA = ctx.grad(ai).data();
      for (std::size_t i = 0; i < g.size(); ++i) dA[i] += g[i] * bv[i % cols];
    }
    if (ctx.needs_grad(bi)) {
      const Tensor& av = ctx.value(ai);
      auto dB = ctx.grad(bi).data();
      for (std::size_t i = 0; i < g.size(); ++i) dB[i % cols] += g[i] * av[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tape& t = tape_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  const auto xi = x.id();
  return t.record(std::move(out), {xi}, [xi, factor](const Tensor& g, BackwardContext& ctx) {
    auto dx = ctx.grad(xi).data();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += factor * g[i];
  });
}

Var neg(const Var& x) { return scale(x, -1.0); }

Var relu(const Var& x) {
  Tape& t = tape_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const auto xi = x.id();
  return t.record(std::move(out), {xi}, [xi](const Tensor& g, BackwardContext& ctx) {
    const Tensor& xv = ctx.value(xi);
    auto dx = ctx.grad(xi).data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) dx[i] += g[i];
  });
}

Var sigmoid(const Var& x) {
  Tape& t = tape_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) v = stable_sigmoid(v);
  const auto xi = x.id();
  return t.record(std::move(out), {xi}, [xi](const Tensor& g, BackwardContext& ctx) {
    const Tensor& xv = ctx.value(xi);
    auto dx = ctx.grad(xi).data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = stable_sigmoid(xv[i]);
      dx[i] += g[i] * s * (1.0 - s);
    }
  });
}

Var log(const Var& x) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0.0))
      throw DomainError("log: non-positive input " + std::to_string(xv[i]) + " at flat index " + std::to_string(i));
    out[i] = std::log(xv[i]);
  }
  const auto xi = x.id();
  return t.record(std::move(out), {xi}, [xi](const Tensor& g, BackwardContext& ctx) {
    const Tensor& xv = ctx.value(xi);
    auto dx = ctx.grad(xi).data();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / xv[i];
  });
}

Var exp(const Var& x) {
  Tape& t = tape_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) v = std::exp(v);
  const auto xi = x.id();
  return t.record(std::move(out), {xi}, [xi](const Tensor& g, BackwardContext& ctx) {
    const Tensor& xv = ctx.value(xi);
    auto dx = ctx.grad(xi).data();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * std::exp(xv[i]);
  });
}

Var softplus(const Var& x) {
  Tape& t = tape_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) v = stable_softplus(v);
  const auto xi = x.id();
  return t.record(std::move(out), {xi}, [xi](const Tensor& g, BackwardContext& ctx) {
    const Tensor& xv = ctx.value(xi);
    auto dx = ctx.grad(xi).data();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * stable_sigmoid(xv[i]);
  });
}

Var sum(const Var& x) {
  Tape& t = tape_of(x);
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const auto xi = x.id();
  return t.record(Tensor::scalar(acc), {xi}, [xi](const Tensor& g, BackwardContext& ctx) {
    const double gv = g[0];
    for (double& d : ctx.grad(xi).data()) d += gv;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var log_sum_exp_rows(const Var& x) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("log_sum_exp_rows: expected rank-2 input, got " + shape_str(xv.shape()));
  const std::size_t n = xv.dim(0), k = xv.dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = xv.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xv.at(i, j));
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += std::exp(xv.at(i, j) - mx);
    out[i] = mx + std::log(acc);
  }
  const auto xi = x.id();
  return t.record(std::move(out), {xi}, [xi, n, k](const Tensor& g, BackwardContext& ctx) {
    const Tensor& xv = ctx.value(xi);
    auto dx = ctx.grad(xi).data();
    for (std::size_t i = 0; i < n; ++i) {
      double mx = xv.at(i, 0);
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xv.at(i, j));
      double total = 0.0;
      for (std::size_t j = 0; j < k; ++j) total += std::exp(xv.at(i, j) - mx);
      for (std::size_t j = 0; j < k; ++j) dx[i * k + j] += g[i] * std::exp(xv.at(i, j) - mx) / total;
    }
  });
}

Var pick_rows(const Var& x, std::span<const std::size_t> index) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || index.size() != xv.dim(0))
    throw ShapeError("pick_rows: input " + shape_str(xv.shape()) + " with " + std::to_string(index.size()) +
                     " indices");
  const std::size_t n = xv.dim(0), k = xv.dim(1);
  Tensor out({n});
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= k) throw ValidationError("pick_rows: index " + std::to_string(idx[i]) + " out of range");
    out[i] = xv.at(i, idx[i]);
  }
  const auto xi = x.id();
  return t.record(std::move(out), {xi}, [xi, k, idx = std::move(idx)](const Tensor& g, BackwardContext& ctx) {
    auto dx = ctx.grad(xi).data();
    for (std::size_t i = 0; i < idx.size(); ++i) dx[i * k + idx[i]] += g[i];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const Shape& first = parts[0].value().shape();
  if (first.empty()) throw ShapeError("concat_rows: scalar inputs cannot be concatenated");
  Shape out_shape = first;
  out_shape[0] = 0;
  std::vector<double> data;
  std::vector<std::size_t> ids, sizes;
  for (const auto& p : parts) {
    t.check(p);
    const Tensor& v = p.value();
    if (v.rank() != first.size() || !std::equal(v.shape().begin() + 1, v.shape().end(), first.begin() + 1))
      throw ShapeError("concat_rows: incompatible shapes " + shape_str(first) + " and " + shape_str(v.shape()));
    out_shape[0] += v.dim(0);
    data.insert(data.end(), v.data().begin(), v.data().end());
    ids.push_back(p.id());
    sizes.push_back(v.size());
  }
  auto parents = ids;
  return t.record(Tensor(std::move(out_shape), std::move(data)), std::move(parents),
                  [ids, sizes](const Tensor& g, BackwardContext& ctx) {
                    std::size_t offset = 0;
                    for (std::size_t p = 0; p < ids.size(); ++p) {
                      if (ctx.needs_grad(ids[p])) {
                        auto d = ctx.grad(ids[p]).data();
                        for (std::size_t i = 0; i < sizes[p]; ++i) d[i] += g[offset + i];
                      }
                      offset += sizes[p];
                    }
                  });
}

Var reshape(const Var& x, Shape shape) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  if (shape_size(shape) != xv.size())
    throw ShapeError("reshape: cannot view " + shape_str(xv.shape()) + " as " + shape_str(shape));
  const auto xi = x.id();
  return t.record(xv.reshaped(std::move(shape)), {xi}, [xi](const Tensor& g, BackwardContext& ctx) {
    auto dx = ctx.grad(xi).data();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

}  // namespace maoml::ad
