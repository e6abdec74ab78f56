#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctts/tensor.hpp"

namespace ctts::ad {

// Mutable per-layer batch-normalization statistics. Owned by the layer and
// updated as a side effect of train-mode forwards.
template <class Real>
struct BatchNormState {
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
};

// Reverse-mode tape over dense tensors. Nodes are appended during the
// forward pass (inputs always precede outputs) and visited in reverse for
// backward. One graph per training step; graphs are single-threaded.
template <class Real>
class Graph {
 public:
  using T = Tensor<Real>;

  struct Node {
    const char* op;
    T value;
    T grad;  // allocated lazily during backward
    bool needs_grad = false;
    std::function<void(Graph&, int)> backward;
  };

  bool trap_nonfinite = true;

  int leaf(T value) {
    bool rg = value.requires_grad;
    return push("leaf", std::move(value), rg, {});
  }

  int constant(T value) {
    value.requires_grad = false;
    return push("const", std::move(value), false, {});
  }

  const T& value(int id) const { return nodes_[check(id)].value; }

  // Gradient of the last backward() w.r.t. node `id`; zero tensor when no
  // gradient reached it (e.g. leaves not on the path to the loss).
  T grad(int id) const {
    const Node& n = nodes_[check(id)];
    if (n.grad.numel() == 0) return T::zeros(n.value.shape);
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(int loss_id) {
    Node& loss = nodes_[check(loss_id)];
    if (loss.value.numel() != 1)
      throw std::runtime_error("backward: loss must be scalar, got shape " +
                               shape_str(loss.value.shape));
    for (auto& n : nodes_) n.grad = T();
    loss.grad = T::full(loss.value.shape, Real(1));
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.needs_grad || n.grad.numel() == 0 || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  void accumulate(int id, const T& g) {
    Node& n = nodes_[check(id)];
    if (!n.needs_grad) return;
    if (n.grad.numel() == 0) n.grad = T::zeros(n.value.shape);
    if (g.shape != n.grad.shape)
      throw std::runtime_error("grad accumulate: shape mismatch");
    for (std::size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
  }

  bool needs_grad(int id) const { return nodes_[check(id)].needs_grad; }

  int push(const char* op, T value, bool needs, std::function<void(Graph&, int)> bw) {
    if (trap_nonfinite) {
      for (Real v : value.data)
        if (!std::isfinite(static_cast<double>(v)))
          throw std::runtime_error(std::string("non-finite value produced by op '") +
                                   op + "'");
    }
    nodes_.push_back(Node{op, std::move(value), T(), needs, std::move(bw)});
    return static_cast<int>(nodes_.size()) - 1;
  }

 private:
  int check(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw std::runtime_error("invalid node id");
    return id;
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <class Real>
using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MapM = Eigen::Map<EMat<Real>>;
template <class Real>
using CMapM = Eigen::Map<const EMat<Real>>;

// Broadcast forms accepted by add/mul: identical shapes, a 1-element scalar,
// or a row vector matching the trailing dimension.
enum class Bcast { same, scalar, row };

template <class Real>
Bcast bcast_kind(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape == b.shape) return Bcast::same;
  if (b.numel() == 1) return Bcast::scalar;
  if (!a.shape.empty()) {
    const int last = a.shape.back();
    if ((b.rank() == 1 && b.shape[0] == last) ||
        (b.rank() == 2 && b.shape[0] == 1 && b.shape[1] == last))
      return Bcast::row;
  }
  throw std::runtime_error(std::string(op) + ": shapes not broadcastable " +
                           shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

template <class Real>
int matmul(Graph<Real>& g, int a, int b) {
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
    throw std::runtime_error("matmul: incompatible shapes " + shape_str(A.shape) +
                             " x " + shape_str(B.shape));
  const int m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<Real> C = Tensor<Real>::zeros({m, n});
  detail::CMapM<Real> ma(A.data.data(), m, k), mb(B.data.data(), k, n);
  detail::MapM<Real> mc(C.data.data(), m, n);
  mc.noalias() = ma * mb;
  bool needs = g.needs_grad(a) || g.needs_grad(b);
  return g.push("matmul", std::move(C), needs, [a, b, m, k, n](Graph<Real>& gr, int self) {
    const auto& G = gr.value(self);  // shape placeholder; use grad below
    (void)G;
    const auto& gradC = gr.grad(self);
    const auto& A2 = gr.value(a);
    const auto& B2 = gr.value(b);
    detail::CMapM<Real> mg(gradC.data.data(), m, n);
    if (gr.needs_grad(a)) {
      Tensor<Real> dA = Tensor<Real>::zeros({m, k});
      detail::MapM<Real> md(dA.data.data(), m, k);
      detail::CMapM<Real> mb2(B2.data.data(), k, n);
      md.noalias() = mg * mb2.transpose();
      gr.accumulate(a, dA);
    }
    if (gr.needs_grad(b)) {
      Tensor<Real> dB = Tensor<Real>::zeros({k, n});
      detail::MapM<Real> md(dB.data.data(), k, n);
      detail::CMapM<Real> ma2(A2.data.data(), m, k);
      md.noalias() = ma2.transpose() * mg;
      gr.accumulate(b, dB);
    }
  });
}

template <class Real>
int add(Graph<Real>& g, int a, int b) {
  using detail::Bcast;
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  // canonical form: broadcast operand second
  if (B.numel() > A.numel()) return add(g, b, a);
  const Bcast kind = detail::bcast_kind(A, B, "add");
  Tensor<Real> C = A;
  C.requires_grad = false;
  const int last = A.shape.empty() ? 1 : A.shape.back();
  switch (kind) {
    case Bcast::same:
      for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
      break;
    case Bcast::scalar:
      for (auto& v : C.data) v += B.data[0];
      break;
    case Bcast::row:
      for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i % last];
      break;
  }
  bool needs = g.needs_grad(a) || g.needs_grad(b);
  return g.push("add", std::move(C), needs, [a, b, kind, last](Graph<Real>& gr, int self) {
    const auto& gradC = gr.grad(self);
    if (gr.needs_grad(a)) gr.accumulate(a, gradC);
    if (gr.needs_grad(b)) {
      const auto& B2 = gr.value(b);
      Tensor<Real> dB = Tensor<Real>::zeros(B2.shape);
      switch (kind) {
        case Bcast::same:
          dB = gradC;
          break;
        case Bcast::scalar:
          for (Real v : gradC.data) dB.data[0] += v;
          break;
        case Bcast::row:
          for (std::size_t i = 0; i < gradC.data.size(); ++i)
            dB.data[i % last] += gradC.data[i];
          break;
      }
      gr.accumulate(b, dB);
    }
  });
}

template <class Real>
int mul(Graph<Real>& g, int a, int b) {
  using detail::Bcast;
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  if (B.numel() > A.numel()) return mul(g, b, a);
  const Bcast kind = detail::bcast_kind(A, B, "mul");
  Tensor<Real> C = A;
  C.requires_grad = false;
  const int last = A.shape.empty() ? 1 : A.shape.back();
  switch (kind) {
    case Bcast::same:
      for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
      break;
    case Bcast::scalar:
      for (auto& v : C.data) v *= B.data[0];
      break;
    case Bcast::row:
      for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i % last];
      break;
  }
  bool needs = g.needs_grad(a) || g.needs_grad(b);
  return g.push("mul", std::move(C), needs, [a, b, kind, last](Graph<Real>& gr, int self) {
    const auto& gradC = gr.grad(self);
    const auto& A2 = gr.value(a);
    const auto& B2 = gr.value(b);
    if (gr.needs_grad(a)) {
      Tensor<Real> dA = Tensor<Real>::zeros(A2.shape);
      switch (kind) {
        case Bcast::same:
          for (std::size_t i = 0; i < dA.data.size(); ++i)
            dA.data[i] = gradC.data[i] * B2.data[i];
          break;
        case Bcast::scalar:
          for (std::size_t i = 0; i < dA.data.size(); ++i)
            dA.data[i] = gradC.data[i] * B2.data[0];
          break;
        case Bcast::row:
          for (std::size_t i = 0; i < dA.data.size(); ++i)
            dA.data[i] = gradC.data[i] * B2.data[i % last];
          break;
      }
      gr.accumulate(a, dA);
    }
    if (gr.needs_grad(b)) {
      Tensor<Real> dB = Tensor<Real>::zeros(B2.shape);
      switch (kind) {
        case Bcast::same:
          for (std::size_t i = 0; i < dB.data.size(); ++i)
            dB.data[i] = gradC.data[i] * A2.data[i];
          break;
        case Bcast::scalar:
          for (std::size_t i = 0; i < gradC.data.size(); ++i)
            dB.data[0] += gradC.data[i] * A2.data[i];
          break;
        case Bcast::row:
          for (std::size_t i = 0; i < gradC.data.size(); ++i)
            dB.data[i % last] += gradC.data[i] * A2.data[i];
          break;
      }
      gr.accumulate(b, dB);
    }
  });
}

// ---- shape ops -------------------------------------------------------------

template <class Real>
int concat(Graph<Real>& g, const std::vector<int>& ids, int axis) {
  if (ids.empty()) throw std::runtime_error("concat: no inputs");
  const auto& first = g.value(ids[0]);
  const int r = first.rank();
  if (axis < 0 || axis >= r) throw std::runtime_error("concat: bad axis");
  std::vector<int> out_shape = first.shape;
  bool needs = false;
  for (int id : ids) {
    const auto& t = g.value(id);
    if (t.rank() != r) throw std::runtime_error("concat: rank mismatch");
    for (int d = 0; d < r; ++d)
      if (d != axis && t.shape[d] != first.shape[d])
        throw std::runtime_error("concat: shape mismatch " + shape_str(t.shape) +
                                 " vs " + shape_str(first.shape));
    needs = needs || g.needs_grad(id);
  }
  out_shape[axis] = 0;
  for (int id : ids) out_shape[axis] += g.value(id).shape[axis];

  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first.shape[d];
  for (int d = axis + 1; d < r; ++d) inner *= first.shape[d];

  Tensor<Real> C = Tensor<Real>::zeros(out_shape);
  const std::size_t out_row = static_cast<std::size_t>(out_shape[axis]) * inner;
  std::size_t off = 0;
  for (int id : ids) {
    const auto& t = g.value(id);
    const std::size_t in_row = static_cast<std::size_t>(t.shape[axis]) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(t.data.begin() + o * in_row, in_row,
                  C.data.begin() + o * out_row + off);
    off += in_row;
  }
  std::vector<int> ids_copy = ids;
  return g.push("concat", std::move(C), needs,
                [ids_copy, axis, outer, inner, out_row](Graph<Real>& gr, int self) {
    const auto& gradC = gr.grad(self);
    std::size_t off = 0;
    for (int id : ids_copy) {
      const auto& t = gr.value(id);
      const std::size_t in_row = static_cast<std::size_t>(t.shape[axis]) * inner;
      if (gr.needs_grad(id)) {
        Tensor<Real> dT = Tensor<Real>::zeros(t.shape);
        for (std::size_t o = 0; o < outer; ++o)
          std::copy_n(gradC.data.begin() + o * out_row + off, in_row,
                      dT.data.begin() + o * in_row);
        gr.accumulate(id, dT);
      }
      off += in_row;
    }
  });
}

template <class Real>
int slice(Graph<Real>& g, int a, const std::vector<int>& begin,
          const std::vector<int>& size) {
  const auto& A = g.value(a);
  const int r = A.rank();
  if (static_cast<int>(begin.size()) != r || static_cast<int>(size.size()) != r)
    throw std::runtime_error("slice: begin/size rank mismatch");
  for (int d = 0; d < r; ++d)
    if (begin[d] < 0 || size[d] < 0 || begin[d] + size[d] > A.shape[d])
      throw std::runtime_error("slice: out of range on axis " + std::to_string(d));

  std::vector<std::size_t> strides(r, 1);
  for (int d = r - 2; d >= 0; --d)
    strides[d] = strides[d + 1] * static_cast<std::size_t>(A.shape[d + 1]);

  Tensor<Real> C = Tensor<Real>::zeros(size);
  std::vector<int> idx(r, 0);
  for (std::size_t o = 0; o < C.numel(); ++o) {
    std::size_t src = 0;
    for (int d = 0; d < r; ++d) src += strides[d] * (begin[d] + idx[d]);
    C.data[o] = A.data[src];
    for (int d = r - 1; d >= 0; --d) {
      if (++idx[d] < size[d]) break;
      idx[d] = 0;
    }
  }
  bool needs = g.needs_grad(a);
  return g.push("slice", std::move(C), needs,
                [a, begin, size, strides](Graph<Real>& gr, int self) {
    if (!gr.needs_grad(a)) return;
    const auto& gradC = gr.grad(self);
    const auto& A2 = gr.value(a);
    const int r = A2.rank();
    Tensor<Real> dA = Tensor<Real>::zeros(A2.shape);
    std::vector<int> idx(r, 0);
    for (std::size_t o = 0; o < gradC.numel(); ++o) {
      std::size_t dst = 0;
      for (int d = 0; d < r; ++d) dst += strides[d] * (begin[d] + idx[d]);
      dA.data[dst] = gradC.data[o];
      for (int d = r - 1; d >= 0; --d) {
        if (++idx[d] < size[d]) break;
        idx[d] = 0;
      }
    }
    gr.accumulate(a, dA);
  });
}

template <class Real>
int transpose(Graph<Real>& g, int a) {
  const auto& A = g.value(a);
  if (A.rank() != 2) throw std::runtime_error("transpose: expects rank-2 tensor");
  const int m = A.rows(), n = A.cols();
  Tensor<Real> C = Tensor<Real>::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) C.at(j, i) = A.at(i, j);
  bool needs = g.needs_grad(a);
  return g.push("transpose", std::move(C), needs, [a, m, n](Graph<Real>& gr, int self) {
    if (!gr.needs_grad(a)) return;
    const auto& gradC = gr.grad(self);
    Tensor<Real> dA = Tensor<Real>::zeros({m, n});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) dA.at(j, i) = gradC.at(i, j);
    gr.accumulate(a, dA);
  });
}

template <class Real>
int reshape(Graph<Real>& g, int a, std::vector<int> shape) {
  const auto& A = g.value(a);
  if (Tensor<Real>::numel_of(shape) != A.numel())
    throw std::runtime_error("reshape: element count mismatch");
  Tensor<Real> C(shape, A.data);
  bool needs = g.needs_grad(a);
  return g.push("reshape", std::move(C), needs, [a](Graph<Real>& gr, int self) {
    if (!gr.needs_grad(a)) return;
    const auto& gradC = gr.grad(self);
    Tensor<Real> dA(gr.value(a).shape, gradC.data);
    gr.accumulate(a, dA);
  });
}

// ---- elementwise nonlinearities ---------------------------------------------

namespace detail {

template <class Real, class F, class DF>
int unary(Graph<Real>& g, const char* name, int a, F f, DF df) {
  const auto& A = g.value(a);
  Tensor<Real> C = Tensor<Real>::zeros(A.shape);
  for (std::size_t i = 0; i < A.data.size(); ++i) C.data[i] = f(A.data[i]);
  bool needs = g.needs_grad(a);
  return g.push(name, std::move(C), needs, [a, df](Graph<Real>& gr, int self) {
    if (!gr.needs_grad(a)) return;
    const auto& gradC = gr.grad(self);
    const auto& A2 = gr.value(a);
    const auto& Y = gr.value(self);
    Tensor<Real> dA = Tensor<Real>::zeros(A2.shape);
    for (std::size_t i = 0; i < dA.data.size(); ++i)
      dA.data[i] = gradC.data[i] * df(A2.data[i], Y.data[i]);
    gr.accumulate(a, dA);
  });
}

}  // namespace detail

template <class Real>
int relu(Graph<Real>& g, int a) {
  return detail::unary(
      g, "relu", a, [](Real x) { return x > Real(0) ? x : Real(0); },
      [](Real x, Real) { return x > Real(0) ? Real(1) : Real(0); });
}

template <class Real>
int sigmoid(Graph<Real>& g, int a) {
  return detail::unary(
      g, "sigmoid", a,
      [](Real x) {
        return x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x))
                            : std::exp(x) / (Real(1) + std::exp(x));
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <class Real>
int tanh_op(Graph<Real>& g, int a) {
  return detail::unary(
      g, "tanh", a, [](Real x) { return std::tanh(x); },
      [](Real, Real y) { return Real(1) - y * y; });
}

template <class Real>
int exp_op(Graph<Real>& g, int a) {
  return detail::unary(
      g, "exp", a, [](Real x) { return std::exp(x); },
      [](Real, Real y) { return y; });
}

template <class Real>
int log_op(Graph<Real>& g, int a) {
  return detail::unary(
      g, "log", a, [](Real x) { return std::log(x); },
      [](Real x, Real) { return Real(1) / x; });
}

// Numerically stable log(1 + exp(x)); the building block for the
// binary-cross-entropy losses.
template <class Real>
int softplus(Graph<Real>& g, int a) {
  return detail::unary(
      g, "softplus", a,
      [](Real x) {
        const Real ax = std::abs(x);
        return std::max(x, Real(0)) + std::log1p(std::exp(-ax));
      },
      [](Real x, Real) {
        return x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x))
                            : std::exp(x) / (Real(1) + std::exp(x));
      });
}

template <class Real>
int softmax(Graph<Real>& g, int a, int axis) {
  const auto& A = g.value(a);
  const int r = A.rank();
  if (axis < 0 || axis >= r) throw std::runtime_error("softmax: bad axis");
  std::size_t outer = 1, inner = 1;
  const int n = A.shape[axis];
  for (int d = 0; d < axis; ++d) outer *= A.shape[d];
  for (int d = axis + 1; d < r; ++d) inner *= A.shape[d];

  Tensor<Real> C = Tensor<Real>::zeros(A.shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      Real mx = A.data[base];
      for (int j = 1; j < n; ++j) mx = std::max(mx, A.data[base + j * inner]);
      Real sum = Real(0);
      for (int j = 0; j < n; ++j) {
        const Real e = std::exp(A.data[base + j * inner] - mx);
        C.data[base + j * inner] = e;
        sum += e;
      }
      for (int j = 0; j < n; ++j) C.data[base + j * inner] /= sum;
    }
  }
  bool needs = g.needs_grad(a);
  return g.push("softmax", std::move(C), needs,
                [a, axis, outer, inner, n](Graph<Real>& gr, int self) {
    if (!gr.needs_grad(a)) return;
    const auto& gradC = gr.grad(self);
    const auto& Y = gr.value(self);
    Tensor<Real> dA = Tensor<Real>::zeros(Y.shape);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        Real dot = Real(0);
        for (int j = 0; j < n; ++j)
          dot += gradC.data[base + j * inner] * Y.data[base + j * inner];
        for (int j = 0; j < n; ++j) {
          const std::size_t k = base + j * inner;
          dA.data[k] = Y.data[k] * (gradC.data[k] - dot);
        }
      }
    }
    gr.accumulate(a, dA);
  });
}

// ---- reductions -------------------------------------------------------------

template <class Real>
int sum(Graph<Real>& g, int a) {
  const auto& A = g.value(a);
  Real s = Real(0);
  for (Real v : A.data) s += v;
  bool needs = g.needs_grad(a);
  return g.push("sum", Tensor<Real>::scalar(s), needs, [a](Graph<Real>& gr, int self) {
    if (!gr.needs_grad(a)) return;
    const Real go = gr.grad(self).data[0];
    gr.accumulate(a, Tensor<Real>::full(gr.value(a).shape, go));
  });
}

template <class Real>
int mean(Graph<Real>& g, int a) {
  const auto& A = g.value(a);
  if (A.numel() == 0) throw std::runtime_error("mean: empty tensor");
  Real s = Real(0);
  for (Real v : A.data) s += v;
  const Real n = static_cast<Real>(A.numel());
  bool needs = g.needs_grad(a);
  return g.push("mean", Tensor<Real>::scalar(s / n), needs,
                [a, n](Graph<Real>& gr, int self) {
    if (!gr.needs_grad(a)) return;
    const Real go = gr.grad(self).data[0];
    gr.accumulate(a, Tensor<Real>::full(gr.value(a).shape, go / n));
  });
}

// ---- structured ops ----------------------------------------------------------

// 2-D convolution, input [C,H,W], kernel [OC,C,KH,KW], symmetric zero padding.
template <class Real>
int conv2d(Graph<Real>& g, int x, int w, int stride, int pad) {
  const auto& X = g.value(x);
  const auto& W = g.value(w);
  if (X.rank() != 3 || W.rank() != 4)
    throw std::runtime_error("conv2d: expects input [C,H,W] and kernel [OC,C,KH,KW]");
  const int C = X.shape[0], H = X.shape[1], Wd = X.shape[2];
  const int OC = W.shape[0], KC = W.shape[1], KH = W.shape[2], KW = W.shape[3];
  if (KC != C) throw std::runtime_error("conv2d: channel mismatch");
  if (stride < 1) throw std::runtime_error("conv2d: stride must be >= 1");
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (Wd + 2 * pad - KW) / stride + 1;
  if (OH < 1 || OW < 1)
    throw std::runtime_error("conv2d: input too small for kernel/stride");

  auto xat = [&](const Tensor<Real>& t, int c, int i, int j) -> Real {
    if (i < 0 || i >= H || j < 0 || j >= Wd) return Real(0);
    return t.data[(static_cast<std::size_t>(c) * H + i) * Wd + j];
  };

  Tensor<Real> Y = Tensor<Real>::zeros({OC, OH, OW});
  for (int oc = 0; oc < OC; ++oc)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        Real acc = Real(0);
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < KH; ++ky)
            for (int kx = 0; kx < KW; ++kx)
              acc += xat(X, c, oy * stride + ky - pad, ox * stride + kx - pad) *
                     W.data[((static_cast<std::size_t>(oc) * C + c) * KH + ky) * KW + kx];
        Y.data[(static_cast<std::size_t>(oc) * OH + oy) * OW + ox] = acc;
      }

  bool needs = g.needs_grad(x) || g.needs_grad(w);
  return g.push("conv2d", std::move(Y), needs,
                [x, w, stride, pad, C, H, Wd, OC, KH, KW, OH, OW](Graph<Real>& gr, int self) {
    const auto& gradY = gr.grad(self);
    const auto& X2 = gr.value(x);
    const auto& W2 = gr.value(w);
    Tensor<Real> dX = Tensor<Real>::zeros(X2.shape);
    Tensor<Real> dW = Tensor<Real>::zeros(W2.shape);
    for (int oc = 0; oc < OC; ++oc)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          const Real go = gradY.data[(static_cast<std::size_t>(oc) * OH + oy) * OW + ox];
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < KH; ++ky)
              for (int kx = 0; kx < KW; ++kx) {
                const int iy = oy * stride + ky - pad;
                const int ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= Wd) continue;
                const std::size_t xi = (static_cast<std::size_t>(c) * H + iy) * Wd + ix;
                const std::size_t wi =
                    ((static_cast<std::size_t>(oc) * C + c) * KH + ky) * KW + kx;
                dX.data[xi] += go * W2.data[wi];
                dW.data[wi] += go * X2.data[xi];
              }
        }
    if (gr.needs_grad(x)) gr.accumulate(x, dX);
    if (gr.needs_grad(w)) gr.accumulate(w, dW);
  });
}

// Batch normalization over the batch axis of an [N,C] tensor. In train mode
// batch statistics are used and the running statistics are updated in place;
// in eval mode the stored running statistics are used.
template <class Real>
int batchnorm(Graph<Real>& g, int x, int gamma, int beta, BatchNormState<Real>* state,
              bool train, Real eps = Real(1e-5), Real momentum = Real(0.1)) {
  const auto& X = g.value(x);
  if (X.rank() != 2) throw std::runtime_error("batchnorm: expects [N,C] input");
  const int N = X.rows(), C = X.cols();
  const auto& Gm = g.value(gamma);
  const auto& Bt = g.value(beta);
  if (static_cast<int>(Gm.numel()) != C || static_cast<int>(Bt.numel()) != C)
    throw std::runtime_error("batchnorm: gamma/beta size mismatch");
  if (state == nullptr) throw std::runtime_error("batchnorm: missing state");
  if (state->running_mean.empty()) {
    state->running_mean.assign(C, Real(0));
    state->running_var.assign(C, Real(1));
  }

  std::vector<Real> mu(C), var(C);
  if (train) {
    for (int c = 0; c < C; ++c) {
      Real m = Real(0);
      for (int n = 0; n < N; ++n) m += X.at(n, c);
      m /= static_cast<Real>(N);
      Real v = Real(0);
      for (int n = 0; n < N; ++n) {
        const Real d = X.at(n, c) - m;
        v += d * d;
      }
      v /= static_cast<Real>(N);
      mu[c] = m;
      var[c] = v;
      state->running_mean[c] = (Real(1) - momentum) * state->running_mean[c] + momentum * m;
      state->running_var[c] = (Real(1) - momentum) * state->running_var[c] + momentum * v;
    }
  } else {
    mu = state->running_mean;
    var = state->running_var;
  }

  Tensor<Real> Y = Tensor<Real>::zeros(X.shape);
  std::vector<Real> xhat(static_cast<std::size_t>(N) * C);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const Real h = (X.at(n, c) - mu[c]) / std::sqrt(var[c] + eps);
      xhat[static_cast<std::size_t>(n) * C + c] = h;
      Y.at(n, c) = Gm.data[c] * h + Bt.data[c];
    }

  bool needs = g.needs_grad(x) || g.needs_grad(gamma) || g.needs_grad(beta);
  return g.push("batchnorm", std::move(Y), needs,
                [x, gamma, beta, train, eps, N, C, mu, var,
                 xhat = std::move(xhat)](Graph<Real>& gr, int self) {
    const auto& gradY = gr.grad(self);
    const auto& X2 = gr.value(x);
    const auto& Gm2 = gr.value(gamma);
    if (gr.needs_grad(gamma)) {
      Tensor<Real> dG = Tensor<Real>::zeros(gr.value(gamma).shape);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          dG.data[c] += gradY.at(n, c) * xhat[static_cast<std::size_t>(n) * C + c];
      gr.accumulate(gamma, dG);
    }
    if (gr.needs_grad(beta)) {
      Tensor<Real> dB = Tensor<Real>::zeros(gr.value(beta).shape);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) dB.data[c] += gradY.at(n, c);
      gr.accumulate(beta, dB);
    }
    if (!gr.needs_grad(x)) return;
    Tensor<Real> dX = Tensor<Real>::zeros(X2.shape);
    if (!train) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          dX.at(n, c) = gradY.at(n, c) * Gm2.data[c] / std::sqrt(var[c] + eps);
    } else {
      // gradient through the batch statistics
      for (int c = 0; c < C; ++c) {
        const Real istd = Real(1) / std::sqrt(var[c] + eps);
        Real sum_dy = Real(0), sum_dy_xhat = Real(0);
        for (int n = 0; n < N; ++n) {
          const Real dy = gradY.at(n, c) * Gm2.data[c];
          sum_dy += dy;
          sum_dy_xhat += dy * xhat[static_cast<std::size_t>(n) * C + c];
        }
        for (int n = 0; n < N; ++n) {
          const Real dy = gradY.at(n, c) * Gm2.data[c];
          const Real h = xhat[static_cast<std::size_t>(n) * C + c];
          dX.at(n, c) =
              istd / static_cast<Real>(N) *
              (static_cast<Real>(N) * dy - sum_dy - h * sum_dy_xhat);
        }
      }
    }
    gr.accumulate(x, dX);
  });
}

// Inverted dropout: train mode zeroes a seeded Bernoulli(p) mask and scales
// survivors by 1/(1-p); eval mode is the identity.
template <class Real>
int dropout(Graph<Real>& g, int x, double p, bool train, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw std::runtime_error("dropout: p must be in [0,1)");
  const auto& X = g.value(x);
  if (!train || p == 0.0) {
    Tensor<Real> Y = X;
    Y.requires_grad = false;
    bool needs = g.needs_grad(x);
    return g.push("dropout", std::move(Y), needs, [x](Graph<Real>& gr, int self) {
      if (gr.needs_grad(x)) gr.accumulate(x, gr.grad(self));
    });
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  const Real scale = static_cast<Real>(1.0 / (1.0 - p));
  std::vector<Real> mask(X.numel());
  for (auto& m : mask) m = dist(rng) < p ? Real(0) : scale;
  Tensor<Real> Y = Tensor<Real>::zeros(X.shape);
  for (std::size_t i = 0; i < Y.data.size(); ++i) Y.data[i] = X.data[i] * mask[i];
  bool needs = g.needs_grad(x);
  return g.push("dropout", std::move(Y), needs,
                [x, mask = std::move(mask)](Graph<Real>& gr, int self) {
    if (!gr.needs_grad(x)) return;
    const auto& gradY = gr.grad(self);
    Tensor<Real> dX = Tensor<Real>::zeros(gr.value(x).shape);
    for (std::size_t i = 0; i < dX.data.size(); ++i)
      dX.data[i] = gradY.data[i] * mask[i];
    gr.accumulate(x, dX);
  });
}

// Row gather: table [V,E], ids -> [len(ids), E].
template <class Real>
int embedding_lookup(Graph<Real>& g, int table, const std::vector<int>& ids) {
  const auto& Tb = g.value(table);
  if (Tb.rank() != 2) throw std::runtime_error("embedding_lookup: table must be [V,E]");
  const int V = Tb.rows(), E = Tb.cols();
  Tensor<Real> Y = Tensor<Real>::zeros({static_cast<int>(ids.size()), E});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= V)
      throw std::runtime_error("embedding_lookup: id out of range: " +
                               std::to_string(ids[i]));
    std::copy_n(Tb.data.begin() + static_cast<std::size_t>(ids[i]) * E, E,
                Y.data.begin() + i * E);
  }
  bool needs = g.needs_grad(table);
  return g.push("embedding", std::move(Y), needs, [table, ids, E](Graph<Real>& gr, int self) {
    if (!gr.needs_grad(table)) return;
    const auto& gradY = gr.grad(self);
    Tensor<Real> dT = Tensor<Real>::zeros(gr.value(table).shape);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int e = 0; e < E; ++e)
        dT.data[static_cast<std::size_t>(ids[i]) * E + e] +=
            gradY.data[i * E + e];
    gr.accumulate(table, dT);
  });
}

// ---- verification oracle ------------------------------------------------------

// Central-difference gradient of a scalar-valued function, the independent
// check every backward implementation is tested against.
template <class Real>
Tensor<Real> finite_diff_grad(const std::function<Real(const Tensor<Real>&)>& f,
                              const Tensor<Real>& x, Real eps) {
  Tensor<Real> g = Tensor<Real>::zeros(x.shape);
  Tensor<Real> probe = x;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const Real orig = probe.data[i];
    probe.data[i] = orig + eps;
    const Real hi = f(probe);
    probe.data[i] = orig - eps;
    const Real lo = f(probe);
    probe.data[i] = orig;
    g.data[i] = (hi - lo) / (Real(2) * eps);
  }
  return g;
}

// ---- generic dispatch -----------------------------------------------------------

struct OpAttrs {
  int axis = 0;
  int stride = 1;
  int pad = 0;
  double p = 0.5;
  bool train = true;
  std::uint64_t seed = 0;
  std::vector<int> begin, size, ids;
};

// String-keyed entry point mirroring the tape's op vocabulary; handy for
// property tests that sweep every op kind.
template <class Real>
int apply(Graph<Real>& g, const std::string& op, const std::vector<int>& in,
          const OpAttrs& attrs = {}, BatchNormState<Real>* bn = nullptr) {
  auto arity = [&](std::size_t n) {
    if (in.size() != n)
      throw std::runtime_error("apply: op '" + op + "' expects " + std::to_string(n) +
                               " inputs, got " + std::to_string(in.size()));
  };
  if (op == "matmul") { arity(2); return matmul(g, in[0], in[1]); }
  if (op == "add") { arity(2); return add(g, in[0], in[1]); }
  if (op == "mul") { arity(2); return mul(g, in[0], in[1]); }
  if (op == "concat") return concat(g, in, attrs.axis);
  if (op == "slice") { arity(1); return slice(g, in[0], attrs.begin, attrs.size); }
  if (op == "relu") { arity(1); return relu(g, in[0]); }
  if (op == "sigmoid") { arity(1); return sigmoid(g, in[0]); }
  if (op == "tanh") { arity(1); return tanh_op(g, in[0]); }
  if (op == "softmax") { arity(1); return softmax(g, in[0], attrs.axis); }
  if (op == "exp") { arity(1); return exp_op(g, in[0]); }
  if (op == "log") { arity(1); return log_op(g, in[0]); }
  if (op == "softplus") { arity(1); return softplus(g, in[0]); }
  if (op == "sum") { arity(1); return sum(g, in[0]); }
  if (op == "mean") { arity(1); return mean(g, in[0]); }
  if (op == "transpose") { arity(1); return transpose(g, in[0]); }
  if (op == "conv2d") { arity(2); return conv2d(g, in[0], in[1], attrs.stride, attrs.pad); }
  if (op == "batchnorm") {
    arity(3);
    return batchnorm(g, in[0], in[1], in[2], bn, attrs.train);
  }
  if (op == "dropout") { arity(1); return dropout(g, in[0], attrs.p, attrs.train, attrs.seed); }
  if (op == "embedding_lookup") { arity(1); return embedding_lookup(g, in[0], attrs.ids); }
  throw std::runtime_error("apply: unknown op '" + op + "'");
}

}  // namespace ctts::ad
