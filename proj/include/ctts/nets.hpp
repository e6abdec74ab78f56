#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctts/autodiff.hpp"
#include "ctts/tensor.hpp"

namespace ctts::nets {

using ad::Graph;
using ad::Tensor;

template <class Real>
struct Param {
  std::string name;
  Tensor<Real> value;
};

// Binds persistent parameters into a per-step graph, once each. Also memoizes
// transposed weight nodes so recurrent layers reuse them across timesteps.
template <class Real>
class Binding {
 public:
  Binding(Graph<Real>& g, bool trainable) : g_(&g), trainable_(trainable) {}

  int operator()(Param<Real>& p) {
    auto it = ids_.find(&p);
    if (it != ids_.end()) return it->second;
    Tensor<Real> v = p.value;
    v.requires_grad = trainable_;
    int id = g_->leaf(std::move(v));
    ids_.emplace(&p, id);
    order_.push_back(&p);
    return id;
  }

  int transposed(Param<Real>& p) {
    auto it = tids_.find(&p);
    if (it != tids_.end()) return it->second;
    int id = ad::transpose(*g_, (*this)(p));
    tids_.emplace(&p, id);
    return id;
  }

  Graph<Real>& graph() { return *g_; }
  bool trainable() const { return trainable_; }
  const std::vector<Param<Real>*>& bound() const { return order_; }

  Tensor<Real> grad_of(Param<Real>& p) const {
    auto it = ids_.find(&p);
    if (it == ids_.end()) return Tensor<Real>::zeros(p.value.shape);
    return g_->grad(it->second);
  }

 private:
  Graph<Real>* g_;
  bool trainable_;
  std::unordered_map<const Param<Real>*, int> ids_, tids_;
  std::vector<Param<Real>*> order_;
};

// Deterministic per-call dropout seeds; one stream per forward pass.
struct DropoutStream {
  std::mt19937_64 rng;
  explicit DropoutStream(std::uint64_t seed) : rng(seed) {}
  std::uint64_t next() { return rng(); }
};

namespace detail {

template <class Real>
Tensor<Real> fan_in_init(std::vector<int> shape, int fan_in, std::mt19937_64& rng) {
  const Real a = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  return ad::uniform_tensor<Real>(std::move(shape), -a, a, rng);
}

}  // namespace detail

template <class Real>
int scalar_const(Graph<Real>& g, Real v) {
  return g.constant(Tensor<Real>::scalar(v));
}

template <class Real>
int sub(Graph<Real>& g, int a, int b) {
  return ad::add(g, a, ad::mul(g, b, scalar_const(g, Real(-1))));
}

// y = x W^T + b, with W stored [out, in].
template <class Real>
struct Linear {
  Param<Real> W, b;

  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng) {
    W.name = name + ".W";
    W.value = detail::fan_in_init<Real>({out, in}, in, rng);
    b.name = name + ".b";
    b.value = Tensor<Real>::zeros({out});
  }

  int in_dim() const { return W.value.cols(); }
  int out_dim() const { return W.value.rows(); }

  int forward(Binding<Real>& bind, int x) {
    auto& g = bind.graph();
    const auto& X = g.value(x);
    if (X.cols() != in_dim())
      throw std::runtime_error("linear '" + W.name + "': input dim " +
                               std::to_string(X.cols()) + " != " +
                               std::to_string(in_dim()));
    return ad::add(g, ad::matmul(g, x, bind.transposed(W)), bind(b));
  }

  void collect(std::vector<Param<Real>*>& out) {
    out.push_back(&W);
    out.push_back(&b);
  }
};

// Gated recurrence: z = sig(xWz^T + hUz^T + bz), r likewise,
// c = tanh(xWc^T + (r.h)Uc^T + bc), h' = (1-z).h + z.c
template <class Real>
struct GruCell {
  Param<Real> Wz, Uz, bz, Wr, Ur, br, Wc, Uc, bc;
  int input_dim = 0, hidden_dim = 0;

  GruCell() = default;
  GruCell(const std::string& name, int in, int hidden, std::mt19937_64& rng)
      : input_dim(in), hidden_dim(hidden) {
    auto mk = [&](Param<Real>& p, const char* suffix, int rows, int cols, int fan) {
      p.name = name + "." + suffix;
      p.value = detail::fan_in_init<Real>({rows, cols}, fan, rng);
    };
    mk(Wz, "Wz", hidden, in, in);
    mk(Uz, "Uz", hidden, hidden, hidden);
    mk(Wr, "Wr", hidden, in, in);
    mk(Ur, "Ur", hidden, hidden, hidden);
    mk(Wc, "Wc", hidden, in, in);
    mk(Uc, "Uc", hidden, hidden, hidden);
    bz.name = name + ".bz";
    bz.value = Tensor<Real>::zeros({hidden});
    br.name = name + ".br";
    br.value = Tensor<Real>::zeros({hidden});
    bc.name = name + ".bc";
    bc.value = Tensor<Real>::zeros({hidden});
  }

  int step(Binding<Real>& bind, int x, int h_prev) {
    auto& g = bind.graph();
    const auto& X = g.value(x);
    const auto& H = g.value(h_prev);
    if (X.cols() != input_dim || H.cols() != hidden_dim)
      throw std::runtime_error("gru '" + Wz.name + "': dim mismatch, x=" +
                               ad::shape_str(X.shape) + " h=" + ad::shape_str(H.shape));
    auto gate = [&](Param<Real>& W, Param<Real>& U, Param<Real>& b, int hh) {
      int a = ad::matmul(g, x, bind.transposed(W));
      int u = ad::matmul(g, hh, bind.transposed(U));
      return ad::add(g, ad::add(g, a, u), bind(b));
    };
    int z = ad::sigmoid(g, gate(Wz, Uz, bz, h_prev));
    int r = ad::sigmoid(g, gate(Wr, Ur, br, h_prev));
    int rh = ad::mul(g, r, h_prev);
    int c = ad::tanh_op(g, gate(Wc, Uc, bc, rh));
    int one_minus_z = sub(g, g.constant(Tensor<Real>::full(g.value(z).shape, Real(1))), z);
    return ad::add(g, ad::mul(g, one_minus_z, h_prev), ad::mul(g, z, c));
  }

  int zero_state(Graph<Real>& g, int batch = 1) const {
    return g.constant(Tensor<Real>::zeros({batch, hidden_dim}));
  }

  void collect(std::vector<Param<Real>*>& out) {
    for (auto* p : {&Wz, &Uz, &bz, &Wr, &Ur, &br, &Wc, &Uc, &bc}) out.push_back(p);
  }
};

// Bias-free 3x3 convolution layer.
template <class Real>
struct Conv2d {
  Param<Real> W;  // [OC, C, KH, KW]
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(const std::string& name, int in_ch, int out_ch, int k, int stride_, int pad_,
         std::mt19937_64& rng)
      : stride(stride_), pad(pad_) {
    W.name = name + ".W";
    W.value = detail::fan_in_init<Real>({out_ch, in_ch, k, k}, in_ch * k * k, rng);
  }

  int forward(Binding<Real>& bind, int x) {
    return ad::conv2d(bind.graph(), x, bind(W), stride, pad);
  }

  void collect(std::vector<Param<Real>*>& out) { out.push_back(&W); }
};

template <class Real>
struct BatchNorm {
  Param<Real> gamma, beta;
  ad::BatchNormState<Real> state;

  BatchNorm() = default;
  BatchNorm(const std::string& name, int features) {
    gamma.name = name + ".gamma";
    gamma.value = Tensor<Real>::full({features}, Real(1));
    beta.name = name + ".beta";
    beta.value = Tensor<Real>::zeros({features});
  }

  int forward(Binding<Real>& bind, int x, bool train) {
    return ad::batchnorm(bind.graph(), x, bind(gamma), bind(beta), &state, train);
  }

  void collect(std::vector<Param<Real>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

  void collect_state(std::vector<std::pair<std::string, std::vector<Real>*>>& out) {
    out.emplace_back(gamma.name + ".running_mean", &state.running_mean);
    out.emplace_back(gamma.name + ".running_var", &state.running_var);
  }
};

// Mel summary encoder: strided 3x3 conv stack over the T x M map, flattened
// per time step and consumed by a GRU; the final hidden state is the summary.
template <class Real>
struct ReferenceEncoder {
  Conv2d<Real> conv1, conv2, conv3;
  GruCell<Real> gru;
  int n_mels = 80;
  int out_dim = 128;
  // per-forward counter used to verify which encoders a code path touches
  mutable long forward_count = 0;

  ReferenceEncoder() = default;
  ReferenceEncoder(const std::string& name, int n_mels_, int gru_dim, std::mt19937_64& rng)
      : n_mels(n_mels_), out_dim(gru_dim) {
    conv1 = Conv2d<Real>(name + ".conv1", 1, 32, 3, 2, 1, rng);
    conv2 = Conv2d<Real>(name + ".conv2", 32, 32, 3, 2, 1, rng);
    conv3 = Conv2d<Real>(name + ".conv3", 32, 64, 3, 2, 1, rng);
    const int freq = reduced(reduced(reduced(n_mels_)));
    gru = GruCell<Real>(name + ".gru", 64 * freq, gru_dim, rng);
  }

  static int reduced(int n) { return (n - 1) / 2 + 1; }  // k=3, s=2, p=1

  int forward(Binding<Real>& bind, int mel /* [T, M] */) {
    ++forward_count;
    auto& g = bind.graph();
    const auto& M = g.value(mel);
    if (M.rank() != 2 || M.cols() != n_mels)
      throw std::runtime_error("reference encoder: expected [T," +
                               std::to_string(n_mels) + "] mel, got " +
                               ad::shape_str(M.shape));
    const int T = M.rows();
    if (T < 4)
      throw std::runtime_error("reference encoder: mel too short for conv stack (T=" +
                               std::to_string(T) + " < 4)");
    int x = ad::reshape(g, mel, {1, T, n_mels});
    x = ad::relu(g, conv1.forward(bind, x));
    x = ad::relu(g, conv2.forward(bind, x));
    x = ad::relu(g, conv3.forward(bind, x));
    const auto& F = g.value(x);  // [64, T', M']
    const int Tp = F.shape[1], Mp = F.shape[2];
    int h = gru.zero_state(g);
    for (int t = 0; t < Tp; ++t) {
      int ft = ad::slice(g, x, {0, t, 0}, {64, 1, Mp});
      ft = ad::reshape(g, ft, {1, 64 * Mp});
      h = gru.step(bind, ft, h);
    }
    return h;  // [1, out_dim]
  }

  void collect(std::vector<Param<Real>*>& out) {
    conv1.collect(out);
    conv2.collect(out);
    conv3.collect(out);
    gru.collect(out);
  }
};

// Learned token bank with multi-head attention; each head's output is a
// convex combination of that head's projected tokens.
template <class Real>
struct StyleTokenBank {
  Param<Real> tokens;  // [K, token_dim]
  std::vector<Param<Real>> Wq, Wk, Wv;
  int head_count = 4;
  int out_dim = 256;
  bool token_tanh = true;

  struct HeadTrace {
    int weights;  // [1, K]
    int values;   // [K, d_head]
  };

  StyleTokenBank() = default;
  StyleTokenBank(const std::string& name, int n_tokens, int token_dim, int query_dim,
                 int heads, int out_dim_, bool token_tanh_, std::mt19937_64& rng)
      : head_count(heads), out_dim(out_dim_), token_tanh(token_tanh_) {
    if (out_dim_ % heads != 0)
      throw std::runtime_error("style bank: output dim must divide by head count");
    if (n_tokens < 1) throw std::runtime_error("style bank: need at least one token");
    tokens.name = name + ".tokens";
    tokens.value = ad::normal_tensor<Real>({n_tokens, token_dim}, Real(0), Real(0.5), rng);
    const int d_head = out_dim_ / heads;
    const int d_key = d_head;
    for (int h = 0; h < heads; ++h) {
      Param<Real> q, k, v;
      q.name = name + ".head" + std::to_string(h) + ".Wq";
      q.value = detail::fan_in_init<Real>({query_dim, d_key}, query_dim, rng);
      k.name = name + ".head" + std::to_string(h) + ".Wk";
      k.value = detail::fan_in_init<Real>({token_dim, d_key}, token_dim, rng);
      v.name = name + ".head" + std::to_string(h) + ".Wv";
      v.value = detail::fan_in_init<Real>({token_dim, d_head}, token_dim, rng);
      Wq.push_back(std::move(q));
      Wk.push_back(std::move(k));
      Wv.push_back(std::move(v));
    }
  }

  int forward(Binding<Real>& bind, int query, std::vector<HeadTrace>* trace = nullptr) {
    auto& g = bind.graph();
    const auto& Q = g.value(query);
    if (Q.rank() != 2 || Q.cols() != Wq[0].value.rows())
      throw std::runtime_error("style bank: query dim mismatch, got " +
                               ad::shape_str(Q.shape));
    int tok = bind(tokens);
    if (token_tanh) tok = ad::tanh_op(g, tok);
    const int d_key = Wq[0].value.cols();
    const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d_key)));
    std::vector<int> heads;
    for (int h = 0; h < head_count; ++h) {
      int q = ad::matmul(g, query, bind(Wq[h]));          // [1, d_key]
      int k = ad::matmul(g, tok, bind(Wk[h]));            // [K, d_key]
      int v = ad::matmul(g, tok, bind(Wv[h]));            // [K, d_head]
      int scores = ad::matmul(g, q, ad::transpose(g, k)); // [1, K]
      scores = ad::mul(g, scores, scalar_const(g, scale));
      int w = ad::softmax(g, scores, 1);
      if (trace) trace->push_back({w, v});
      heads.push_back(ad::matmul(g, w, v));               // [1, d_head]
    }
    return ad::concat(g, heads, 1);  // [1, out_dim]
  }

  void collect(std::vector<Param<Real>*>& out) {
    out.push_back(&tokens);
    for (auto& p : Wq) out.push_back(&p);
    for (auto& p : Wk) out.push_back(&p);
    for (auto& p : Wv) out.push_back(&p);
  }
};

}  // namespace ctts::nets
