#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ctts/nets.hpp"
#include "gradcheck.hpp"

using namespace ctts;
using ad::Graph;
using ad::Tensor;
using ctts::testing::gradcheck;
using nets::Binding;

TEST_CASE("linear layer") {
  std::mt19937_64 rng(1);

  SECTION("identity weights pass input through") {
    nets::Linear<float> lin("lin", 3, 3, rng);
    lin.W.value = Tensor<float>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    lin.b.value = Tensor<float>::zeros({3});
    Graph<float> g;
    Binding<float> bind(g, false);
    int x = g.constant(Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6}));
    int y = lin.forward(bind, x);
    CHECK(g.value(y).data == std::vector<float>{1, 2, 3, 4, 5, 6});
  }
  SECTION("order-head first layer dims: 512 in, 256 out") {
    nets::Linear<float> lin("l1", 512, 256, rng);
    CHECK(lin.W.value.shape == std::vector<int>{256, 512});
    Graph<float> g;
    Binding<float> bind(g, false);
    int x = g.constant(Tensor<float>::zeros({1, 512}));
    CHECK(g.value(lin.forward(bind, x)).shape == std::vector<int>{1, 256});
  }
  SECTION("dim mismatch rejected") {
    nets::Linear<float> lin("lin", 4, 2, rng);
    Graph<float> g;
    Binding<float> bind(g, false);
    int x = g.constant(Tensor<float>::zeros({1, 3}));
    CHECK_THROWS(lin.forward(bind, x));
  }
  SECTION("gradient vs finite differences") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      std::mt19937_64 r2(seed);
      nets::Linear<double> lin("lin", 5, 3, r2);
      auto x0 = ad::uniform_tensor<double>({2, 5}, -1.0, 1.0, r2);
      auto build = [&](Graph<double>& g, int x) {
        Binding<double> bind(g, false);
        return ad::sum(g, ad::tanh_op(g, lin.forward(bind, x)));
      };
      auto res = ctts::testing::gradcheck_graph<double>(build, x0, 1e-5, seed);
      CHECK(res.max_rel_err < 1e-5);
    }
  }
}

TEST_CASE("gru cell") {
  std::mt19937_64 rng(7);

  SECTION("all-zero parameters and state give zero output") {
    nets::GruCell<float> cell("gru", 4, 3, rng);
    for (auto* p : {&cell.Wz, &cell.Uz, &cell.Wr, &cell.Ur, &cell.Wc, &cell.Uc})
      std::fill(p->value.data.begin(), p->value.data.end(), 0.0f);
    Graph<float> g;
    Binding<float> bind(g, false);
    int x = g.constant(Tensor<float>({1, 4}, {1, 2, 3, 4}));
    int h = cell.zero_state(g);
    int h1 = cell.step(bind, x, h);
    for (float v : g.value(h1).data) CHECK(v == 0.0f);  // z=0.5, candidate=0
  }
  SECTION("hidden state stays in (-1,1)") {
    nets::GruCell<float> cell("gru", 2, 8, rng);
    // exaggerated weights still cannot push the state out of the interval:
    // h' is a convex combination of h and tanh(..)
    for (auto* p : {&cell.Wz, &cell.Uz, &cell.Wr, &cell.Ur, &cell.Wc, &cell.Uc})
      for (auto& v : p->value.data) v *= 20.0f;
    Graph<float> g;
    Binding<float> bind(g, false);
    int h = g.constant(ad::uniform_tensor<float>({1, 8}, -0.99f, 0.99f, rng));
    for (int t = 0; t < 10; ++t) {
      int x = g.constant(ad::uniform_tensor<float>({1, 2}, -5.0f, 5.0f, rng));
      h = cell.step(bind, x, h);
      // float tanh saturates to exactly +-1 under extreme weights, so the
      // open-interval bound is checked up to rounding
      for (float v : g.value(h).data) CHECK(std::abs(v) <= 1.0f);
    }
  }
  SECTION("dim mismatch rejected") {
    nets::GruCell<float> cell("gru", 4, 3, rng);
    Graph<float> g;
    Binding<float> bind(g, false);
    int x = g.constant(Tensor<float>::zeros({1, 5}));
    CHECK_THROWS(cell.step(bind, x, cell.zero_state(g)));
  }
  SECTION("gradient through 5 unrolled steps") {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
      std::mt19937_64 r2(seed);
      nets::GruCell<double> cell("gru", 3, 4, r2);
      auto x0 = ad::uniform_tensor<double>({1, 3}, -1.0, 1.0, r2);
      auto build = [&](Graph<double>& g, int x) {
        Binding<double> bind(g, false);
        int h = cell.zero_state(g);
        for (int t = 0; t < 5; ++t) h = cell.step(bind, x, h);
        return ad::sum(g, h);
      };
      auto res = ctts::testing::gradcheck_graph<double>(build, x0, 1e-5, seed);
      CHECK(res.max_rel_err < 1e-5);
    }
  }
}

TEST_CASE("reference encoder") {
  std::mt19937_64 rng(3);
  nets::ReferenceEncoder<float> enc("ref", 80, 128, rng);

  SECTION("output dim is 128 for any usable T") {
    for (int T : {4, 40, 400}) {
      Graph<float> g;
      Binding<float> bind(g, false);
      std::mt19937_64 r2(T);
      int mel = g.constant(ad::uniform_tensor<float>({T, 80}, -4.0f, 1.0f, r2));
      int out = enc.forward(bind, mel);
      CHECK(g.value(out).shape == std::vector<int>{1, 128});
    }
  }
  SECTION("too-short input rejected") {
    Graph<float> g;
    Binding<float> bind(g, false);
    int mel = g.constant(Tensor<float>::zeros({3, 80}));
    CHECK_THROWS(enc.forward(bind, mel));
  }
  SECTION("distinct inputs map to distinct summaries") {
    Graph<float> g;
    Binding<float> bind(g, false);
    std::mt19937_64 r2(9);
    int a = g.constant(ad::uniform_tensor<float>({16, 80}, -4.0f, 1.0f, r2));
    int b = g.constant(ad::uniform_tensor<float>({16, 80}, -4.0f, 1.0f, r2));
    CHECK(g.value(enc.forward(bind, a)).data != g.value(enc.forward(bind, b)).data);
  }
  SECTION("deterministic forward") {
    std::mt19937_64 r2(4);
    auto melv = ad::uniform_tensor<float>({12, 80}, -4.0f, 1.0f, r2);
    Graph<float> g;
    Binding<float> bind(g, false);
    auto a = g.value(enc.forward(bind, g.constant(melv))).data;
    auto b = g.value(enc.forward(bind, g.constant(melv))).data;
    CHECK(a == b);
  }
  SECTION("gradient at T=8 w.r.t. the mel input") {
    std::mt19937_64 r2(21);
    nets::ReferenceEncoder<double> enc64("ref64", 8, 6, r2);
    auto mel0 = ad::uniform_tensor<double>({8, 8}, -1.0, 1.0, r2);
    auto build = [&](Graph<double>& g, int mel) {
      Binding<double> bind(g, false);
      return ad::sum(g, enc64.forward(bind, mel));
    };
    auto res = ctts::testing::gradcheck_graph<double>(build, mel0, 1e-5, 21);
    CHECK(res.checked > 20);
    CHECK(res.max_rel_err < 1e-5);
  }
}

TEST_CASE("style token attention") {
  std::mt19937_64 rng(5);

  SECTION("per-head weights sum to one") {
    nets::StyleTokenBank<float> bank("bank", 10, 32, 16, 4, 64, true, rng);
    Graph<float> g;
    Binding<float> bind(g, false);
    int q = g.constant(ad::uniform_tensor<float>({1, 16}, -1.0f, 1.0f, rng));
    std::vector<nets::StyleTokenBank<float>::HeadTrace> trace;
    int out = bank.forward(bind, q, &trace);
    CHECK(g.value(out).shape == std::vector<int>{1, 64});
    REQUIRE(trace.size() == 4);
    for (const auto& h : trace) {
      float s = 0;
      for (float w : g.value(h.weights).data) {
        CHECK(w >= 0.0f);
        s += w;
      }
      CHECK(s == Catch::Approx(1.0f).margin(1e-6));
    }
  }
  SECTION("single token: weight 1, output independent of query") {
    nets::StyleTokenBank<float> bank("bank", 1, 8, 6, 2, 16, true, rng);
    Graph<float> g;
    Binding<float> bind(g, false);
    int q1 = g.constant(ad::uniform_tensor<float>({1, 6}, -1.0f, 1.0f, rng));
    int q2 = g.constant(ad::uniform_tensor<float>({1, 6}, -1.0f, 1.0f, rng));
    std::vector<nets::StyleTokenBank<float>::HeadTrace> trace;
    int o1 = bank.forward(bind, q1, &trace);
    int o2 = bank.forward(bind, q2);
    for (float w : g.value(trace[0].weights).data) CHECK(w == 1.0f);
    CHECK(g.value(o1).data == g.value(o2).data);
  }
  SECTION("outputs lie in the convex hull of projected tokens") {
    nets::StyleTokenBank<float> bank("bank", 6, 12, 10, 2, 8, true, rng);
    for (int trial = 0; trial < 10; ++trial) {
      Graph<float> g;
      Binding<float> bind(g, false);
      int q = g.constant(ad::uniform_tensor<float>({1, 10}, -2.0f, 2.0f, rng));
      std::vector<nets::StyleTokenBank<float>::HeadTrace> trace;
      int out = bank.forward(bind, q, &trace);
      const auto& O = g.value(out);
      const int d_head = 8 / 2;
      for (int h = 0; h < 2; ++h) {
        const auto& V = g.value(trace[h].values);  // [K, d_head]
        for (int c = 0; c < d_head; ++c) {
          float lo = V.at(0, c), hi = V.at(0, c);
          for (int k = 1; k < 6; ++k) {
            lo = std::min(lo, V.at(k, c));
            hi = std::max(hi, V.at(k, c));
          }
          const float v = O.data[h * d_head + c];
          CHECK(v >= lo - 1e-5f);
          CHECK(v <= hi + 1e-5f);
        }
      }
    }
  }
  SECTION("output norm bounded by max projected token norm") {
    nets::StyleTokenBank<float> bank("bank", 5, 9, 7, 1, 6, false, rng);
    Graph<float> g;
    Binding<float> bind(g, false);
    int q = g.constant(ad::uniform_tensor<float>({1, 7}, -3.0f, 3.0f, rng));
    std::vector<nets::StyleTokenBank<float>::HeadTrace> trace;
    int out = bank.forward(bind, q, &trace);
    const auto& V = g.value(trace[0].values);
    double max_row = 0;
    for (int k = 0; k < 5; ++k) {
      double n = 0;
      for (int c = 0; c < 6; ++c) n += static_cast<double>(V.at(k, c)) * V.at(k, c);
      max_row = std::max(max_row, std::sqrt(n));
    }
    double out_norm = 0;
    for (float v : g.value(out).data) out_norm += static_cast<double>(v) * v;
    CHECK(std::sqrt(out_norm) <= max_row + 1e-5);
  }
  SECTION("head count must divide output dim") {
    CHECK_THROWS(nets::StyleTokenBank<float>("bad", 4, 8, 8, 3, 64, true, rng));
  }
}
