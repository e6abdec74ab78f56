// Acceptance suite: one self-contained check per criterion, each printing a
// single [PASS]/[FAIL] line. Run all criteria with no arguments or one with
// --criterion N.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "ctts/cli.hpp"
#include "ctts/eval.hpp"
#include "ctts/model.hpp"
#include "ctts/stats.hpp"
#include "ctts/train.hpp"
#include "gradcheck.hpp"
#include "synthcorpus.hpp"

using namespace ctts;
using ad::Graph;
using ad::Tensor;
using ctts::testing::gradcheck_graph;
using ctts::testing::GradCheckResult;
using model::Variant;
namespace fs = std::filesystem;

namespace {

std::string work_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ctts_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("ctts");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

// ---------------------------------------------------------------------------
// criterion 1: gradient suite, every layer and both task heads,
// 10 seeds each, < 1e-3 in 32-bit mode and < 1e-5 in 64-bit mode
// ---------------------------------------------------------------------------

// Copies parameters from a Real-typed layer into its double-typed twin so
// both compute the same mathematical function.
template <class Real>
void copy_params(std::vector<nets::Param<Real>*> src,
                 std::vector<nets::Param<double>*> dst) {
  if (src.size() != dst.size())
    throw std::logic_error("twin layers disagree on parameter count");
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i]->value = src[i]->value.template cast<double>();
}

template <class Real>
bool gradient_suite(std::ostream& log) {
  const double tol = ctts::testing::grad_tol<Real>();
  const int bits = static_cast<int>(sizeof(Real)) * 8;
  bool ok = true;

  auto expect = [&](const char* layer, std::uint64_t seed, const GradCheckResult& r) {
    if (r.checked == 0 || r.max_rel_err >= tol) {
      log << "  [" << bits << "-bit] " << layer << " seed " << seed
          << ": max rel err " << r.max_rel_err << " (checked " << r.checked
          << ", tol " << tol << ")\n";
      ok = false;
    }
  };

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed * 1000 + bits);
    std::mt19937_64 rng_twin = rng;  // twin layers consume the same stream
    auto smooth = [&](std::vector<int> shape) {
      auto t = ad::uniform_tensor<Real>(shape, Real(0.2), Real(1.2), rng);
      std::uniform_int_distribution<int> coin(0, 1);
      for (auto& v : t.data)
        if (coin(rng)) v = -v;
      return t;
    };

    {
      nets::Linear<Real> lr("lin", 5, 3, rng);
      nets::Linear<double> ld("lin", 5, 3, rng_twin);
      std::vector<nets::Param<Real>*> a;
      lr.collect(a);
      std::vector<nets::Param<double>*> b;
      ld.collect(b);
      copy_params(a, b);
      auto x0 = smooth({2, 5});
      expect("linear", seed, ctts::testing::gradcheck_vs_double<Real>(
          [&](Graph<Real>& g, int x) {
            nets::Binding<Real> bind(g, false);
            return ad::sum(g, ad::tanh_op(g, lr.forward(bind, x)));
          },
          [&](Graph<double>& g, int x) {
            nets::Binding<double> bind(g, false);
            return ad::sum(g, ad::tanh_op(g, ld.forward(bind, x)));
          },
          x0, seed));
    }
    {
      nets::GruCell<Real> cr("gru", 3, 4, rng);
      nets::GruCell<double> cd("gru", 3, 4, rng_twin);
      std::vector<nets::Param<Real>*> a;
      cr.collect(a);
      std::vector<nets::Param<double>*> b;
      cd.collect(b);
      copy_params(a, b);
      auto x0 = smooth({1, 3});
      expect("gru(5 steps)", seed, ctts::testing::gradcheck_vs_double<Real>(
          [&](Graph<Real>& g, int x) {
            nets::Binding<Real> bind(g, false);
            int h = cr.zero_state(g);
            for (int t = 0; t < 5; ++t) h = cr.step(bind, x, h);
            return ad::sum(g, h);
          },
          [&](Graph<double>& g, int x) {
            nets::Binding<double> bind(g, false);
            int h = cd.zero_state(g);
            for (int t = 0; t < 5; ++t) h = cd.step(bind, x, h);
            return ad::sum(g, h);
          },
          x0, seed));
    }
    {
      auto w = smooth({3, 2, 3, 3});
      auto wd = w.template cast<double>();
      auto x0 = smooth({2, 6, 5});
      expect("conv2d", seed, ctts::testing::gradcheck_vs_double<Real>(
          [&](Graph<Real>& g, int x) {
            return ad::sum(g, ad::tanh_op(g, ad::conv2d(g, x, g.constant(w), 2, 1)));
          },
          [&](Graph<double>& g, int x) {
            return ad::sum(g, ad::tanh_op(g, ad::conv2d(g, x, g.constant(wd), 2, 1)));
          },
          x0, seed));
    }
    {
      auto gamma = ad::uniform_tensor<Real>({3}, Real(0.5), Real(1.5), rng);
      auto beta = smooth({3});
      auto gd = gamma.template cast<double>();
      auto bd = beta.template cast<double>();
      auto x0 = smooth({5, 3});
      expect("batchnorm(train)", seed, ctts::testing::gradcheck_vs_double<Real>(
          [&](Graph<Real>& g, int x) {
            ad::BatchNormState<Real> st;
            return ad::sum(g, ad::tanh_op(g, ad::batchnorm(g, x, g.constant(gamma),
                                                           g.constant(beta), &st, true)));
          },
          [&](Graph<double>& g, int x) {
            ad::BatchNormState<double> st;
            return ad::sum(g, ad::tanh_op(g, ad::batchnorm(g, x, g.constant(gd),
                                                           g.constant(bd), &st, true)));
          },
          x0, seed));
    }
    {
      auto x0 = smooth({4, 6});
      auto mk_readout = [&seed]<class T>(Graph<T>& g) {
        std::mt19937_64 rrng(seed);
        return g.constant(ad::uniform_tensor<T>({4, 6}, T(-1), T(1), rrng));
      };
      expect("dropout(train)", seed, ctts::testing::gradcheck_vs_double<Real>(
          [&](Graph<Real>& g, int x) {
            return ad::sum(g, ad::mul(g, ad::dropout(g, x, 0.5, true, seed),
                                      mk_readout(g)));
          },
          [&](Graph<double>& g, int x) {
            return ad::sum(g, ad::mul(g, ad::dropout(g, x, 0.5, true, seed),
                                      mk_readout(g)));
          },
          x0, seed));
    }
    {
      auto x0 = smooth({3, 5});
      auto mk_readout = [&seed]<class T>(Graph<T>& g) {
        std::mt19937_64 rrng(seed + 1);
        return g.constant(ad::uniform_tensor<T>({3, 5}, T(-1), T(1), rrng));
      };
      expect("softmax", seed, ctts::testing::gradcheck_vs_double<Real>(
          [&](Graph<Real>& g, int x) {
            return ad::sum(g, ad::mul(g, ad::softmax(g, x, 1), mk_readout(g)));
          },
          [&](Graph<double>& g, int x) {
            return ad::sum(g, ad::mul(g, ad::softmax(g, x, 1), mk_readout(g)));
          },
          x0, seed));
    }
    {
      nets::ReferenceEncoder<Real> er("ref", 8, 6, rng);
      nets::ReferenceEncoder<double> ed("ref", 8, 6, rng_twin);
      std::vector<nets::Param<Real>*> a;
      er.collect(a);
      std::vector<nets::Param<double>*> b;
      ed.collect(b);
      copy_params(a, b);
      auto x0 = smooth({8, 8});
      expect("reference_encoder", seed, ctts::testing::gradcheck_vs_double<Real>(
          [&](Graph<Real>& g, int mel) {
            nets::Binding<Real> bind(g, false);
            return ad::sum(g, er.forward(bind, mel));
          },
          [&](Graph<double>& g, int mel) {
            nets::Binding<double> bind(g, false);
            return ad::sum(g, ed.forward(bind, mel));
          },
          x0, seed));
    }
    {
      nets::StyleTokenBank<Real> br("bank", 4, 6, 5, 2, 8, true, rng);
      nets::StyleTokenBank<double> bd2("bank", 4, 6, 5, 2, 8, true, rng_twin);
      std::vector<nets::Param<Real>*> a;
      br.collect(a);
      std::vector<nets::Param<double>*> b;
      bd2.collect(b);
      copy_params(a, b);
      auto q0 = smooth({1, 5});
      expect("style_token_attention", seed, ctts::testing::gradcheck_vs_double<Real>(
          [&](Graph<Real>& g, int q) {
            nets::Binding<Real> bind(g, false);
            return ad::sum(g, br.forward(bind, q));
          },
          [&](Graph<double>& g, int q) {
            nets::Binding<double> bind(g, false);
            return ad::sum(g, bd2.forward(bind, q));
          },
          q0, seed));
    }
    {
      model::OrderHead<Real> hr(64, 0.5, rng);
      model::OrderHead<double> hd(64, 0.5, rng_twin);
      std::vector<nets::Param<Real>*> a;
      hr.collect(a);
      std::vector<nets::Param<double>*> b;
      hd.collect(b);
      copy_params(a, b);
      auto x0 = smooth({4, 128});
      expect("order_head", seed, ctts::testing::gradcheck_vs_double<Real>(
          [&](Graph<Real>& g, int x) {
            nets::Binding<Real> bind(g, false);
            nets::DropoutStream drop(seed);
            return ad::sum(g, hr.forward(bind, x, true, drop));
          },
          [&](Graph<double>& g, int x) {
            nets::Binding<double> bind(g, false);
            nets::DropoutStream drop(seed);
            return ad::sum(g, hd.forward(bind, x, true, drop));
          },
          x0, seed));
    }
    {
      model::NextHead<Real> hr(64, 0.5, rng);
      model::NextHead<double> hd(64, 0.5, rng_twin);
      std::vector<nets::Param<Real>*> a;
      hr.collect(a);
      std::vector<nets::Param<double>*> b;
      hd.collect(b);
      copy_params(a, b);
      auto x0 = smooth({4, 64});
      expect("next_head", seed, ctts::testing::gradcheck_vs_double<Real>(
          [&](Graph<Real>& g, int x) {
            nets::Binding<Real> bind(g, false);
            nets::DropoutStream drop(seed);
            return ad::sum(g, ad::tanh_op(g, hr.forward(bind, x, true, drop)));
          },
          [&](Graph<double>& g, int x) {
            nets::Binding<double> bind(g, false);
            nets::DropoutStream drop(seed);
            return ad::sum(g, ad::tanh_op(g, hd.forward(bind, x, true, drop)));
          },
          x0, seed));
    }
  }
  return ok;
}

bool criterion1(std::ostream& log) {
  bool ok = gradient_suite<float>(log);
  ok = gradient_suite<double>(log) && ok;
  return ok;
}

// ---------------------------------------------------------------------------
// criterion 2: architecture fidelity of the task heads
// ---------------------------------------------------------------------------

bool criterion2(std::ostream& log) {
  std::mt19937_64 rng(1);
  bool ok = true;
  auto check_shape = [&](const char* what, const std::vector<int>& got,
                         std::vector<int> want) {
    if (got != want) {
      log << "  " << what << ": got " << ad::shape_str(got) << ", want "
          << ad::shape_str(want) << "\n";
      ok = false;
    }
  };

  model::OrderHead<float> order(256, 0.5, rng);
  // stored [out, in]: layer i maps in -> out
  check_shape("order l1", order.l1.W.value.shape, {256, 512});
  check_shape("order l2", order.l2.W.value.shape, {128, 256});
  check_shape("order l3", order.l3.W.value.shape, {64, 128});
  check_shape("order l4", order.l4.W.value.shape, {1, 64});

  model::NextHead<float> next(256, 0.5, rng);
  check_shape("next l1", next.l1.W.value.shape, {128, 256});
  check_shape("next l2", next.l2.W.value.shape, {64, 128});
  check_shape("next l3", next.l3.W.value.shape, {64, 64});
  check_shape("next l4", next.l4.W.value.shape, {128, 64});
  check_shape("next l5", next.l5.W.value.shape, {256, 128});

  {
    Graph<float> g;
    nets::Binding<float> bind(g, false);
    nets::DropoutStream drop(1);
    int x = g.constant(Tensor<float>::zeros({1, 512}));
    check_shape("order output", g.value(order.forward(bind, x, false, drop)).shape,
                {1, 1});
    int bad = g.constant(Tensor<float>::zeros({1, 511}));
    try {
      order.forward(bind, bad, false, drop);
      log << "  order head accepted a 511-dim input\n";
      ok = false;
    } catch (const std::exception&) {
    }
    int y = g.constant(Tensor<float>::zeros({1, 256}));
    check_shape("next output", g.value(next.forward(bind, y, false, drop)).shape,
                {1, 256});
  }
  return ok;
}

// ---------------------------------------------------------------------------
// criterion 3: order-swap protocol at swap_prob 0.5
// ---------------------------------------------------------------------------

bool criterion3(std::ostream& log) {
  std::mt19937_64 rng(20260810);
  const int n = 10000;
  int swapped = 0;
  for (int i = 0; i < n; ++i)
    if (train::order_swap_sample<int>(0, 1, 0.5, rng).label == 0) ++swapped;
  const double frac = static_cast<double>(swapped) / n;
  log << "  swapped fraction over " << n << " draws: " << frac << "\n";
  return frac >= 0.48 && frac <= 0.52;
}

// ---------------------------------------------------------------------------
// shared toy-corpus machinery for criteria 4 and 5
// ---------------------------------------------------------------------------

Config desk_config() {
  Config cfg;
  cfg.set("model.char_embed_dim", "32");
  cfg.set("model.text_gru_dim", "64");
  cfg.set("model.attention_dim", "64");
  cfg.set("model.decoder_gru_dim", "256");
  cfg.set("train.batch_size", "4");
  return cfg;
}

struct InMemoryData {
  std::vector<train::PairFeatures> pairs;
  std::vector<std::string> ids;
  std::map<std::string, Tensor<float>> universe;
};

InMemoryData build_pairs(const std::vector<testing::ToneUtterance>& utts,
                         const dsp::DspConfig& dcfg) {
  InMemoryData d;
  std::map<std::string, const testing::ToneUtterance*> by_id;
  for (const auto& u : utts) by_id[u.id] = &u;
  std::map<std::string, Tensor<float>> mels;
  for (const auto& u : utts) {
    auto mel = testing::tone_mel(u, dcfg);
    mels.emplace(u.id, model::mel_to_tensor<float>(mel));
  }
  for (const auto& u : utts) {
    auto id = corpus::parse_utterance_id(u.id);
    const std::string prev = testing::utt_id(id.chapter, id.chunk - 1);
    if (!by_id.count(prev)) continue;
    train::PairFeatures pf;
    pf.prev_id = prev;
    pf.curr_id = u.id;
    pf.text = u.text;
    pf.mel_prev = mels.at(prev);
    pf.mel_curr = mels.at(u.id);
    d.pairs.push_back(std::move(pf));
  }
  for (auto& [id, mel] : mels) {
    d.ids.push_back(id);
    d.universe.emplace(id, std::move(mel));
  }
  return d;
}

struct TrainedModel {
  std::unique_ptr<model::TtsModel<float>> model;
  train::LossBreakdown first, last;
};

TrainedModel train_variant(const Config& cfg, Variant variant,
                           const std::vector<testing::ToneUtterance>& utts,
                           long long iters, std::ostream& log) {
  Config c = cfg;
  c.set("train.variant", model::variant_name(variant));
  c.set("train.max_iters", std::to_string(iters));
  const auto dcfg = dsp::DspConfig::from_config(c);
  auto data = build_pairs(utts, dcfg);

  std::vector<std::string> texts;
  for (const auto& u : utts) texts.push_back(u.text);
  auto vocab = model::Vocab::from_texts(texts);

  TrainedModel out;
  out.model = std::make_unique<model::TtsModel<float>>(
      model::ModelConfig::from_config(c), vocab, train::TrainConfig::from_config(c).seed);
  train::Trainer trainer(*out.model, train::TrainConfig::from_config(c),
                         std::move(data.pairs), std::move(data.ids),
                         std::move(data.universe));
  out.first = trainer.compute_loss(trainer.batch_for(0), true);
  const auto t0 = std::chrono::steady_clock::now();
  for (long long i = 0; i < iters; ++i) {
    auto res = trainer.step();
    out.last = res.losses;
    if ((i + 1) % 500 == 0) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << "  [" << model::variant_name(variant) << "] step " << (i + 1) << "/"
          << iters << " total " << out.last.total << " mel " << out.last.mel_mse
          << " task " << out.last.task_loss << " (" << secs << "s)\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// criterion 4: overfit experiment on a 10-pair corpus
// ---------------------------------------------------------------------------

bool criterion4(std::ostream& log) {
  std::vector<testing::ToneUtterance> utts;
  const char* texts[] = {"a", "ab", "b", "ba", "bab"};
  for (int i = 0; i < 11; ++i) {
    testing::ToneUtterance u;
    u.id = testing::utt_id(1, i + 1);
    u.text = texts[i % 5];
    u.freq = 150.0 + 15.0 * i;
    u.frames = 10 + 2 * (i % 5);
    utts.push_back(u);
  }

  auto trained = train_variant(desk_config(), Variant::next, utts, 2000, log);
  log << "  initial mel_mse " << trained.first.mel_mse << ", final "
      << trained.last.mel_mse << "\n";
  log << "  initial task mse " << trained.first.task_loss << ", final "
      << trained.last.task_loss << "\n";
  const bool mel_ok = trained.last.mel_mse < 0.1 * trained.first.mel_mse;
  const bool task_ok = trained.last.task_loss < trained.first.task_loss;
  if (!mel_ok) log << "  mel_mse did not drop below 10% of initial\n";
  if (!task_ok) log << "  task loss did not decrease\n";
  return mel_ok && task_ok;
}

// ---------------------------------------------------------------------------
// criterion 5: context-variation mechanism (Fig. 4 style) at toy scale
// ---------------------------------------------------------------------------

bool criterion5(std::ostream& log) {
  // 50 (pitch, duration) combinations, one chapter of 3 utterances each;
  // within a chapter the context mel fully determines the target's pitch,
  // fade rate and therefore duration
  std::vector<testing::ToneUtterance> utts;
  auto combo_freq = [](int c) { return 170.0 + 10.0 * (c % 10); };
  auto combo_frames = [](int c) { return 12 + 6 * (c / 10); };
  for (int c = 0; c < 50; ++c) {
    for (int k = 1; k <= 3; ++k) {
      testing::ToneUtterance u;
      u.id = testing::utt_id(c + 1, k);
      u.text = "sasa";
      u.freq = combo_freq(c);
      u.frames = combo_frames(c);
      utts.push_back(u);
    }
  }

  Config cfg = desk_config();
  cfg.set("model.max_frames", "64");
  const long long iters = 1500;
  auto next_model = train_variant(cfg, Variant::next, utts, iters, log);
  auto random_model = train_variant(cfg, Variant::random_context, utts, iters, log);

  const auto dcfg = dsp::DspConfig::from_config(cfg);
  const auto fcfg = dsp::F0Config::from_config(cfg);
  std::vector<dsp::MelSpectrogram> contexts;
  for (int c = 0; c < 50; ++c) {
    testing::ToneUtterance u;
    u.id = "ctx";
    u.text = "sasa";
    u.freq = combo_freq(c);
    u.frames = combo_frames(c);
    contexts.push_back(testing::tone_mel(u, dcfg));
  }

  const int gl_iters = static_cast<int>(cfg.get_int("dsp.griffin_lim_iters"));
  auto nt = eval::variation_analysis(*next_model.model, Variant::next, "sasa",
                                     contexts, 7, dcfg, fcfg, gl_iters);
  auto rc = eval::variation_analysis(*random_model.model, Variant::random_context,
                                     "sasa", contexts, 7, dcfg, fcfg, gl_iters);

  log << "  next:           duration_std " << nt.duration_std << " frames, f0 std "
      << nt.f0_framewise_std << " Hz\n";
  log << "  random_context: duration_std " << rc.duration_std << " frames, f0 std "
      << rc.f0_framewise_std << " Hz\n";

  bool ok = true;
  if (!(nt.duration_std > 0)) { log << "  next duration variation is zero\n"; ok = false; }
  if (!(nt.f0_framewise_std > 0)) { log << "  next f0 variation is zero\n"; ok = false; }
  if (!(nt.duration_std >= 5.0 * rc.duration_std)) {
    log << "  duration variation ratio below 5x\n";
    ok = false;
  }
  if (!(nt.f0_framewise_std >= 5.0 * rc.f0_framewise_std)) {
    log << "  f0 variation ratio below 5x\n";
    ok = false;
  }
  if (!(rc.duration_std <= 1.0)) {
    log << "  random-context duration_std above 1 frame\n";
    ok = false;
  }
  return ok;
}

// ---------------------------------------------------------------------------
// criterion 6: statistics oracles
// ---------------------------------------------------------------------------

double wilcoxon_bruteforce_p(const std::vector<double>& d) {
  const std::size_t n = d.size();
  std::vector<double> mags(n), ranks(n);
  for (std::size_t i = 0; i < n; ++i) mags[i] = std::abs(d[i]);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mags[j] < mags[i]) ++less;
      if (mags[j] == mags[i]) ++equal;
    }
    ranks[i] = less + (equal + 1.0) / 2.0;
  }
  double w_obs = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) w_obs += ranks[i];
  std::size_t le = 0, ge = 0;
  const std::size_t patterns = std::size_t(1) << n;
  for (std::size_t mask = 0; mask < patterns; ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (std::size_t(1) << i)) w += ranks[i];
    if (w <= w_obs + 1e-12) ++le;
    if (w >= w_obs - 1e-12) ++ge;
  }
  return std::min(1.0, 2.0 * std::min(le, ge) / static_cast<double>(patterns));
}

bool criterion6(std::ostream& log) {
  bool ok = true;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> mag(0.05, 5.0);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> tie(0, 3);
  int sets = 0;
  for (int n = 1; n <= 8; ++n) {
    for (int trial = 0; trial < 125; ++trial) {
      std::vector<double> d(n);
      for (int i = 0; i < n; ++i) {
        d[i] = (coin(rng) ? 1 : -1) * mag(rng);
        if (i > 0 && tie(rng) == 0) d[i] = (coin(rng) ? 1 : -1) * std::abs(d[i - 1]);
      }
      ++sets;
      auto r = stats::wilcoxon_signed_rank(d);
      const double expected = wilcoxon_bruteforce_p(d);
      if (!r.exact || std::abs(r.p - expected) > 1e-12) {
        log << "  wilcoxon mismatch at n=" << n << ": got " << r.p << ", oracle "
            << expected << "\n";
        ok = false;
      }
    }
  }
  log << "  wilcoxon exact vs enumeration: " << sets << " magnitude sets\n";

  const double p = stats::binomial_test(180, 300, 0.5);
  log << "  binomial_test(180, 300) = " << p << "\n";
  if (!(p >= 0.0004 && p <= 0.0008)) {
    log << "  binomial p outside [0.0004, 0.0008]\n";
    ok = false;
  }

  for (long long n = 1; n <= 50; ++n)
    for (long long k = 0; k <= n; ++k)
      if (std::abs(stats::binomial_test(k, n) - stats::binomial_test(n - k, n)) >
          1e-12) {
        log << "  binomial symmetry broken at k=" << k << " n=" << n << "\n";
        ok = false;
      }
  return ok;
}

// ---------------------------------------------------------------------------
// criterion 7: DSP checks
// ---------------------------------------------------------------------------

bool criterion7(std::ostream& log) {
  bool ok = true;
  dsp::DspConfig dcfg;
  dsp::F0Config fcfg;

  for (double f : {100.0, 150.0, 220.0, 330.0}) {
    dsp::Waveform w;
    w.sample_rate = dcfg.sample_rate;
    w.samples.resize(dcfg.sample_rate / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i)
      w.samples[i] =
          static_cast<float>(0.5 * std::sin(2.0 * M_PI * f * i / w.sample_rate));
    auto med = dsp::median_voiced_f0(dsp::estimate_f0(w, fcfg));
    if (!med || std::abs(*med - f) / f > 0.025) {
      log << "  pure tone " << f << " Hz estimated as "
          << (med ? std::to_string(*med) : "unvoiced") << "\n";
      ok = false;
    } else {
      log << "  " << f << " Hz -> " << *med << " Hz\n";
    }
  }

  {
    dsp::Waveform silence;
    silence.sample_rate = dcfg.sample_rate;
    silence.samples.assign(8192, 0.0f);
    auto mel = dsp::mel_spectrogram(silence, dcfg);
    const float expected = std::log(static_cast<float>(dcfg.log_floor));
    for (float v : mel.data)
      if (std::abs(v - expected) > 1e-5f) {
        log << "  silence mel deviates from the log floor: " << v << "\n";
        ok = false;
        break;
      }
  }

  {
    dsp::Waveform a, b;
    a.sample_rate = b.sample_rate = dcfg.sample_rate;
    a.samples.assign(1000, 0.1f);
    b.samples.assign(500, -0.1f);
    auto c = stats::concat_with_pause(a, b, 500.0);
    const std::size_t pause = c.samples.size() - a.samples.size() - b.samples.size();
    log << "  pause samples at 500 ms: " << pause << "\n";
    if (pause != static_cast<std::size_t>(dcfg.sample_rate / 2)) ok = false;
  }
  return ok;
}

// ---------------------------------------------------------------------------
// criterion 8: end-to-end pipeline determinism
// ---------------------------------------------------------------------------

bool criterion8(std::ostream& log) {
  const auto dir = work_dir("pipeline");
  dsp::DspConfig dcfg;
  std::vector<testing::ToneUtterance> utts;
  const char* texts[] = {"a", "ab", "b", "ba", "aa", "bb"};
  for (int i = 0; i < 6; ++i) {
    testing::ToneUtterance u;
    u.id = testing::utt_id(1, i + 1);
    u.text = texts[i];
    u.freq = 180.0 + 20.0 * i;
    u.frames = 6 + i % 3;
    utts.push_back(u);
  }
  testing::write_tone_corpus(dir + "/corpus", utts, dcfg);

  auto run_once = [&](const std::string& tag) {
    const std::string base = dir + "/" + tag;
    std::vector<std::string> prep = {"prepare", "--metadata",
                                     dir + "/corpus/metadata.txt", "--wav-dir",
                                     dir + "/corpus/wavs", "--out", base + "/data",
                                     "--seed", "11"};
    if (run_cli(prep) != 0) return false;
    std::vector<std::string> tr = {
        "train", "--data", base + "/data", "--out", base + "/run", "--seed", "3",
        "--set", "train.variant=next", "--set", "train.max_iters=200",
        "--set", "train.batch_size=2", "--set", "train.metrics_interval=10",
        "--set", "model.char_embed_dim=8", "--set", "model.text_gru_dim=12",
        "--set", "model.style_embed_dim=64", "--set", "model.style_tokens=3",
        "--set", "model.style_heads=2", "--set", "model.token_dim=16",
        "--set", "model.ref_gru_dim=24", "--set", "model.attention_dim=16",
        "--set", "model.decoder_gru_dim=48", "--set", "model.max_frames=16",
        "--set", "dsp.griffin_lim_iters=8"};
    if (run_cli(tr) != 0) return false;
    std::vector<std::string> sy = {"synth", "--checkpoint",
                                   base + "/run/checkpoint_final.ctts", "--text",
                                   "ab", "--context",
                                   dir + "/corpus/wavs/LJ001-0002.wav", "--out",
                                   base + "/synth", "--seed", "5"};
    return run_cli(sy) == 0;
  };

  if (!run_once("x") || !run_once("y")) {
    log << "  a pipeline stage failed\n";
    return false;
  }
  bool ok = true;
  for (const char* f : {"run/metrics.jsonl", "synth/mel.ctts", "synth/out.wav"}) {
    if (slurp(dir + "/x/" + f) != slurp(dir + "/y/" + f)) {
      log << "  " << f << " differs between runs\n";
      ok = false;
    } else {
      log << "  " << f << " bit-identical\n";
    }
  }
  return ok;
}

// ---------------------------------------------------------------------------
// criterion 9: variant isolation
// ---------------------------------------------------------------------------

bool criterion9(std::ostream& log) {
  std::vector<testing::ToneUtterance> utts;
  const char* texts[] = {"a", "ab", "b"};
  for (int i = 0; i < 7; ++i) {
    testing::ToneUtterance u;
    u.id = testing::utt_id(1, i + 1);
    u.text = texts[i % 3];
    u.freq = 170.0 + 15.0 * i;
    u.frames = 6 + i % 3;
    utts.push_back(u);
  }
  Config cfg;
  cfg.set("model.char_embed_dim", "8");
  cfg.set("model.text_gru_dim", "12");
  cfg.set("model.style_embed_dim", "64");
  cfg.set("model.style_tokens", "3");
  cfg.set("model.style_heads", "2");
  cfg.set("model.token_dim", "16");
  cfg.set("model.ref_gru_dim", "24");
  cfg.set("model.attention_dim", "16");
  cfg.set("model.decoder_gru_dim", "48");
  cfg.set("train.batch_size", "2");

  auto snapshot = [](model::TtsModel<float>& m, const std::string& prefix) {
    std::vector<std::vector<float>> out;
    for (auto* p : m.params())
      if (p->name.rfind(prefix, 0) == 0) out.push_back(p->value.data);
    return out;
  };

  bool ok = true;
  auto run_case = [&](Variant v, const std::vector<std::string>& frozen,
                      const std::vector<std::string>& trained) {
    Config c = cfg;
    c.set("train.variant", model::variant_name(v));
    c.set("train.max_iters", "5");
    const auto dcfg = dsp::DspConfig::from_config(c);
    auto data = build_pairs(utts, dcfg);
    std::vector<std::string> texts2;
    for (const auto& u : utts) texts2.push_back(u.text);
    auto vocab = model::Vocab::from_texts(texts2);
    model::TtsModel<float> m(model::ModelConfig::from_config(c), vocab, 41);
    std::map<std::string, std::vector<std::vector<float>>> before;
    for (const auto& pfx : frozen) before[pfx] = snapshot(m, pfx);
    std::map<std::string, std::vector<std::vector<float>>> before_trained;
    for (const auto& pfx : trained) before_trained[pfx] = snapshot(m, pfx);
    train::Trainer trainer(m, train::TrainConfig::from_config(c), std::move(data.pairs),
                           std::move(data.ids), std::move(data.universe));
    for (int i = 0; i < 5; ++i) trainer.step();
    for (const auto& pfx : frozen)
      if (snapshot(m, pfx) != before[pfx]) {
        log << "  [" << model::variant_name(v) << "] parameters under '" << pfx
            << "' changed\n";
        ok = false;
      }
    for (const auto& pfx : trained)
      if (snapshot(m, pfx) == before_trained[pfx]) {
        log << "  [" << model::variant_name(v) << "] parameters under '" << pfx
            << "' unexpectedly frozen\n";
        ok = false;
      }
  };

  run_case(Variant::baseline, {"ace.", "ae.", "order_head.", "next_head."},
           {"decoder.", "text_encoder."});
  run_case(Variant::ace_only, {"ae.", "order_head.", "next_head."}, {"ace."});
  log << "  baseline froze ACE/AE/heads; ace_only froze AE/heads\n";
  return ok;
}

struct Criterion {
  int id;
  const char* name;
  std::function<bool(std::ostream&)> fn;
};

}  // namespace

int main(int argc, char** argv) {
  int only = -1;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc)
      only = std::atoi(argv[++i]);
  }

  const std::vector<Criterion> criteria = {
      {1, "gradient suite (all layers + task heads, 32/64-bit)", criterion1},
      {2, "architecture fidelity of the task heads", criterion2},
      {3, "order-swap protocol at p=0.5", criterion3},
      {4, "overfit experiment (10 pairs, next task, 2000 steps)", criterion4},
      {5, "context-variation mechanism (next vs random context)", criterion5},
      {6, "statistics oracles (wilcoxon, binomial)", criterion6},
      {7, "dsp checks (f0 tones, silence mel, 500 ms pause)", criterion7},
      {8, "pipeline determinism (prepare/train/synth twice)", criterion8},
      {9, "variant isolation (baseline, ace_only)", criterion9},
  };

  bool all_ok = true;
  for (const auto& c : criteria) {
    if (only > 0 && c.id != only) continue;
    std::ostringstream log;
    bool ok = false;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ok = c.fn(log);
    } catch (const std::exception& e) {
      log << "  exception: " << e.what() << "\n";
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": " << c.name
              << " (" << std::fixed << std::setprecision(1) << secs << "s)\n"
              << log.str();
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 1;
}
