#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctts/checkpoint.hpp"
#include "ctts/config.hpp"
#include "ctts/corpus.hpp"
#include "ctts/model.hpp"

namespace ctts::train {

using ad::Graph;
using ad::Tensor;
using model::Variant;
using nets::Binding;
using nets::DropoutStream;
using nets::Param;

struct TrainConfig {
  Variant variant = Variant::baseline;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 1e-6;
  double grad_clip_norm = 1.0;
  int batch_size = 4;
  long long max_iters = 1000;
  double task_loss_weight = 1.0;
  double swap_prob = 0.5;
  std::uint64_t seed = 1234;
  long long metrics_interval = 10;
  long long checkpoint_interval = 0;
  long long val_interval = 0;

  static TrainConfig from_config(const Config& c) {
    TrainConfig t;
    t.variant = model::parse_variant(c.get("train.variant"));
    t.lr = c.get_double("train.lr");
    t.beta1 = c.get_double("train.adam_beta1");
    t.beta2 = c.get_double("train.adam_beta2");
    t.eps = c.get_double("train.adam_eps");
    t.weight_decay = c.get_double("train.weight_decay");
    t.grad_clip_norm = c.get_double("train.grad_clip_norm");
    t.batch_size = static_cast<int>(c.get_int("train.batch_size"));
    t.max_iters = c.get_int("train.max_iters");
    t.task_loss_weight = c.get_double("train.task_loss_weight");
    t.swap_prob = c.get_double("train.swap_prob");
    t.seed = c.get_u64("train.seed");
    t.metrics_interval = c.get_int("train.metrics_interval");
    t.checkpoint_interval = c.get_int("train.checkpoint_interval");
    t.val_interval = c.get_int("train.val_interval");
    t.validate();
    return t;
  }

  void validate() const {
    if (lr <= 0) throw std::runtime_error("train.lr must be > 0");
    if (swap_prob < 0 || swap_prob > 1)
      throw std::runtime_error("train.swap_prob must be in [0,1]");
    if (task_loss_weight < 0)
      throw std::runtime_error("train.task_loss_weight must be >= 0");
    if (batch_size < 1) throw std::runtime_error("train.batch_size must be >= 1");
    if (metrics_interval < 1)
      throw std::runtime_error("train.metrics_interval must be >= 1");
  }
};

struct LossBreakdown {
  double mel_mse = 0;
  double stop_bce = 0;
  double task_loss = 0;
  double total = 0;
};

// With probability swap_prob the pair is presented in reversed order with
// label 0, otherwise in original order with label 1.
template <class T>
struct OrderSample {
  T a, b;
  int label = 1;
};

template <class T>
OrderSample<T> order_swap_sample(const T& e_prev, const T& e_curr, double swap_prob,
                                 std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  if (dist(rng) < swap_prob) return {e_curr, e_prev, 0};
  return {e_prev, e_curr, 1};
}

// splitmix64; decouples the per-iteration random streams from one another so
// training can resume mid-run with identical behavior.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 1) + 0x632be59bd9b4e019ull * (c + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

// Scales every gradient by clip/norm when the global L2 norm exceeds the
// clip; returns the pre-clip norm.
inline double clip_gradients(
    std::vector<std::pair<Param<float>*, Tensor<float>>>& grads, double clip) {
  double norm_sq = 0;
  for (const auto& [p, g] : grads)
    for (float v : g.data) norm_sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(norm_sq);
  if (!std::isfinite(norm)) throw std::runtime_error("gradient norm is not finite");
  if (clip > 0 && norm > clip) {
    const float scale = static_cast<float>(clip / norm);
    for (auto& [p, g] : grads)
      for (auto& v : g.data) v *= scale;
  }
  return norm;
}

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps, double weight_decay)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

  // Applies one update to every (param, grad) pair. Gradients are assumed
  // already clipped; coupled weight decay is added here.
  void apply(const std::vector<std::pair<Param<float>*, Tensor<float>>>& grads) {
    for (const auto& [p, g] : grads) {
      Slot& s = slot(*p);
      s.t += 1;
      const float b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
      const float bc1 = 1.0f - std::pow(b1, static_cast<float>(s.t));
      const float bc2 = 1.0f - std::pow(b2, static_cast<float>(s.t));
      for (std::size_t i = 0; i < p->value.data.size(); ++i) {
        float gi = g.data[i] + static_cast<float>(wd_) * p->value.data[i];
        s.m[i] = b1 * s.m[i] + (1.0f - b1) * gi;
        s.v[i] = b2 * s.v[i] + (1.0f - b2) * gi * gi;
        const float mhat = s.m[i] / bc1;
        const float vhat = s.v[i] / bc2;
        p->value.data[i] -=
            static_cast<float>(lr_) * mhat / (std::sqrt(vhat) + static_cast<float>(eps_));
      }
    }
  }

  void save(io::TensorContainer& c, const std::vector<Param<float>*>& params) const {
    for (auto* p : params) {
      auto it = slots_.find(p->name);
      if (it == slots_.end()) continue;
      const Slot& s = it->second;
      c.put("adam/m/" + p->name, p->value.shape, s.m);
      c.put("adam/v/" + p->name, p->value.shape, s.v);
      c.put_scalar("adam/t/" + p->name, static_cast<double>(s.t));
    }
  }

  void load(const io::TensorContainer& c, const std::vector<Param<float>*>& params) {
    slots_.clear();
    for (auto* p : params) {
      if (!c.contains("adam/m/" + p->name)) continue;
      Slot s;
      s.m = c.get("adam/m/" + p->name).data;
      s.v = c.get("adam/v/" + p->name).data;
      s.t = static_cast<long long>(c.get_scalar("adam/t/" + p->name));
      if (s.m.size() != p->value.data.size() || s.v.size() != p->value.data.size())
        throw std::runtime_error("checkpoint moments mismatch for '" + p->name + "'");
      slots_.emplace(p->name, std::move(s));
    }
  }

 private:
  struct Slot {
    std::vector<float> m, v;
    long long t = 0;
  };

  Slot& slot(Param<float>& p) {
    auto it = slots_.find(p.name);
    if (it == slots_.end()) {
      Slot s;
      s.m.assign(p.value.data.size(), 0.0f);
      s.v.assign(p.value.data.size(), 0.0f);
      it = slots_.emplace(p.name, std::move(s)).first;
    }
    return it->second;
  }

  double lr_, b1_, b2_, eps_, wd_;
  std::map<std::string, Slot> slots_;
};

// One training example: consecutive utterances with cached mel features.
struct PairFeatures {
  std::string prev_id, curr_id;
  std::string text;  // utterance N transcript
  Tensor<float> mel_prev, mel_curr;
};

struct StepResult {
  LossBreakdown losses;
  double grad_norm = 0;
};

class Trainer {
 public:
  Trainer(model::TtsModel<float>& m, TrainConfig cfg, std::vector<PairFeatures> pairs,
          std::vector<std::string> context_universe_ids,
          std::map<std::string, Tensor<float>> context_universe)
      : model_(m),
        cfg_(cfg),
        pairs_(std::move(pairs)),
        universe_ids_(std::move(context_universe_ids)),
        universe_(std::move(context_universe)),
        opt_(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay) {
    if (pairs_.empty()) throw std::runtime_error("empty training set");
    steps_per_epoch_ =
        (static_cast<long long>(pairs_.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
  }

  long long iteration() const { return iter_; }
  void set_iteration(long long it) { iter_ = it; }
  Adam& optimizer() { return opt_; }
  const TrainConfig& config() const { return cfg_; }

  // Deterministic batch for a given iteration: pairs are reshuffled every
  // epoch with an epoch-derived seed, then consumed in order.
  std::vector<const PairFeatures*> batch_for(long long iter) const {
    const long long epoch = iter / steps_per_epoch_;
    const long long pos_in_epoch = iter % steps_per_epoch_;
    std::vector<std::size_t> order(pairs_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(epoch), 0xBA));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<const PairFeatures*> batch;
    const std::size_t begin = static_cast<std::size_t>(pos_in_epoch) * cfg_.batch_size;
    for (std::size_t i = begin; i < begin + cfg_.batch_size && i < order.size(); ++i)
      batch.push_back(&pairs_[order[i]]);
    return batch;
  }

  // Context mel for an item: the true predecessor, or for the random-context
  // variant a distractor drawn uniformly from all utterances except N-1,
  // redrawn each epoch and fixed within it.
  const Tensor<float>& context_mel(const PairFeatures& pf, long long iter) const {
    if (cfg_.variant != Variant::random_context) return pf.mel_prev;
    const long long epoch = iter / steps_per_epoch_;
    const std::size_t pair_index = static_cast<std::size_t>(&pf - pairs_.data());
    std::mt19937_64 rng(mix_seed(cfg_.seed, static_cast<std::uint64_t>(epoch),
                                 0xC0000000ull + pair_index));
    std::uniform_int_distribution<std::size_t> dist(0, universe_ids_.size() - 1);
    for (int tries = 0; tries < 1024; ++tries) {
      const std::string& id = universe_ids_[dist(rng)];
      if (id != pf.prev_id) return universe_.at(id);
    }
    throw std::runtime_error("random context: universe has no alternative to " +
                             pf.prev_id);
  }

  struct ForwardOut {
    std::unique_ptr<Graph<float>> graph;
    std::unique_ptr<Binding<float>> bind;
    int loss_node = -1;
    LossBreakdown losses;
  };

  // Teacher-forced multi-task forward over a batch. In eval mode batchnorm
  // uses running statistics and the head dropouts are identities; the prenet
  // dropout stays active in both modes.
  ForwardOut forward_batch(const std::vector<const PairFeatures*>& batch, bool train_mode,
                           long long iter) {
    if (batch.empty()) throw std::runtime_error("forward_batch: empty batch");
    ForwardOut out;
    out.graph = std::make_unique<Graph<float>>();
    auto& g = *out.graph;
    out.bind = std::make_unique<Binding<float>>(g, train_mode);
    auto& bind = *out.bind;
    DropoutStream drop(mix_seed(cfg_.seed, static_cast<std::uint64_t>(iter),
                                train_mode ? 0xD0 : 0xE0));
    std::mt19937_64 swap_rng(
        mix_seed(cfg_.seed, static_cast<std::uint64_t>(iter), train_mode ? 0x5A : 0x5B));

    std::vector<int> sse_terms;       // per-item sums of squared mel error
    std::vector<int> stop_terms;      // per-item summed stop BCE
    std::size_t mel_count = 0, frame_count = 0;
    std::vector<int> ace_rows, ae_rows;
    std::vector<OrderSample<int>> order_samples;

    for (const PairFeatures* pf : batch) {
      int enc = model_.encode_text(bind, pf->text);
      int style = -1;
      int e_ctx = -1;
      if (model::uses_context(cfg_.variant)) {
        const Tensor<float>& ctx = context_mel(*pf, iter);
        e_ctx = model_.ace_embed(bind, g.constant(ctx));
        style = e_ctx;
      }
      auto dec = model_.decode_teacher_forced(bind, enc, style, pf->mel_curr, drop);

      // masked-equivalent losses: every item contributes only its own frames
      int target = g.constant(pf->mel_curr);
      int diff = nets::sub(g, dec.mel, target);
      sse_terms.push_back(ad::sum(g, ad::mul(g, diff, diff)));
      mel_count += pf->mel_curr.numel();

      const int T = dec.n_frames;
      Tensor<float> stop_labels = Tensor<float>::zeros({T, 1});
      stop_labels.data[T - 1] = 1.0f;  // positive only at the final frame
      int labels = g.constant(std::move(stop_labels));
      // bce(z,y) = softplus(z) - z*y, summed over the item's frames
      int bce = nets::sub(g, ad::softplus(g, dec.stops), ad::mul(g, dec.stops, labels));
      stop_terms.push_back(ad::sum(g, bce));
      frame_count += static_cast<std::size_t>(T);

      if (model::trains_order_task(cfg_.variant)) {
        int e_curr = model_.ae_embed(bind, g.constant(pf->mel_curr));
        order_samples.push_back(
            order_swap_sample<int>(e_ctx, e_curr, cfg_.swap_prob, swap_rng));
      } else if (model::trains_next_task(cfg_.variant)) {
        ace_rows.push_back(e_ctx);
        ae_rows.push_back(model_.ae_embed(bind, g.constant(pf->mel_curr)));
      }
    }

    auto sum_nodes = [&](const std::vector<int>& nodes) {
      int acc = nodes[0];
      for (std::size_t i = 1; i < nodes.size(); ++i) acc = ad::add(g, acc, nodes[i]);
      return acc;
    };

    int mel_mse = ad::mul(g, sum_nodes(sse_terms),
                          nets::scalar_const(g, 1.0f / static_cast<float>(mel_count)));
    int stop_bce = ad::mul(g, sum_nodes(stop_terms),
                           nets::scalar_const(g, 1.0f / static_cast<float>(frame_count)));

    int task = -1;
    if (!order_samples.empty()) {
      std::vector<int> rows;
      Tensor<float> labels = Tensor<float>::zeros({static_cast<int>(order_samples.size()), 1});
      for (std::size_t i = 0; i < order_samples.size(); ++i) {
        rows.push_back(ad::concat(g, {order_samples[i].a, order_samples[i].b}, 1));
        labels.data[i] = static_cast<float>(order_samples[i].label);
      }
      int x = rows.size() == 1 ? rows[0] : ad::concat(g, rows, 0);  // [B, 512]
      int logits = model_.order_head.forward(bind, x, train_mode, drop);
      int lab = g.constant(std::move(labels));
      int bce = nets::sub(g, ad::softplus(g, logits), ad::mul(g, logits, lab));
      task = ad::mean(g, bce);
    } else if (!ace_rows.empty()) {
      int x = ace_rows.size() == 1 ? ace_rows[0] : ad::concat(g, ace_rows, 0);
      int y = ae_rows.size() == 1 ? ae_rows[0] : ad::concat(g, ae_rows, 0);
      int pred = model_.next_head.forward(bind, x, train_mode, drop);
      int diff = nets::sub(g, pred, y);
      task = ad::mean(g, ad::mul(g, diff, diff));
    }

    int total = ad::add(g, mel_mse, stop_bce);
    if (task >= 0) {
      total = ad::add(g, total,
                      ad::mul(g, task, nets::scalar_const(
                                           g, static_cast<float>(cfg_.task_loss_weight))));
    }

    out.losses.mel_mse = g.value(mel_mse).data[0];
    out.losses.stop_bce = g.value(stop_bce).data[0];
    out.losses.task_loss = task >= 0 ? g.value(task).data[0] : 0.0;
    out.losses.total = g.value(total).data[0];
    for (auto [name, v] : {std::pair<const char*, double>{"mel_mse", out.losses.mel_mse},
                           {"stop_bce", out.losses.stop_bce},
                           {"task_loss", out.losses.task_loss},
                           {"total", out.losses.total}}) {
      if (!std::isfinite(v))
        throw std::runtime_error(std::string("loss term '") + name + "' is not finite");
    }
    out.loss_node = total;
    return out;
  }

  LossBreakdown compute_loss(const std::vector<const PairFeatures*>& batch,
                             bool train_mode) {
    return forward_batch(batch, train_mode, iter_).losses;
  }

  StepResult step() {
    auto batch = batch_for(iter_);
    auto fwd = forward_batch(batch, /*train_mode=*/true, iter_);
    fwd.graph->backward(fwd.loss_node);

    std::vector<std::pair<Param<float>*, Tensor<float>>> grads;
    for (Param<float>* p : fwd.bind->bound())
      grads.emplace_back(p, fwd.bind->grad_of(*p));
    const double norm = clip_gradients(grads, cfg_.grad_clip_norm);
    opt_.apply(grads);
    ++iter_;
    return {fwd.losses, norm};
  }

  LossBreakdown evaluate(const std::vector<PairFeatures>& val_pairs) {
    if (val_pairs.empty()) throw std::runtime_error("evaluate: empty validation set");
    // accumulate sums over fixed-order batches, then renormalize
    double mel_sse = 0, stop_sum = 0, task_sum = 0;
    std::size_t mel_n = 0, frames = 0, batches = 0;
    for (std::size_t at = 0; at < val_pairs.size(); at += cfg_.batch_size) {
      std::vector<const PairFeatures*> batch;
      for (std::size_t i = at; i < at + cfg_.batch_size && i < val_pairs.size(); ++i)
        batch.push_back(&val_pairs[i]);
      auto fwd = forward_batch(batch, /*train_mode=*/false, iter_);
      std::size_t bm = 0, bf = 0;
      for (auto* pf : batch) {
        bm += pf->mel_curr.numel();
        bf += static_cast<std::size_t>(pf->mel_curr.rows());
      }
      mel_sse += fwd.losses.mel_mse * static_cast<double>(bm);
      stop_sum += fwd.losses.stop_bce * static_cast<double>(bf);
      task_sum += fwd.losses.task_loss;
      mel_n += bm;
      frames += bf;
      ++batches;
    }
    LossBreakdown out;
    out.mel_mse = mel_sse / static_cast<double>(mel_n);
    out.stop_bce = stop_sum / static_cast<double>(frames);
    out.task_loss = task_sum / static_cast<double>(batches);
    out.total = out.mel_mse + out.stop_bce + cfg_.task_loss_weight * out.task_loss;
    return out;
  }

 private:
  model::TtsModel<float>& model_;
  TrainConfig cfg_;
  std::vector<PairFeatures> pairs_;
  std::vector<std::string> universe_ids_;
  std::map<std::string, Tensor<float>> universe_;
  Adam opt_;
  long long iter_ = 0;
  long long steps_per_epoch_ = 1;
};

// ---- checkpointing -----------------------------------------------------------

inline void save_checkpoint(const std::string& path, model::TtsModel<float>& m,
                            Adam& opt, long long iteration, const Config& cfg) {
  io::TensorContainer c;
  c.put_string("meta/config", cfg.to_string());
  c.put_string("meta/vocab", m.vocab.to_text());
  c.put_scalar("meta/iter", static_cast<double>(iteration));
  m.save_params(c);
  opt.save(c, m.params());
  c.save(path);
}

struct LoadedCheckpoint {
  std::unique_ptr<model::TtsModel<float>> model;
  Config config;
  long long iteration = 0;
  io::TensorContainer container;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  LoadedCheckpoint out;
  out.container = io::TensorContainer::load(path);
  out.config = Config::from_string(out.container.get_string("meta/config"));
  out.iteration = static_cast<long long>(out.container.get_scalar("meta/iter"));
  auto vocab = model::Vocab::from_text(out.container.get_string("meta/vocab"));
  auto mc = model::ModelConfig::from_config(out.config);
  out.model = std::make_unique<model::TtsModel<float>>(mc, vocab, /*seed=*/0);
  out.model->load_params(out.container);
  return out;
}

// ---- feature cache --------------------------------------------------------------

inline std::string mel_key(const std::string& utterance_id) {
  return "mel/" + utterance_id;
}

inline Tensor<float> mel_from_cache(const io::TensorContainer& cache,
                                    const std::string& utterance_id) {
  const auto& e = cache.get(mel_key(utterance_id));
  if (e.shape.size() != 2)
    throw std::runtime_error("feature cache: mel '" + utterance_id + "' is not 2-D");
  return Tensor<float>(e.shape, e.data);
}

struct Dataset {
  std::vector<PairFeatures> pairs;
  std::vector<std::string> universe_ids;
  std::map<std::string, Tensor<float>> universe;
};

// A manifest line whose predecessor field is set defines one bigram pair.
inline Dataset load_dataset(const std::string& manifest_path,
                            const io::TensorContainer& cache) {
  Dataset d;
  auto entries = corpus::parse_manifest_file(manifest_path);
  auto add_universe = [&](const std::string& id) {
    if (d.universe.count(id)) return;
    d.universe.emplace(id, mel_from_cache(cache, id));
    d.universe_ids.push_back(id);
  };
  for (const auto& e : entries) {
    const std::string& id = e.record.id.raw;
    add_universe(id);
    if (e.prev_id.empty()) continue;
    add_universe(e.prev_id);
    PairFeatures pf;
    pf.prev_id = e.prev_id;
    pf.curr_id = id;
    pf.text = e.record.text;
    pf.mel_prev = mel_from_cache(cache, e.prev_id);
    pf.mel_curr = mel_from_cache(cache, id);
    d.pairs.push_back(std::move(pf));
  }
  std::sort(d.universe_ids.begin(), d.universe_ids.end());
  return d;
}

// ---- full training run ------------------------------------------------------------

struct RunResult {
  std::string checkpoint_path;
  std::string metrics_path;
  LossBreakdown final_losses;
};

inline nlohmann::json metrics_line(long long iter, const LossBreakdown& l,
                                   const std::string& split) {
  return nlohmann::json{{"iter", iter},
                        {"mel_mse", l.mel_mse},
                        {"stop_bce", l.stop_bce},
                        {"task_loss", l.task_loss},
                        {"total", l.total},
                        {"split", split}};
}

inline RunResult run_training(const Config& cfg, const std::string& train_manifest,
                              const std::string& val_manifest,
                              const std::string& cache_path, const std::string& out_dir) {
  const TrainConfig tcfg = TrainConfig::from_config(cfg);
  std::filesystem::create_directories(out_dir);

  auto cache = io::TensorContainer::load(cache_path);
  auto data = load_dataset(train_manifest, cache);
  if (data.pairs.empty()) throw std::runtime_error("empty training set");
  std::vector<PairFeatures> val_pairs;
  if (!val_manifest.empty()) {
    auto v = load_dataset(val_manifest, cache);
    val_pairs = std::move(v.pairs);
  }

  auto vocab = model::Vocab::from_text(cache.get_string("meta/vocab"));
  auto mcfg = model::ModelConfig::from_config(cfg);
  auto m = std::make_unique<model::TtsModel<float>>(mcfg, vocab, tcfg.seed);
  Trainer trainer(*m, tcfg, std::move(data.pairs), std::move(data.universe_ids),
                  std::move(data.universe));

  const std::string metrics_path = out_dir + "/metrics.jsonl";
  std::ofstream metrics(metrics_path);
  if (!metrics) throw std::runtime_error("cannot write metrics: " + metrics_path);

  // step-0 line: losses of the first batch before any update
  LossBreakdown last = trainer.compute_loss(trainer.batch_for(0), true);
  metrics << metrics_line(0, last, "train") << "\n";

  for (long long it = 1; it <= tcfg.max_iters; ++it) {
    auto res = trainer.step();
    last = res.losses;
    if (it % tcfg.metrics_interval == 0)
      metrics << metrics_line(it, last, "train") << "\n";
    if (tcfg.val_interval > 0 && !val_pairs.empty() && it % tcfg.val_interval == 0)
      metrics << metrics_line(it, trainer.evaluate(val_pairs), "val") << "\n";
    if (tcfg.checkpoint_interval > 0 && it % tcfg.checkpoint_interval == 0) {
      std::ostringstream name;
      name << out_dir << "/checkpoint_" << std::setw(6) << std::setfill('0') << it
           << ".ctts";
      save_checkpoint(name.str(), *m, trainer.optimizer(), it, cfg);
    }
  }

  RunResult out;
  out.checkpoint_path = out_dir + "/checkpoint_final.ctts";
  save_checkpoint(out.checkpoint_path, *m, trainer.optimizer(), tcfg.max_iters, cfg);
  out.metrics_path = metrics_path;
  out.final_losses = last;
  metrics.close();
  return out;
}

}  // namespace ctts::train
