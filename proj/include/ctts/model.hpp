#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctts/checkpoint.hpp"
#include "ctts/config.hpp"
#include "ctts/dsp.hpp"
#include "ctts/nets.hpp"

namespace ctts::model {

using ad::Graph;
using ad::Tensor;
using nets::Binding;
using nets::DropoutStream;
using nets::Param;

enum class Variant { baseline, ace_only, order, next, random_context };

inline Variant parse_variant(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "ace_only") return Variant::ace_only;
  if (s == "order") return Variant::order;
  if (s == "next") return Variant::next;
  if (s == "random_context") return Variant::random_context;
  throw std::runtime_error("unknown variant: '" + s + "'");
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::ace_only: return "ace_only";
    case Variant::order: return "order";
    case Variant::next: return "next";
    case Variant::random_context: return "random_context";
  }
  return "?";
}

inline bool uses_context(Variant v) { return v != Variant::baseline; }
inline bool trains_order_task(Variant v) { return v == Variant::order; }
inline bool trains_next_task(Variant v) {
  return v == Variant::next || v == Variant::random_context;
}

// Character inventory, one symbol per line, index = line number. Text is
// lower-cased before lookup; punctuation is kept as-is.
class Vocab {
 public:
  Vocab() { lookup_.fill(-1); }

  static Vocab from_symbols(const std::vector<char>& symbols) {
    Vocab v;
    for (char c : symbols) v.add(c);
    return v;
  }

  static Vocab from_texts(const std::vector<std::string>& texts) {
    std::array<bool, 256> seen{};
    for (const auto& t : texts)
      for (unsigned char c : t)
        seen[std::tolower(c)] = true;
    Vocab v;
    for (int c = 0; c < 256; ++c)
      if (seen[c]) v.add(static_cast<char>(c));
    return v;
  }

  void add(char c) {
    const auto u = static_cast<unsigned char>(c);
    if (lookup_[u] >= 0) return;
    lookup_[u] = static_cast<int>(symbols_.size());
    symbols_.push_back(c);
  }

  int size() const { return static_cast<int>(symbols_.size()); }

  std::vector<int> encode(const std::string& text) const {
    if (text.empty()) throw std::runtime_error("empty text");
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) {
      const int id = lookup_[std::tolower(c)];
      if (id < 0)
        throw std::runtime_error(std::string("unknown character '") +
                                 static_cast<char>(c) + "' in text");
      ids.push_back(id);
    }
    return ids;
  }

  std::string to_text() const {
    std::string out;
    for (char c : symbols_) {
      out.push_back(c);
      out.push_back('\n');
    }
    return out;
  }

  static Vocab from_text(const std::string& text) {
    Vocab v;
    std::string line;
    std::istringstream in(text);
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.size() != 1)
        throw std::runtime_error("vocab: each line must hold exactly one character");
      v.add(line[0]);
    }
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocab: " + path);
    out << to_text();
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open vocab: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
  }

 private:
  std::vector<char> symbols_;
  std::array<int, 256> lookup_;
};

struct ModelConfig {
  int n_mels = 80;
  int char_embed_dim = 64;
  int text_gru_dim = 128;       // per direction
  int style_embed_dim = 256;
  int style_tokens = 10;
  int style_heads = 4;
  int token_dim = 128;
  bool token_tanh = true;
  int ref_gru_dim = 128;
  int attention_dim = 128;
  int decoder_gru_dim = 512;
  double dropout = 0.5;
  bool inject_at_encoder = false;  // alternative conditioning point
  double stop_threshold = 0.5;
  int max_frames = 1000;

  static ModelConfig from_config(const Config& c) {
    ModelConfig m;
    m.n_mels = static_cast<int>(c.get_int("dsp.n_mels"));
    m.char_embed_dim = static_cast<int>(c.get_int("model.char_embed_dim"));
    m.text_gru_dim = static_cast<int>(c.get_int("model.text_gru_dim"));
    m.style_embed_dim = static_cast<int>(c.get_int("model.style_embed_dim"));
    m.style_tokens = static_cast<int>(c.get_int("model.style_tokens"));
    m.style_heads = static_cast<int>(c.get_int("model.style_heads"));
    m.token_dim = static_cast<int>(c.get_int("model.token_dim"));
    m.token_tanh = c.get_bool("model.token_tanh");
    m.ref_gru_dim = static_cast<int>(c.get_int("model.ref_gru_dim"));
    m.attention_dim = static_cast<int>(c.get_int("model.attention_dim"));
    m.decoder_gru_dim = static_cast<int>(c.get_int("model.decoder_gru_dim"));
    m.dropout = c.get_double("model.dropout");
    const std::string& inj = c.get("model.context_injection");
    if (inj == "decoder") m.inject_at_encoder = false;
    else if (inj == "encoder") m.inject_at_encoder = true;
    else throw std::runtime_error("model.context_injection must be decoder|encoder");
    m.stop_threshold = c.get_double("model.stop_threshold");
    m.max_frames = static_cast<int>(c.get_int("model.max_frames"));
    return m;
  }

  int encoder_out_dim() const {
    return 2 * text_gru_dim + (inject_at_encoder ? style_embed_dim : 0);
  }
};

template <class Real>
Tensor<Real> mel_to_tensor(const dsp::MelSpectrogram& m) {
  Tensor<Real> t = Tensor<Real>::zeros({m.n_frames, m.n_mels});
  for (std::size_t i = 0; i < m.data.size(); ++i)
    t.data[i] = static_cast<Real>(m.data[i]);
  return t;
}

template <class Real>
dsp::MelSpectrogram tensor_to_mel(const Tensor<Real>& t, int hop, int sample_rate,
                                  double log_floor) {
  if (t.rank() != 2) throw std::runtime_error("mel tensor must be [T,M]");
  dsp::MelSpectrogram m;
  m.n_frames = t.rows();
  m.n_mels = t.cols();
  m.hop = hop;
  m.sample_rate = sample_rate;
  m.data.resize(t.numel());
  const float lo = static_cast<float>(std::log(log_floor));
  for (std::size_t i = 0; i < t.data.size(); ++i)
    m.data[i] = std::max(lo, static_cast<float>(t.data[i]));
  return m;
}

// Character embeddings through a bidirectional GRU; outputs L x 2H.
template <class Real>
struct TextEncoder {
  Param<Real> embed;  // [V, E]
  nets::GruCell<Real> fwd, bwd;

  TextEncoder() = default;
  TextEncoder(int vocab_size, const ModelConfig& cfg, std::mt19937_64& rng) {
    embed.name = "text_encoder.embed";
    embed.value = ad::normal_tensor<Real>({vocab_size, cfg.char_embed_dim}, Real(0),
                                          Real(0.5), rng);
    fwd = nets::GruCell<Real>("text_encoder.fwd", cfg.char_embed_dim, cfg.text_gru_dim, rng);
    bwd = nets::GruCell<Real>("text_encoder.bwd", cfg.char_embed_dim, cfg.text_gru_dim, rng);
  }

  int forward(Binding<Real>& bind, const std::vector<int>& ids) {
    auto& g = bind.graph();
    const int L = static_cast<int>(ids.size());
    int emb = ad::embedding_lookup(g, bind(embed), ids);  // [L, E]
    const int E = g.value(emb).cols();
    std::vector<int> steps(L);
    for (int t = 0; t < L; ++t)
      steps[t] = ad::slice(g, emb, {t, 0}, {1, E});
    std::vector<int> hf(L), hb(L);
    int h = fwd.zero_state(g);
    for (int t = 0; t < L; ++t) hf[t] = h = fwd.step(bind, steps[t], h);
    h = bwd.zero_state(g);
    for (int t = L - 1; t >= 0; --t) hb[t] = h = bwd.step(bind, steps[t], h);
    int f = L == 1 ? hf[0] : ad::concat(g, hf, 0);  // [L, H]
    int b = L == 1 ? hb[0] : ad::concat(g, hb, 0);
    return ad::concat(g, {f, b}, 1);  // [L, 2H]
  }

  void collect(std::vector<Param<Real>*>& out) {
    out.push_back(&embed);
    fwd.collect(out);
    bwd.collect(out);
  }
};

// Binary order classifier over two concatenated style embeddings:
// [512,256],[256,128],[128,64],[64,1] with ReLU and batchnorm between
// layers and dropout before the output layer. Emits the pre-sigmoid logit.
template <class Real>
struct OrderHead {
  nets::Linear<Real> l1, l2, l3, l4;
  nets::BatchNorm<Real> bn1, bn2, bn3;
  double dropout_p = 0.5;

  OrderHead() = default;
  OrderHead(int emb_dim, double dropout, std::mt19937_64& rng) : dropout_p(dropout) {
    l1 = nets::Linear<Real>("order_head.l1", 2 * emb_dim, 256, rng);
    l2 = nets::Linear<Real>("order_head.l2", 256, 128, rng);
    l3 = nets::Linear<Real>("order_head.l3", 128, 64, rng);
    l4 = nets::Linear<Real>("order_head.l4", 64, 1, rng);
    bn1 = nets::BatchNorm<Real>("order_head.bn1", 256);
    bn2 = nets::BatchNorm<Real>("order_head.bn2", 128);
    bn3 = nets::BatchNorm<Real>("order_head.bn3", 64);
  }

  int forward(Binding<Real>& bind, int x, bool train, DropoutStream& drop) {
    auto& g = bind.graph();
    int h = bn1.forward(bind, ad::relu(g, l1.forward(bind, x)), train);
    h = bn2.forward(bind, ad::relu(g, l2.forward(bind, h)), train);
    h = bn3.forward(bind, ad::relu(g, l3.forward(bind, h)), train);
    h = ad::dropout(g, h, dropout_p, train, drop.next());
    return l4.forward(bind, h);  // [N, 1]
  }

  void collect(std::vector<Param<Real>*>& out) {
    l1.collect(out); l2.collect(out); l3.collect(out); l4.collect(out);
    bn1.collect(out); bn2.collect(out); bn3.collect(out);
  }

  void collect_state(std::vector<std::pair<std::string, std::vector<Real>*>>& out) {
    bn1.collect_state(out);
    bn2.collect_state(out);
    bn3.collect_state(out);
  }
};

// Embedding regressor predicting utterance N's embedding from N-1's:
// [256,128],[128,64],[64,64],[64,128],[128,256] with ReLU and batchnorm,
// dropout after the middle layer.
template <class Real>
struct NextHead {
  nets::Linear<Real> l1, l2, l3, l4, l5;
  nets::BatchNorm<Real> bn1, bn2, bn3, bn4;
  double dropout_p = 0.5;

  NextHead() = default;
  NextHead(int emb_dim, double dropout, std::mt19937_64& rng) : dropout_p(dropout) {
    l1 = nets::Linear<Real>("next_head.l1", emb_dim, 128, rng);
    l2 = nets::Linear<Real>("next_head.l2", 128, 64, rng);
    l3 = nets::Linear<Real>("next_head.l3", 64, 64, rng);
    l4 = nets::Linear<Real>("next_head.l4", 64, 128, rng);
    l5 = nets::Linear<Real>("next_head.l5", 128, emb_dim, rng);
    bn1 = nets::BatchNorm<Real>("next_head.bn1", 128);
    bn2 = nets::BatchNorm<Real>("next_head.bn2", 64);
    bn3 = nets::BatchNorm<Real>("next_head.bn3", 64);
    bn4 = nets::BatchNorm<Real>("next_head.bn4", 128);
  }

  int forward(Binding<Real>& bind, int x, bool train, DropoutStream& drop) {
    auto& g = bind.graph();
    int h = bn1.forward(bind, ad::relu(g, l1.forward(bind, x)), train);
    h = bn2.forward(bind, ad::relu(g, l2.forward(bind, h)), train);
    h = bn3.forward(bind, ad::relu(g, l3.forward(bind, h)), train);
    h = ad::dropout(g, h, dropout_p, train, drop.next());
    h = bn4.forward(bind, ad::relu(g, l4.forward(bind, h)), train);
    return l5.forward(bind, h);  // [N, emb_dim]
  }

  void collect(std::vector<Param<Real>*>& out) {
    l1.collect(out); l2.collect(out); l3.collect(out); l4.collect(out); l5.collect(out);
    bn1.collect(out); bn2.collect(out); bn3.collect(out); bn4.collect(out);
  }

  void collect_state(std::vector<std::pair<std::string, std::vector<Real>*>>& out) {
    bn1.collect_state(out);
    bn2.collect_state(out);
    bn3.collect_state(out);
    bn4.collect_state(out);
  }
};

// Attention decoder. Per step the previous mel frame runs through the prenet
// (dropout active in both train and eval), is concatenated with the style
// embedding (decoder-input conditioning) and the additive-attention context,
// and updates a GRU whose state feeds the mel and stop heads.
template <class Real>
struct Decoder {
  nets::Linear<Real> prenet1, prenet2;
  Param<Real> attn_Wq, attn_Wk, attn_b, attn_v;
  nets::GruCell<Real> gru;
  nets::Linear<Real> mel_head, stop_head;
  int n_mels = 80;
  int enc_dim = 256;
  int style_dim = 256;  // 0 when conditioning is at the encoder
  double dropout_p = 0.5;

  Decoder() = default;
  Decoder(const ModelConfig& cfg, std::mt19937_64& rng)
      : n_mels(cfg.n_mels),
        enc_dim(cfg.encoder_out_dim()),
        style_dim(cfg.inject_at_encoder ? 0 : cfg.style_embed_dim),
        dropout_p(cfg.dropout) {
    prenet1 = nets::Linear<Real>("decoder.prenet1", cfg.n_mels, 256, rng);
    prenet2 = nets::Linear<Real>("decoder.prenet2", 256, 128, rng);
    const int A = cfg.attention_dim;
    const int H = cfg.decoder_gru_dim;
    attn_Wq.name = "decoder.attn.Wq";
    attn_Wq.value = nets::detail::fan_in_init<Real>({H, A}, H, rng);
    attn_Wk.name = "decoder.attn.Wk";
    attn_Wk.value = nets::detail::fan_in_init<Real>({enc_dim, A}, enc_dim, rng);
    attn_b.name = "decoder.attn.b";
    attn_b.value = Tensor<Real>::zeros({A});
    attn_v.name = "decoder.attn.v";
    attn_v.value = nets::detail::fan_in_init<Real>({A, 1}, A, rng);
    gru = nets::GruCell<Real>("decoder.gru", 128 + style_dim + enc_dim, H, rng);
    mel_head = nets::Linear<Real>("decoder.mel_head", H, cfg.n_mels, rng);
    stop_head = nets::Linear<Real>("decoder.stop_head", H, 1, rng);
  }

  struct Out {
    int mel = -1;        // [T, n_mels]
    int stops = -1;      // [T, 1] pre-sigmoid logits
    int alignment = -1;  // [T, L]
    int n_frames = 0;
  };

  // enc: [L, enc_dim]; style: [1, style_dim] node or -1 (encoder conditioning).
  // target: required for teacher forcing.
  Out decode(Binding<Real>& bind, int enc, int style, const Tensor<Real>* target,
             bool teacher_forced, int max_frames, double stop_threshold,
             DropoutStream& drop) {
    auto& g = bind.graph();
    if (teacher_forced && target == nullptr)
      throw std::runtime_error("decode: teacher forcing requires a target mel");
    if (!teacher_forced && max_frames < 1)
      throw std::runtime_error("decode: max_frames must be >= 1");
    const auto& E = g.value(enc);
    if (E.rank() != 2 || E.cols() != enc_dim)
      throw std::runtime_error("decode: encoder outputs have dim " +
                               std::to_string(E.cols()) + ", expected " +
                               std::to_string(enc_dim));
    const int L = E.rows();
    const int T = teacher_forced ? target->rows() : max_frames;

    const int keys = ad::add(g, ad::matmul(g, enc, bind(attn_Wk)), bind(attn_b));
    const double logit_threshold =
        std::log(stop_threshold / (1.0 - stop_threshold));

    int state = gru.zero_state(g);
    int prev_frame = g.constant(Tensor<Real>::zeros({1, n_mels}));
    std::vector<int> mel_rows, stop_rows, align_rows;
    for (int t = 0; t < T; ++t) {
      // prenet with always-on dropout
      int p = ad::relu(g, prenet1.forward(bind, prev_frame));
      p = ad::dropout(g, p, dropout_p, true, drop.next());
      p = ad::relu(g, prenet2.forward(bind, p));
      p = ad::dropout(g, p, dropout_p, true, drop.next());

      int q = ad::matmul(g, state, bind(attn_Wq));        // [1, A]
      int scores = ad::matmul(g, ad::tanh_op(g, ad::add(g, keys, q)), bind(attn_v));
      int align = ad::softmax(g, ad::transpose(g, scores), 1);  // [1, L]
      int ctx = ad::matmul(g, align, enc);                      // [1, enc_dim]

      int x = style >= 0 ? ad::concat(g, {p, style, ctx}, 1)
                         : ad::concat(g, {p, ctx}, 1);
      state = gru.step(bind, x, state);

      int frame = mel_head.forward(bind, state);
      int stop = stop_head.forward(bind, state);
      mel_rows.push_back(frame);
      stop_rows.push_back(stop);
      align_rows.push_back(align);

      if (teacher_forced) {
        Tensor<Real> row = Tensor<Real>::zeros({1, n_mels});
        for (int m = 0; m < n_mels; ++m) row.data[m] = target->at(t, m);
        prev_frame = g.constant(std::move(row));
      } else {
        prev_frame = frame;
        if (static_cast<double>(g.value(stop).data[0]) > logit_threshold) break;
      }
    }

    Out out;
    out.n_frames = static_cast<int>(mel_rows.size());
    out.mel = mel_rows.size() == 1 ? mel_rows[0] : ad::concat(g, mel_rows, 0);
    out.stops = stop_rows.size() == 1 ? stop_rows[0] : ad::concat(g, stop_rows, 0);
    out.alignment =
        align_rows.size() == 1 ? align_rows[0] : ad::concat(g, align_rows, 0);
    return out;
  }

  void collect(std::vector<Param<Real>*>& out) {
    prenet1.collect(out);
    prenet2.collect(out);
    out.push_back(&attn_Wq);
    out.push_back(&attn_Wk);
    out.push_back(&attn_b);
    out.push_back(&attn_v);
    gru.collect(out);
    mel_head.collect(out);
    stop_head.collect(out);
  }
};

template <class Real>
struct SynthResult {
  dsp::MelSpectrogram mel;
  std::vector<float> stop_logits;
  Tensor<Real> alignment;  // [T, L]
  dsp::Waveform wave;
};

// The full system: text encoder + attention decoder, the two GST-style
// acoustic encoders (ACE for utterance N-1, AE for utterance N; parameters
// untied), and the two auxiliary task heads.
template <class Real>
struct TtsModel {
  ModelConfig cfg;
  Vocab vocab;
  TextEncoder<Real> text_encoder;
  nets::ReferenceEncoder<Real> ace_ref, ae_ref;
  nets::StyleTokenBank<Real> ace_bank, ae_bank;
  Decoder<Real> decoder;
  OrderHead<Real> order_head;
  NextHead<Real> next_head;

  TtsModel(const ModelConfig& cfg_, const Vocab& vocab_, std::uint64_t seed)
      : cfg(cfg_), vocab(vocab_) {
    std::mt19937_64 rng(seed);
    text_encoder = TextEncoder<Real>(vocab.size(), cfg, rng);
    ace_ref = nets::ReferenceEncoder<Real>("ace.ref", cfg.n_mels, cfg.ref_gru_dim, rng);
    ace_bank = nets::StyleTokenBank<Real>("ace.bank", cfg.style_tokens, cfg.token_dim,
                                          cfg.ref_gru_dim, cfg.style_heads,
                                          cfg.style_embed_dim, cfg.token_tanh, rng);
    ae_ref = nets::ReferenceEncoder<Real>("ae.ref", cfg.n_mels, cfg.ref_gru_dim, rng);
    ae_bank = nets::StyleTokenBank<Real>("ae.bank", cfg.style_tokens, cfg.token_dim,
                                         cfg.ref_gru_dim, cfg.style_heads,
                                         cfg.style_embed_dim, cfg.token_tanh, rng);
    decoder = Decoder<Real>(cfg, rng);
    order_head = OrderHead<Real>(cfg.style_embed_dim, cfg.dropout, rng);
    next_head = NextHead<Real>(cfg.style_embed_dim, cfg.dropout, rng);
  }

  std::vector<Param<Real>*> params() {
    std::vector<Param<Real>*> out;
    text_encoder.collect(out);
    ace_ref.collect(out);
    ace_bank.collect(out);
    ae_ref.collect(out);
    ae_bank.collect(out);
    decoder.collect(out);
    order_head.collect(out);
    next_head.collect(out);
    return out;
  }

  std::vector<std::pair<std::string, std::vector<Real>*>> norm_state() {
    std::vector<std::pair<std::string, std::vector<Real>*>> out;
    order_head.collect_state(out);
    next_head.collect_state(out);
    return out;
  }

  int encode_text(Binding<Real>& bind, const std::string& text) {
    return text_encoder.forward(bind, vocab.encode(text));
  }

  int ace_embed(Binding<Real>& bind, int mel) {
    return ace_bank.forward(bind, ace_ref.forward(bind, mel));
  }

  int ae_embed(Binding<Real>& bind, int mel) {
    return ae_bank.forward(bind, ae_ref.forward(bind, mel));
  }

  // Applies the configured conditioning point: either the style embedding is
  // handed to the decoder input, or broadcast-concatenated to every encoder
  // output row. `style` may be -1 only for the baseline (no-context) path.
  struct Conditioned {
    int enc;
    int style;  // -1 when folded into enc
  };

  Conditioned condition(Binding<Real>& bind, int enc, int style) {
    auto& g = bind.graph();
    if (style < 0)
      style = g.constant(Tensor<Real>::zeros({1, cfg.style_embed_dim}));
    if (!cfg.inject_at_encoder) return {enc, style};
    const int L = g.value(enc).rows();
    int ones = g.constant(Tensor<Real>::full({L, 1}, Real(1)));
    int tiled = ad::matmul(g, ones, style);  // [L, style_dim]
    return {ad::concat(g, {enc, tiled}, 1), -1};
  }

  typename Decoder<Real>::Out decode_teacher_forced(Binding<Real>& bind, int enc,
                                                    int style, const Tensor<Real>& target,
                                                    DropoutStream& drop) {
    auto c = condition(bind, enc, style);
    return decoder.decode(bind, c.enc, c.style, &target, true, 0, cfg.stop_threshold,
                          drop);
  }

  typename Decoder<Real>::Out decode_free_running(Binding<Real>& bind, int enc,
                                                  int style, int max_frames,
                                                  DropoutStream& drop) {
    auto c = condition(bind, enc, style);
    return decoder.decode(bind, c.enc, c.style, nullptr, false, max_frames,
                          cfg.stop_threshold, drop);
  }

  // Free-running synthesis in eval mode. Batchnorm uses running statistics,
  // head dropouts are off, prenet dropout stays active and is seeded.
  // The AE is a training-time component and must not run here.
  SynthResult<Real> synthesize(const std::string& text,
                               const dsp::MelSpectrogram* context_mel, Variant variant,
                               std::uint64_t seed, const dsp::DspConfig& dsp_cfg,
                               int griffin_lim_iters) {
    if (uses_context(variant) && context_mel == nullptr)
      throw std::runtime_error("variant '" + variant_name(variant) +
                               "' requires a context mel at synthesis time");
    const long ae_calls_before = ae_ref.forward_count;

    Graph<Real> g;
    Binding<Real> bind(g, /*trainable=*/false);
    DropoutStream drop(seed);
    int enc = encode_text(bind, text);
    int style = -1;
    if (uses_context(variant))
      style = ace_embed(bind, g.constant(mel_to_tensor<Real>(*context_mel)));
    auto out = decode_free_running(bind, enc, style, cfg.max_frames, drop);

    if (ae_ref.forward_count != ae_calls_before)
      throw std::logic_error("synthesize evaluated the acoustic encoder (AE)");

    SynthResult<Real> res;
    res.mel = tensor_to_mel(g.value(out.mel), dsp_cfg.hop, dsp_cfg.sample_rate,
                            dsp_cfg.log_floor);
    const auto& stops = g.value(out.stops);
    res.stop_logits.assign(stops.data.begin(), stops.data.end());
    res.alignment = g.value(out.alignment);
    res.wave = dsp::griffin_lim(res.mel, griffin_lim_iters, dsp_cfg);
    return res;
  }

  void save_params(io::TensorContainer& c) {
    for (auto* p : params())
      c.put("param/" + p->name, p->value.shape,
            p->value.template cast<float>().data);
    for (auto& [name, vec] : norm_state()) {
      std::vector<float> data(vec->begin(), vec->end());
      const int n = static_cast<int>(data.size());
      c.put("state/" + name, {n}, std::move(data));
    }
  }

  void load_params(const io::TensorContainer& c) {
    for (auto* p : params()) {
      const auto& e = c.get("param/" + p->name);
      if (e.shape != p->value.shape)
        throw std::runtime_error("checkpoint tensor '" + p->name +
                                 "' has shape " + ad::shape_str(e.shape) +
                                 ", expected " + ad::shape_str(p->value.shape));
      for (std::size_t i = 0; i < e.data.size(); ++i)
        p->value.data[i] = static_cast<Real>(e.data[i]);
    }
    for (auto& [name, vec] : norm_state()) {
      if (!c.contains("state/" + name)) continue;  // fresh model: stats unset
      const auto& e = c.get("state/" + name);
      vec->assign(e.data.begin(), e.data.end());
    }
  }
};

}  // namespace ctts::model
