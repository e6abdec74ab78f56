#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctts {

// Flat key=value configuration. Keys are namespaced dsp.* / model.* / train.*;
// every key has a documented default and unknown keys are rejected on load.
class Config {
 public:
  Config() : values_(defaults()) {}

  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        // signal analysis
        {"dsp.sample_rate", "22050"},
        {"dsp.n_fft", "1024"},
        {"dsp.hop", "256"},
        {"dsp.n_mels", "80"},
        {"dsp.fmin", "0"},
        {"dsp.fmax", "8000"},
        {"dsp.log_floor", "1e-5"},
        {"dsp.f0_frame_ms", "25"},
        {"dsp.f0_hop_ms", "10"},
        {"dsp.f0_min", "60"},
        {"dsp.f0_max", "400"},
        {"dsp.f0_voicing_threshold", "0.3"},
        {"dsp.griffin_lim_iters", "60"},
        // architecture
        {"model.char_embed_dim", "64"},
        {"model.text_gru_dim", "128"},
        {"model.style_embed_dim", "256"},
        {"model.style_tokens", "10"},
        {"model.style_heads", "4"},
        {"model.token_dim", "128"},
        {"model.token_tanh", "1"},
        {"model.ref_gru_dim", "128"},
        {"model.attention_dim", "128"},
        {"model.decoder_gru_dim", "512"},
        {"model.dropout", "0.5"},
        {"model.context_injection", "decoder"},  // decoder | encoder
        {"model.stop_threshold", "0.5"},
        {"model.max_frames", "1000"},
        // optimization
        {"train.variant", "baseline"},  // baseline|ace_only|order|next|random_context
        {"train.lr", "1e-3"},
        {"train.adam_beta1", "0.9"},
        {"train.adam_beta2", "0.999"},
        {"train.adam_eps", "1e-8"},
        {"train.weight_decay", "1e-6"},
        {"train.grad_clip_norm", "1.0"},
        {"train.batch_size", "4"},
        {"train.max_iters", "1000"},
        {"train.task_loss_weight", "1.0"},
        {"train.swap_prob", "0.5"},
        {"train.seed", "1234"},
        {"train.metrics_interval", "10"},
        {"train.checkpoint_interval", "0"},  // 0 = final checkpoint only
        {"train.val_interval", "0"},         // 0 = no validation passes
        {"train.split_train", "-1"},         // -1 = remainder after val+test
        {"train.split_val", "0"},
        {"train.split_test", "0"},
    };
    return d;
  }

  // Parses `key=value` lines; '#' starts a comment, blank lines ignored.
  void load_stream(std::istream& in) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#') continue;
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": expected key=value, got '" + s + "'");
      std::string key = strip(s.substr(0, eq));
      std::string val = strip(s.substr(eq + 1));
      set(key, val);
    }
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    load_stream(in);
  }

  void set(const std::string& key, const std::string& val) {
    if (!defaults().count(key))
      throw std::runtime_error("unknown config key: " + key);
    values_[key] = val;
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw std::runtime_error("unknown config key: " + key);
    return it->second;
  }

  double get_double(const std::string& key) const {
    const std::string& s = get(key);
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config key " + key + ": not a number: '" + s + "'");
    }
  }

  float get_float(const std::string& key) const {
    return static_cast<float>(get_double(key));
  }

  long long get_int(const std::string& key) const {
    const std::string& s = get(key);
    try {
      size_t pos = 0;
      long long v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config key " + key + ": not an integer: '" + s + "'");
    }
  }

  std::uint64_t get_u64(const std::string& key) const {
    long long v = get_int(key);
    if (v < 0) throw std::runtime_error("config key " + key + ": must be non-negative");
    return static_cast<std::uint64_t>(v);
  }

  bool get_bool(const std::string& key) const { return get_int(key) != 0; }

  // Serializes every key (sorted) so a run's full configuration can be
  // snapshotted into checkpoints and diffed between runs.
  std::string to_string() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << "=" << v << "\n";
    return out.str();
  }

  static Config from_string(const std::string& text) {
    Config c;
    std::istringstream in(text);
    c.load_stream(in);
    return c;
  }

 private:
  static std::string strip(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace ctts
