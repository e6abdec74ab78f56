#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ctts/config.hpp"
#include "ctts/corpus.hpp"
#include "ctts/dsp.hpp"
#include "ctts/eval.hpp"
#include "ctts/model.hpp"
#include "ctts/stats.hpp"
#include "ctts/train.hpp"

namespace ctts::cli {

namespace detail {

inline Config make_config(const std::string& config_path,
                          const std::vector<std::string>& overrides,
                          long long seed_override) {
  Config cfg;
  if (!config_path.empty()) cfg.load_file(config_path);
  for (const auto& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed_override >= 0) cfg.set("train.seed", std::to_string(seed_override));
  return cfg;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << text;
}

inline void emit_json(const nlohmann::json& j, const std::string& out_path) {
  std::cout << j.dump(2) << "\n";
  if (!out_path.empty()) write_text(out_path, j.dump(2) + "\n");
}

// ---- prepare --------------------------------------------------------------

inline int cmd_prepare(const std::string& metadata, const std::string& wav_dir,
                       const std::string& out_dir, const Config& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  auto records = corpus::parse_metadata_file(metadata);
  auto pairs = corpus::build_bigram_pairs(records);

  corpus::SplitSpec spec;
  spec.seed = cfg.get_u64("train.seed");
  const long long val = cfg.get_int("train.split_val");
  const long long test = cfg.get_int("train.split_test");
  long long train = cfg.get_int("train.split_train");
  if (val < 0 || test < 0) throw std::runtime_error("split counts must be >= 0");
  if (train < 0) {
    train = static_cast<long long>(pairs.size()) - val - test;
    if (train < 0)
      throw std::runtime_error("infeasible split: val+test exceed pair count");
  }
  spec.train_count = static_cast<std::size_t>(train);
  spec.val_count = static_cast<std::size_t>(val);
  spec.test_count = static_cast<std::size_t>(test);
  auto splits = corpus::split_dataset(pairs, spec);

  const char* names[3] = {"train", "val", "test"};
  for (int i = 0; i < 3; ++i) {
    std::ostringstream body;
    for (const auto& p : splits[i])
      body << corpus::serialize_manifest_line(p.curr, p.prev.id.raw) << "\n";
    write_text(out_dir + "/" + names[i] + ".txt", body.str());
  }

  std::vector<std::string> texts;
  for (const auto& r : records) texts.push_back(r.text);
  auto vocab = model::Vocab::from_texts(texts);
  vocab.save(out_dir + "/vocab.txt");

  // cache a mel for every utterance referenced by any pair
  std::set<std::string> wanted;
  for (const auto& p : pairs) {
    wanted.insert(p.prev.id.raw);
    wanted.insert(p.curr.id.raw);
  }
  const auto dcfg = dsp::DspConfig::from_config(cfg);
  io::TensorContainer cache;
  cache.put_string("meta/config", cfg.to_string());
  cache.put_string("meta/vocab", vocab.to_text());
  for (const auto& id : wanted) {
    const std::string wav_path = wav_dir + "/" + id + ".wav";
    auto w = dsp::load_wav(wav_path);
    if (w.sample_rate != dcfg.sample_rate)
      throw std::runtime_error("wav " + wav_path + ": sample rate " +
                               std::to_string(w.sample_rate) + " != configured " +
                               std::to_string(dcfg.sample_rate));
    auto mel = dsp::mel_spectrogram(w, dcfg);
    cache.put(train::mel_key(id), {mel.n_frames, mel.n_mels},
              std::vector<float>(mel.data.begin(), mel.data.end()));
  }
  cache.save(out_dir + "/features.ctts");

  std::cout << "prepared " << records.size() << " records, " << pairs.size()
            << " pairs (train/val/test = " << splits[0].size() << "/"
            << splits[1].size() << "/" << splits[2].size() << "), cached "
            << wanted.size() << " mels\n";
  return 0;
}

// ---- train ------------------------------------------------------------------

inline int cmd_train(const std::string& data_dir, const std::string& out_dir,
                     const Config& cfg) {
  const std::string train_manifest = data_dir + "/train.txt";
  std::string val_manifest = data_dir + "/val.txt";
  if (cfg.get_int("train.val_interval") <= 0 ||
      !std::filesystem::exists(val_manifest))
    val_manifest.clear();
  auto res = train::run_training(cfg, train_manifest, val_manifest,
                                 data_dir + "/features.ctts", out_dir);
  std::cout << "trained " << cfg.get("train.max_iters") << " iterations ("
            << cfg.get("train.variant") << "); final total loss "
            << res.final_losses.total << "\n"
            << "checkpoint: " << res.checkpoint_path << "\n"
            << "metrics: " << res.metrics_path << "\n";
  return 0;
}

// ---- synth -------------------------------------------------------------------

inline int cmd_synth(const std::string& checkpoint, const std::string& text,
                     const std::string& context_wav, const std::string& out_dir,
                     long long seed_override) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto loaded = train::load_checkpoint(checkpoint);
  const auto variant = model::parse_variant(loaded.config.get("train.variant"));
  const auto dcfg = dsp::DspConfig::from_config(loaded.config);
  const int gl_iters = static_cast<int>(loaded.config.get_int("dsp.griffin_lim_iters"));
  const std::uint64_t seed =
      seed_override >= 0 ? static_cast<std::uint64_t>(seed_override)
                         : loaded.config.get_u64("train.seed");

  dsp::MelSpectrogram context;
  const dsp::MelSpectrogram* context_ptr = nullptr;
  if (model::uses_context(variant)) {
    if (context_wav.empty())
      throw std::runtime_error("variant '" + model::variant_name(variant) +
                               "' requires --context");
    context = dsp::mel_spectrogram(dsp::load_wav(context_wav), dcfg);
    context_ptr = &context;
  } else if (!context_wav.empty()) {
    std::cerr << "warning: baseline variant ignores --context\n";
  }

  auto synth = loaded.model->synthesize(text, context_ptr, variant, seed, dcfg, gl_iters);

  io::TensorContainer mel_out;
  mel_out.put("mel", {synth.mel.n_frames, synth.mel.n_mels},
              std::vector<float>(synth.mel.data.begin(), synth.mel.data.end()));
  mel_out.put("stop_logits", {static_cast<int>(synth.stop_logits.size())},
              synth.stop_logits);
  mel_out.put("alignment", synth.alignment.shape, synth.alignment.data);
  mel_out.save(out_dir + "/mel.ctts");
  dsp::save_wav(out_dir + "/out.wav", synth.wave);
  std::cout << "synthesized " << synth.mel.n_frames << " frames -> " << out_dir
            << "/out.wav\n";
  return 0;
}

// ---- analyze ------------------------------------------------------------------

inline int cmd_analyze(const std::string& checkpoint, const std::string& text,
                       const std::string& contexts_file, const std::string& out_dir,
                       long long seed_override) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto loaded = train::load_checkpoint(checkpoint);
  const auto variant = model::parse_variant(loaded.config.get("train.variant"));
  const auto dcfg = dsp::DspConfig::from_config(loaded.config);
  const auto fcfg = dsp::F0Config::from_config(loaded.config);
  const int gl_iters = static_cast<int>(loaded.config.get_int("dsp.griffin_lim_iters"));
  const std::uint64_t seed =
      seed_override >= 0 ? static_cast<std::uint64_t>(seed_override)
                         : loaded.config.get_u64("train.seed");

  std::ifstream list(contexts_file);
  if (!list) throw std::runtime_error("cannot open context list: " + contexts_file);
  std::vector<dsp::MelSpectrogram> contexts;
  std::string line;
  while (std::getline(list, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    contexts.push_back(dsp::mel_spectrogram(dsp::load_wav(line), dcfg));
  }

  auto rep = eval::variation_analysis(*loaded.model, variant, text, contexts, seed,
                                      dcfg, fcfg, gl_iters);

  for (std::size_t i = 0; i < rep.contours.size(); ++i) {
    std::ostringstream name;
    name << out_dir << "/contour_" << std::setw(3) << std::setfill('0') << i << ".csv";
    std::ofstream csv(name.str());
    dsp::write_contour_csv(csv, rep.contours[i]);
  }
  nlohmann::json j{{"renditions", rep.contours.size()},
                   {"frame_counts", rep.frame_counts},
                   {"duration_std", rep.duration_std},
                   {"f0_framewise_std", rep.f0_framewise_std}};
  write_text(out_dir + "/variation.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

// ---- stats --------------------------------------------------------------------

inline std::pair<std::string, std::string> parse_two_systems(const std::string& s) {
  auto comma = s.find(',');
  if (comma == std::string::npos || comma == 0 || comma + 1 >= s.size())
    throw std::runtime_error("--systems expects two names: a,b");
  return {s.substr(0, comma), s.substr(comma + 1)};
}

inline int cmd_stats_wilcoxon(const std::string& csv, const std::string& systems,
                              const std::string& out_path) {
  auto [sys_a, sys_b] = parse_two_systems(systems);
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot open score table: " + csv);
  auto table = stats::ScoreTable::from_csv(in);
  auto diffs = table.paired_differences(sys_a, sys_b);
  auto res = stats::wilcoxon_signed_rank(diffs);
  emit_json(nlohmann::json{{"test", "wilcoxon"},
                           {"systems", {sys_a, sys_b}},
                           {"W", res.statistic},
                           {"w_plus", res.w_plus},
                           {"w_minus", res.w_minus},
                           {"p", res.p},
                           {"n", res.n},
                           {"exact", res.exact}},
            out_path);
  return 0;
}

inline int cmd_stats_pairwise(const std::string& csv, double alpha,
                              const std::string& out_path) {
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot open score table: " + csv);
  auto table = stats::ScoreTable::from_csv(in);
  auto systems = table.systems();
  std::vector<nlohmann::json> comparisons;
  std::vector<double> ps;
  for (std::size_t i = 0; i < systems.size(); ++i)
    for (std::size_t j = i + 1; j < systems.size(); ++j) {
      auto res = stats::wilcoxon_signed_rank(
          table.paired_differences(systems[i], systems[j]));
      ps.push_back(res.p);
      comparisons.push_back(nlohmann::json{{"systems", {systems[i], systems[j]}},
                                           {"W", res.statistic},
                                           {"p", res.p},
                                           {"n", res.n}});
    }
  auto adjusted = stats::bonferroni_adjust(ps, alpha);
  for (std::size_t i = 0; i < comparisons.size(); ++i) {
    comparisons[i]["p_adj"] = adjusted[i].p_adj;
    comparisons[i]["significant"] = adjusted[i].significant;
  }
  emit_json(nlohmann::json{{"test", "wilcoxon+bonferroni"},
                           {"alpha", alpha},
                           {"comparisons", comparisons}},
            out_path);
  return 0;
}

inline int cmd_stats_preference(const std::string& csv, const std::string& systems,
                                const std::string& out_path) {
  auto [sys_a, sys_b] = parse_two_systems(systems);
  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot open preference table: " + csv);
  auto table = stats::PreferenceTable::from_csv(in).filter_pair(sys_a, sys_b);
  auto res = stats::preference_tally(table);
  emit_json(nlohmann::json{{"test", "binomial"},
                           {"systems", {sys_a, sys_b}},
                           {"count_a", res.count_a},
                           {"count_b", res.count_b},
                           {"n", res.count_a + res.count_b},
                           {"p", res.p}},
            out_path);
  return 0;
}

}  // namespace detail

// Command-line entry point. Exit codes: 0 success, 1 usage error,
// 2 data/model error.
inline int run(int argc, const char* const* argv) {
  CLI::App app{"context-conditioned sequence-to-sequence speech synthesis"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  long long seed_override = -1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key=value config file");
    sub->add_option("--set", overrides, "override a config key (key=value)");
    sub->add_option("--seed", seed_override, "override train.seed");
  };

  // prepare
  auto* prepare = app.add_subcommand("prepare", "build manifests and feature cache");
  std::string metadata, wav_dir, out_dir;
  prepare->add_option("--metadata", metadata, "pipe-delimited metadata file")->required();
  prepare->add_option("--wav-dir", wav_dir, "directory of <ID>.wav files")->required();
  prepare->add_option("--out", out_dir, "output directory")->required();
  add_common(prepare);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model variant");
  std::string data_dir, train_out;
  train_cmd->add_option("--data", data_dir, "prepare output directory")->required();
  train_cmd->add_option("--out", train_out, "run output directory")->required();
  add_common(train_cmd);

  // synth
  auto* synth = app.add_subcommand("synth", "synthesize one utterance");
  std::string checkpoint, text, context_wav, synth_out;
  synth->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  synth->add_option("--text", text, "input text")->required();
  synth->add_option("--context", context_wav, "context wav (utterance N-1)");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", seed_override, "synthesis seed");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "context-variation analysis");
  std::string an_checkpoint, an_text, contexts_file, an_out;
  analyze->add_option("--checkpoint", an_checkpoint, "model checkpoint")->required();
  analyze->add_option("--text", an_text, "input text")->required();
  analyze->add_option("--contexts", contexts_file, "file listing context wav paths")
      ->required();
  analyze->add_option("--out", an_out, "output directory")->required();
  analyze->add_option("--seed", seed_override, "synthesis seed");

  // stats
  auto* stats_cmd = app.add_subcommand("stats", "statistical tests over result tables");
  stats_cmd->require_subcommand(1);
  std::string stats_csv, stats_systems, stats_out;
  double alpha = 0.05;
  auto* wilcoxon = stats_cmd->add_subcommand("wilcoxon", "paired signed-rank test");
  wilcoxon->add_option("csv", stats_csv, "score table csv")->required();
  wilcoxon->add_option("--systems", stats_systems, "two system names: a,b")->required();
  wilcoxon->add_option("--out", stats_out, "also write the JSON result here");
  auto* pairwise = stats_cmd->add_subcommand(
      "pairwise", "all pairwise signed-rank tests with Bonferroni correction");
  pairwise->add_option("csv", stats_csv, "score table csv")->required();
  pairwise->add_option("--alpha", alpha, "significance level");
  pairwise->add_option("--out", stats_out, "also write the JSON result here");
  auto* preference = stats_cmd->add_subcommand("preference", "forced-choice binomial test");
  preference->add_option("csv", stats_csv, "preference table csv")->required();
  preference->add_option("--systems", stats_systems, "two system names: a,b")->required();
  preference->add_option("--out", stats_out, "also write the JSON result here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*prepare) {
      auto cfg = detail::make_config(config_path, overrides, seed_override);
      return detail::cmd_prepare(metadata, wav_dir, out_dir, cfg);
    }
    if (*train_cmd) {
      auto cfg = detail::make_config(config_path, overrides, seed_override);
      return detail::cmd_train(data_dir, train_out, cfg);
    }
    if (*synth) return detail::cmd_synth(checkpoint, text, context_wav, synth_out,
                                         seed_override);
    if (*analyze)
      return detail::cmd_analyze(an_checkpoint, an_text, contexts_file, an_out,
                                 seed_override);
    if (*stats_cmd) {
      if (*wilcoxon) return detail::cmd_stats_wilcoxon(stats_csv, stats_systems, stats_out);
      if (*pairwise) return detail::cmd_stats_pairwise(stats_csv, alpha, stats_out);
      if (*preference)
        return detail::cmd_stats_preference(stats_csv, stats_systems, stats_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace ctts::cli
