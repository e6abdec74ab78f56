#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctts/dsp.hpp"
#include "ctts/model.hpp"
#include "ctts/stats.hpp"

namespace ctts::eval {

// Outcome of synthesizing one text under many different acoustic contexts
// with a fixed seed, so any variation is attributable to the context alone.
struct VariationReport {
  std::vector<dsp::PitchContour> contours;  // one per rendition
  std::vector<int> frame_counts;            // mel frames per rendition
  double duration_std = 0.0;                // frames
  double f0_framewise_std = 0.0;            // Hz, after time normalization
};

namespace detail {

inline double population_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  // identical samples are exactly zero variance; this keeps the
  // duplicated-context determinism anchor free of summation roundoff
  bool all_equal = true;
  for (double x : xs) all_equal = all_equal && x == xs[0];
  if (all_equal) return 0.0;
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(xs.size()));
}

// Linear resampling of a contour to `len` points on a normalized time axis.
// Positions whose surrounding frames are not both voiced come back empty.
inline std::vector<std::optional<double>> resample_contour(const dsp::PitchContour& c,
                                                           int len) {
  std::vector<std::optional<double>> out(len);
  if (c.empty() || len < 1) return out;
  const int n = static_cast<int>(c.size());
  for (int j = 0; j < len; ++j) {
    const double pos = len == 1 ? 0.0
                                : static_cast<double>(j) * (n - 1) /
                                      static_cast<double>(len - 1);
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = std::min(n - 1, lo + 1);
    const double frac = pos - lo;
    if (!c[lo].voiced || !c[hi].voiced) continue;
    out[j] = (1.0 - frac) * c[lo].f0_hz + frac * c[hi].f0_hz;
  }
  return out;
}

}  // namespace detail

// Mean across normalized time of the per-position standard deviation of F0,
// over renditions voiced at that position.
inline double framewise_f0_std(const std::vector<dsp::PitchContour>& contours) {
  std::vector<int> lens;
  for (const auto& c : contours) lens.push_back(static_cast<int>(c.size()));
  std::vector<int> sorted = lens;
  std::sort(sorted.begin(), sorted.end());
  const int median_len = sorted.empty() ? 0 : sorted[sorted.size() / 2];
  if (median_len < 1) return 0.0;

  std::vector<std::vector<std::optional<double>>> grid;
  for (const auto& c : contours) grid.push_back(detail::resample_contour(c, median_len));

  double acc = 0.0;
  int used = 0;
  for (int j = 0; j < median_len; ++j) {
    std::vector<double> vals;
    for (const auto& row : grid)
      if (row[j]) vals.push_back(*row[j]);
    if (vals.size() >= 2) {
      acc += detail::population_std(vals);
      ++used;
    }
  }
  return used > 0 ? acc / used : 0.0;
}

// Synthesizes `text` once per context (identical seed) and reports duration
// and pitch variation across the renditions.
inline VariationReport variation_analysis(model::TtsModel<float>& m,
                                          model::Variant variant, const std::string& text,
                                          const std::vector<dsp::MelSpectrogram>& contexts,
                                          std::uint64_t seed, const dsp::DspConfig& dcfg,
                                          const dsp::F0Config& fcfg,
                                          int griffin_lim_iters) {
  if (!model::uses_context(variant))
    throw std::runtime_error("variation_analysis: variant '" +
                             model::variant_name(variant) + "' has no context input");
  if (contexts.size() < 2)
    throw std::runtime_error("variation_analysis: need at least 2 contexts");

  VariationReport rep;
  for (const auto& ctx : contexts) {
    auto synth = m.synthesize(text, &ctx, variant, seed, dcfg, griffin_lim_iters);
    rep.frame_counts.push_back(synth.mel.n_frames);
    rep.contours.push_back(dsp::estimate_f0(synth.wave, fcfg));
  }

  std::vector<double> durations(rep.frame_counts.begin(), rep.frame_counts.end());
  rep.duration_std = detail::population_std(durations);
  rep.f0_framewise_std = framewise_f0_std(rep.contours);
  return rep;
}

}  // namespace ctts::eval
