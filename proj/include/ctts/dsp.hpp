#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "ctts/config.hpp"
#include "ctts/wav.hpp"

namespace ctts::dsp {

struct DspConfig {
  int sample_rate = 22050;
  int n_fft = 1024;
  int hop = 256;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-5;

  static DspConfig from_config(const Config& c) {
    DspConfig d;
    d.sample_rate = static_cast<int>(c.get_int("dsp.sample_rate"));
    d.n_fft = static_cast<int>(c.get_int("dsp.n_fft"));
    d.hop = static_cast<int>(c.get_int("dsp.hop"));
    d.n_mels = static_cast<int>(c.get_int("dsp.n_mels"));
    d.fmin = c.get_double("dsp.fmin");
    d.fmax = c.get_double("dsp.fmax");
    d.log_floor = c.get_double("dsp.log_floor");
    return d;
  }
};

// T x M matrix of log-amplitude mel frames, row-major.
struct MelSpectrogram {
  std::vector<float> data;
  int n_frames = 0;
  int n_mels = 0;
  int hop = 0;
  int sample_rate = 0;

  float& at(int t, int m) { return data[static_cast<size_t>(t) * n_mels + m]; }
  float at(int t, int m) const { return data[static_cast<size_t>(t) * n_mels + m]; }
};

struct PitchPoint {
  double time_s = 0.0;
  double f0_hz = 0.0;  // meaningful only when voiced
  bool voiced = false;
};

using PitchContour = std::vector<PitchPoint>;

namespace detail {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT. Sizes are restricted to powers of two,
// which the config layer enforces for n_fft.
inline void fft(std::vector<std::complex<double>>& a, bool invert) {
  const size_t n = a.size();
  if (!is_pow2(static_cast<int>(n))) throw std::runtime_error("fft: size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / static_cast<double>(len) * (invert ? 1.0 : -1.0);
    std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (invert)
    for (auto& x : a) x /= static_cast<double>(n);
}

inline std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

inline int frame_count(size_t len, int n_fft, int hop) {
  if (len < static_cast<size_t>(n_fft)) return 0;
  return static_cast<int>((len - n_fft) / hop) + 1;
}

}  // namespace detail

// One-sided complex STFT, frames x (n_fft/2 + 1). No padding: the first
// frame starts at sample 0 and partial tail frames are dropped.
inline std::vector<std::vector<std::complex<double>>> stft(
    const std::vector<float>& x, int n_fft, int hop) {
  if (!detail::is_pow2(n_fft)) throw std::runtime_error("stft: n_fft must be a power of two");
  const int frames = detail::frame_count(x.size(), n_fft, hop);
  const auto win = detail::hann_window(n_fft);
  const int bins = n_fft / 2 + 1;
  std::vector<std::vector<std::complex<double>>> out(frames);
  std::vector<std::complex<double>> buf(n_fft);
  for (int t = 0; t < frames; ++t) {
    const size_t off = static_cast<size_t>(t) * hop;
    for (int i = 0; i < n_fft; ++i)
      buf[i] = std::complex<double>(x[off + i] * win[i], 0.0);
    detail::fft(buf, false);
    out[t].assign(buf.begin(), buf.begin() + bins);
  }
  return out;
}

// Overlap-add inverse with window-square normalization. Output length is
// (frames-1)*hop + n_fft, matching the no-padding analysis.
inline std::vector<float> istft(
    const std::vector<std::vector<std::complex<double>>>& spec, int n_fft, int hop) {
  const int frames = static_cast<int>(spec.size());
  if (frames == 0) return {};
  const auto win = detail::hann_window(n_fft);
  const size_t len = static_cast<size_t>(frames - 1) * hop + n_fft;
  std::vector<double> acc(len, 0.0), norm(len, 0.0);
  std::vector<std::complex<double>> buf(n_fft);
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k <= n_fft / 2; ++k) buf[k] = spec[t][k];
    for (int k = n_fft / 2 + 1; k < n_fft; ++k) buf[k] = std::conj(spec[t][n_fft - k]);
    detail::fft(buf, true);
    const size_t off = static_cast<size_t>(t) * hop;
    for (int i = 0; i < n_fft; ++i) {
      acc[off + i] += buf[i].real() * win[i];
      norm[off + i] += win[i] * win[i];
    }
  }
  std::vector<float> out(len);
  for (size_t i = 0; i < len; ++i)
    out[i] = static_cast<float>(norm[i] > 1e-9 ? acc[i] / norm[i] : 0.0);
  return out;
}

// Triangular mel filterbank on the HTK mel scale, n_mels x (n_fft/2 + 1).
class MelFilterbank {
 public:
  explicit MelFilterbank(const DspConfig& cfg) : cfg_(cfg) {
    const int bins = cfg.n_fft / 2 + 1;
    weights_.assign(static_cast<size_t>(cfg.n_mels) * bins, 0.0);
    std::vector<double> hz(cfg.n_mels + 2);
    const double m_lo = hz_to_mel(cfg.fmin), m_hi = hz_to_mel(cfg.fmax);
    for (int i = 0; i < cfg.n_mels + 2; ++i)
      hz[i] = mel_to_hz(m_lo + (m_hi - m_lo) * i / (cfg.n_mels + 1));
    centers_.assign(hz.begin() + 1, hz.end() - 1);
    edges_ = hz;
    for (int m = 0; m < cfg.n_mels; ++m) {
      const double lo = hz[m], mid = hz[m + 1], hi = hz[m + 2];
      for (int k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
        double w = 0.0;
        if (f > lo && f < hi)
          w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
        weights_[static_cast<size_t>(m) * bins + k] = w;
      }
    }
  }

  static double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
  static double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

  int bins() const { return cfg_.n_fft / 2 + 1; }
  int n_mels() const { return cfg_.n_mels; }
  double weight(int m, int k) const { return weights_[static_cast<size_t>(m) * bins() + k]; }
  // Center (triangle peak) frequency of filter m, in Hz.
  double center_hz(int m) const { return centers_[m]; }
  // Triangle support edges: filter m is nonzero on (edge(m), edge(m+2)).
  double edge_hz(int i) const { return edges_[i]; }

  std::vector<double> apply(const std::vector<double>& mag) const {
    std::vector<double> out(cfg_.n_mels, 0.0);
    for (int m = 0; m < cfg_.n_mels; ++m) {
      double s = 0.0;
      const double* w = &weights_[static_cast<size_t>(m) * bins()];
      for (int k = 0; k < bins(); ++k) s += w[k] * mag[k];
      out[m] = s;
    }
    return out;
  }

  // Least-squares inverse mapping mel energies back to linear magnitudes,
  // W^T (W W^T)^-1, computed once on first use.
  std::vector<double> invert(const std::vector<double>& mel) const {
    ensure_pinv();
    std::vector<double> out(bins(), 0.0);
    for (int k = 0; k < bins(); ++k) {
      double s = 0.0;
      for (int m = 0; m < cfg_.n_mels; ++m)
        s += pinv_[static_cast<size_t>(k) * cfg_.n_mels + m] * mel[m];
      out[k] = std::max(0.0, s);
    }
    return out;
  }

 private:
  void ensure_pinv() const {
    if (!pinv_.empty()) return;
    const int M = cfg_.n_mels, B = bins();
    Eigen::MatrixXd W(M, B);
    for (int m = 0; m < M; ++m)
      for (int k = 0; k < B; ++k) W(m, k) = weight(m, k);
    Eigen::MatrixXd gram = W * W.transpose();
    // tiny ridge keeps the solve stable if an edge filter is near-empty
    gram.diagonal().array() += 1e-10;
    Eigen::MatrixXd pinv = W.transpose() * gram.ldlt().solve(
        Eigen::MatrixXd::Identity(M, M));
    pinv_.resize(static_cast<size_t>(B) * M);
    for (int k = 0; k < B; ++k)
      for (int m = 0; m < M; ++m) pinv_[static_cast<size_t>(k) * M + m] = pinv(k, m);
  }

  DspConfig cfg_;
  std::vector<double> weights_;
  std::vector<double> centers_;
  std::vector<double> edges_;
  mutable std::vector<double> pinv_;
};

// Log-amplitude mel spectrogram: per frame log(max(W * |STFT|, floor)).
inline MelSpectrogram mel_spectrogram(const Waveform& w, const DspConfig& cfg) {
  if (w.samples.size() < static_cast<size_t>(cfg.n_fft))
    throw std::runtime_error("mel_spectrogram: waveform shorter than n_fft (" +
                             std::to_string(w.samples.size()) + " < " +
                             std::to_string(cfg.n_fft) + ")");
  if (cfg.n_fft < cfg.hop) throw std::runtime_error("mel_spectrogram: n_fft must be >= hop");
  const auto spec = stft(w.samples, cfg.n_fft, cfg.hop);
  const MelFilterbank fb(cfg);
  MelSpectrogram mel;
  mel.n_frames = static_cast<int>(spec.size());
  mel.n_mels = cfg.n_mels;
  mel.hop = cfg.hop;
  mel.sample_rate = cfg.sample_rate;
  mel.data.resize(static_cast<size_t>(mel.n_frames) * cfg.n_mels);
  std::vector<double> mag(fb.bins());
  for (int t = 0; t < mel.n_frames; ++t) {
    for (int k = 0; k < fb.bins(); ++k) mag[k] = std::abs(spec[t][k]);
    const auto m = fb.apply(mag);
    for (int b = 0; b < cfg.n_mels; ++b)
      mel.at(t, b) = static_cast<float>(std::log(std::max(m[b], cfg.log_floor)));
  }
  return mel;
}

struct GriffinLimResult {
  Waveform wave;
  std::vector<double> errors;  // Frobenius error ||(|STFT(x_i)| - target)|| per iteration
};

// Iterative phase reconstruction from a mel spectrogram. The mel frames are
// mapped back to linear magnitudes through the filterbank pseudo-inverse,
// then plain alternating projections recover a phase. No momentum, so the
// per-iteration error is non-increasing.
inline GriffinLimResult griffin_lim_trace(const MelSpectrogram& m, int iters,
                                          const DspConfig& cfg) {
  if (iters < 1) throw std::runtime_error("griffin_lim: iters must be >= 1");
  if (m.n_mels != cfg.n_mels)
    throw std::runtime_error("griffin_lim: mel band count mismatch");
  const MelFilterbank fb(cfg);
  const int bins = fb.bins();
  const int T = m.n_frames;

  std::vector<std::vector<double>> target(T, std::vector<double>(bins));
  std::vector<double> melamp(cfg.n_mels);
  for (int t = 0; t < T; ++t) {
    for (int b = 0; b < cfg.n_mels; ++b)
      melamp[b] = std::exp(static_cast<double>(m.at(t, b)));
    target[t] = fb.invert(melamp);
  }

  // zero initial phase
  std::vector<std::vector<std::complex<double>>> spec(T);
  for (int t = 0; t < T; ++t) {
    spec[t].resize(bins);
    for (int k = 0; k < bins; ++k) spec[t][k] = {target[t][k], 0.0};
  }

  GriffinLimResult res;
  std::vector<float> x;
  for (int it = 0; it < iters; ++it) {
    x = istft(spec, cfg.n_fft, cfg.hop);
    auto re = stft(x, cfg.n_fft, cfg.hop);
    double err = 0.0;
    for (int t = 0; t < T && t < static_cast<int>(re.size()); ++t) {
      for (int k = 0; k < bins; ++k) {
        const double mag = std::abs(re[t][k]);
        const double d = mag - target[t][k];
        err += d * d;
        spec[t][k] = mag > 1e-12 ? re[t][k] / mag * target[t][k]
                                 : std::complex<double>(target[t][k], 0.0);
      }
    }
    res.errors.push_back(std::sqrt(err));
  }
  x = istft(spec, cfg.n_fft, cfg.hop);
  res.wave.samples = std::move(x);
  res.wave.sample_rate = cfg.sample_rate;
  return res;
}

inline Waveform griffin_lim(const MelSpectrogram& m, int iters, const DspConfig& cfg) {
  return griffin_lim_trace(m, iters, cfg).wave;
}

struct F0Config {
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  double f_min = 60.0;
  double f_max = 400.0;
  double voicing_threshold = 0.3;

  static F0Config from_config(const Config& c) {
    F0Config f;
    f.frame_ms = c.get_double("dsp.f0_frame_ms");
    f.hop_ms = c.get_double("dsp.f0_hop_ms");
    f.f_min = c.get_double("dsp.f0_min");
    f.f_max = c.get_double("dsp.f0_max");
    f.voicing_threshold = c.get_double("dsp.f0_voicing_threshold");
    return f;
  }
};

// Fundamental frequency by normalized autocorrelation peak picking with
// parabolic lag refinement. Frames whose peak falls below the voicing
// threshold (or that carry almost no energy) are marked unvoiced.
inline PitchContour estimate_f0(const Waveform& w, const F0Config& cfg) {
  if (w.sample_rate < 2 * cfg.f_max)
    throw std::runtime_error("estimate_f0: sample rate below 2*f_max");
  const int sr = w.sample_rate;
  const int frame = std::max(8, static_cast<int>(std::lround(cfg.frame_ms * sr / 1000.0)));
  const int hop = std::max(1, static_cast<int>(std::lround(cfg.hop_ms * sr / 1000.0)));
  const int lag_min = std::max(2, static_cast<int>(std::floor(sr / cfg.f_max)));
  const int lag_max = std::min(frame - 2, static_cast<int>(std::ceil(sr / cfg.f_min)));

  PitchContour out;
  if (lag_max <= lag_min) return out;
  const int frames = detail::frame_count(w.samples.size(), frame, hop);
  std::vector<double> ncc(lag_max + 1, 0.0);
  for (int t = 0; t < frames; ++t) {
    const float* x = w.samples.data() + static_cast<size_t>(t) * hop;
    PitchPoint pt;
    pt.time_s = (static_cast<double>(t) * hop + frame / 2.0) / sr;

    double energy = 0.0;
    for (int i = 0; i < frame; ++i) energy += static_cast<double>(x[i]) * x[i];
    if (energy < 1e-8) {
      out.push_back(pt);
      continue;
    }

    for (int lag = lag_min; lag <= lag_max; ++lag) {
      double num = 0.0, e0 = 0.0, e1 = 0.0;
      const int n = frame - lag;
      for (int i = 0; i < n; ++i) {
        const double a = x[i], b = x[i + lag];
        num += a * b;
        e0 += a * a;
        e1 += b * b;
      }
      const double den = std::sqrt(e0 * e1);
      ncc[lag] = den > 1e-12 ? num / den : 0.0;
    }
    // A periodic signal correlates at every multiple of its period, so take
    // the shortest-lag local peak within 10% of the global one.
    double cmax = -1.0;
    for (int lag = lag_min; lag <= lag_max; ++lag) cmax = std::max(cmax, ncc[lag]);
    int best_lag = 0;
    double best = -1.0;
    for (int lag = lag_min; lag <= lag_max; ++lag) {
      const double l = lag > lag_min ? ncc[lag - 1] : -1.0;
      const double r = lag < lag_max ? ncc[lag + 1] : -1.0;
      if (ncc[lag] >= l && ncc[lag] >= r && ncc[lag] >= 0.9 * cmax) {
        best_lag = lag;
        best = ncc[lag];
        break;
      }
    }
    if (best >= cfg.voicing_threshold && best_lag > 0) {
      double lag = best_lag;
      if (best_lag > lag_min && best_lag < lag_max) {
        const double c0 = ncc[best_lag - 1], c1 = ncc[best_lag], c2 = ncc[best_lag + 1];
        const double den = c0 - 2.0 * c1 + c2;
        if (std::abs(den) > 1e-12) {
          double d = 0.5 * (c0 - c2) / den;
          if (d > -0.5 && d < 0.5) lag += d;
        }
      }
      pt.voiced = true;
      pt.f0_hz = sr / lag;
    }
    out.push_back(pt);
  }
  return out;
}

inline std::optional<double> median_voiced_f0(const PitchContour& c) {
  std::vector<double> v;
  for (const auto& p : c)
    if (p.voiced) v.push_back(p.f0_hz);
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// CSV export: `time_s,f0_hz`, empty f0 field for unvoiced frames.
inline void write_contour_csv(std::ostream& out, const PitchContour& c) {
  out << "time_s,f0_hz\n";
  for (const auto& p : c) {
    out << std::fixed << std::setprecision(6) << p.time_s << ",";
    if (p.voiced) out << std::setprecision(3) << p.f0_hz;
    out << "\n";
  }
}

}  // namespace ctts::dsp
