#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctts/wav.hpp"

namespace ctts::stats {

// ---- Wilcoxon signed-rank test -------------------------------------------------

struct WilcoxonResult {
  double w_plus = 0;
  double w_minus = 0;
  double statistic = 0;  // min(W+, W-)
  double p = 1.0;        // two-sided
  int n = 0;             // sample size after dropping zero differences
  bool exact = false;
};

namespace detail {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Average ranks of |d|, times two so ties stay on an integer grid.
inline std::vector<long long> doubled_ranks(const std::vector<double>& mags) {
  const std::size_t n = mags.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return mags[a] < mags[b]; });
  std::vector<long long> r2(n, 0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && mags[idx[j + 1]] == mags[idx[i]]) ++j;
    // ranks i+1..j+1 share the average; doubled it is (i+j+2)
    const long long doubled = static_cast<long long>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) r2[idx[k]] = doubled;
    i = j + 1;
  }
  return r2;
}

}  // namespace detail

// Two-sided Wilcoxon signed-rank test on paired differences. Zero differences
// are dropped. Exact p by enumerating the 2^n sign assignments (via the
// rank-sum distribution) for n <= exact_threshold, else a normal
// approximation with tie correction and continuity correction.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs,
                                           int exact_threshold = 20) {
  std::vector<double> d;
  for (double x : diffs)
    if (x != 0.0) d.push_back(x);
  if (d.empty())
    throw std::runtime_error("wilcoxon: degenerate sample (all differences zero)");

  const std::size_t n = d.size();
  std::vector<double> mags(n);
  for (std::size_t i = 0; i < n; ++i) mags[i] = std::abs(d[i]);
  const auto r2 = detail::doubled_ranks(mags);

  long long w2_plus = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += r2[i];
    if (d[i] > 0) w2_plus += r2[i];
  }

  WilcoxonResult res;
  res.n = static_cast<int>(n);
  res.w_plus = static_cast<double>(w2_plus) / 2.0;
  res.w_minus = static_cast<double>(total2 - w2_plus) / 2.0;
  res.statistic = std::min(res.w_plus, res.w_minus);

  if (static_cast<int>(n) <= exact_threshold) {
    res.exact = true;
    // distribution of doubled W+ over all sign assignments
    std::vector<double> ways(static_cast<std::size_t>(total2) + 1, 0.0);
    ways[0] = 1.0;
    std::size_t reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<std::size_t>(r2[i]);
      for (std::size_t s = reach + 1; s-- > 0;) {
        if (ways[s] > 0 && s + r < ways.size()) ways[s + r] += ways[s];
      }
      reach += r;
    }
    const double denom = std::pow(2.0, static_cast<double>(n));
    double le = 0, ge = 0;
    for (std::size_t s = 0; s < ways.size(); ++s) {
      if (static_cast<long long>(s) <= w2_plus) le += ways[s];
      if (static_cast<long long>(s) >= w2_plus) ge += ways[s];
    }
    res.p = std::min(1.0, 2.0 * std::min(le, ge) / denom);
  } else {
    const double nn = static_cast<double>(n);
    const double mu = nn * (nn + 1.0) / 4.0;
    double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
    // tie correction: subtract sum(t^3 - t)/48 over tie groups
    std::map<long long, int> groups;
    for (long long r : r2) groups[r] += 1;
    for (const auto& [rank, t] : groups)
      if (t > 1) var -= (static_cast<double>(t) * t * t - t) / 48.0;
    const double sd = std::sqrt(var);
    double z = res.w_plus - mu;
    z += z > 0 ? -0.5 : (z < 0 ? 0.5 : 0.0);  // continuity correction
    z /= sd;
    res.p = std::min(1.0, 2.0 * detail::normal_cdf(-std::abs(z)));
  }
  return res;
}

// ---- exact binomial test ---------------------------------------------------------

namespace detail {

inline double log_binom_pmf(long long k, long long n, double p) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
         k * std::log(p) + (n - k) * std::log1p(-p);
}

}  // namespace detail

// Exact two-sided binomial test: the sum of the probabilities of all outcomes
// no more likely than the observed count.
inline double binomial_test(long long k, long long n, double p0 = 0.5) {
  if (n <= 0) throw std::runtime_error("binomial_test: n must be positive");
  if (k < 0 || k > n) throw std::runtime_error("binomial_test: k out of range");
  if (p0 <= 0.0 || p0 >= 1.0)
    throw std::runtime_error("binomial_test: p0 must be in (0,1)");
  const double lk = detail::log_binom_pmf(k, n, p0);
  const double cutoff = lk + 1e-9;  // tolerate roundoff when comparing pmfs
  double p = 0.0;
  for (long long i = 0; i <= n; ++i) {
    const double li = detail::log_binom_pmf(i, n, p0);
    if (li <= cutoff) p += std::exp(li);
  }
  return std::min(1.0, p);
}

// ---- multiple-comparison adjustment ------------------------------------------------

struct AdjustedP {
  double p_adj = 1.0;
  bool significant = false;
};

inline std::vector<AdjustedP> bonferroni_adjust(const std::vector<double>& p_values,
                                                double alpha = 0.05) {
  const double m = static_cast<double>(p_values.size());
  std::vector<AdjustedP> out;
  for (double p : p_values) {
    if (p < 0.0 || p > 1.0)
      throw std::runtime_error("bonferroni: p-value out of [0,1]");
    AdjustedP a;
    a.p_adj = std::min(1.0, p * m);
    a.significant = a.p_adj < alpha;
    out.push_back(a);
  }
  return out;
}

// ---- listener-score tables -----------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

// MUSHRA-style scores: rows are listener x item, columns are systems.
struct ScoreTable {
  struct Row {
    std::string listener, item, system;
    double score;
  };
  std::vector<Row> rows;

  static ScoreTable from_csv(std::istream& in) {
    ScoreTable t;
    std::string line;
    if (!std::getline(in, line))
      throw std::runtime_error("score table: empty input");
    auto header = detail::split_csv_line(line);
    if (header != std::vector<std::string>{"listener", "item", "system", "score"})
      throw std::runtime_error(
          "score table: expected header listener,item,system,score");
    int lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto f = detail::split_csv_line(line);
      if (f.size() != 4)
        throw std::runtime_error("score table line " + std::to_string(lineno) +
                                 ": expected 4 fields");
      double score;
      try {
        score = std::stod(f[3]);
      } catch (const std::exception&) {
        throw std::runtime_error("score table line " + std::to_string(lineno) +
                                 ": bad score '" + f[3] + "'");
      }
      t.rows.push_back({f[0], f[1], f[2], score});
    }
    return t;
  }

  std::vector<std::string> systems() const {
    std::set<std::string> s;
    for (const auto& r : rows) s.insert(r.system);
    return {s.begin(), s.end()};
  }

  // Paired differences sys_a - sys_b keyed by (listener, item); every pair
  // must be complete.
  std::vector<double> paired_differences(const std::string& sys_a,
                                         const std::string& sys_b) const {
    std::map<std::pair<std::string, std::string>, std::pair<double, double>> cells;
    std::map<std::pair<std::string, std::string>, std::pair<bool, bool>> seen;
    for (const auto& r : rows) {
      if (r.system != sys_a && r.system != sys_b) continue;
      auto key = std::make_pair(r.listener, r.item);
      if (r.system == sys_a) {
        cells[key].first = r.score;
        seen[key].first = true;
      } else {
        cells[key].second = r.score;
        seen[key].second = true;
      }
    }
    std::vector<double> diffs;
    for (const auto& [key, flags] : seen) {
      if (!flags.first || !flags.second)
        throw std::runtime_error("score table: missing cell for listener '" +
                                 key.first + "' item '" + key.second + "'");
      diffs.push_back(cells[key].first - cells[key].second);
    }
    if (diffs.empty())
      throw std::runtime_error("score table: no paired scores for systems '" +
                               sys_a + "' and '" + sys_b + "'");
    return diffs;
  }
};

// Pairwise forced-choice trials; every trial names exactly one chosen side.
struct PreferenceTable {
  struct Trial {
    std::string listener, item, system_a, system_b;
    char choice;  // 'A' or 'B'
  };
  std::vector<Trial> trials;

  static PreferenceTable from_csv(std::istream& in) {
    PreferenceTable t;
    std::string line;
    if (!std::getline(in, line))
      throw std::runtime_error("preference table: empty input");
    auto header = detail::split_csv_line(line);
    if (header != std::vector<std::string>{"listener", "item", "system_a", "system_b",
                                           "choice"})
      throw std::runtime_error(
          "preference table: expected header listener,item,system_a,system_b,choice");
    int lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto f = detail::split_csv_line(line);
      if (f.size() != 5)
        throw std::runtime_error("preference table line " + std::to_string(lineno) +
                                 ": expected 5 fields");
      if (f[4] != "A" && f[4] != "B")
        throw std::runtime_error("preference table line " + std::to_string(lineno) +
                                 ": choice must be A or B, got '" + f[4] + "'");
      t.trials.push_back({f[0], f[1], f[2], f[3], f[4][0]});
    }
    return t;
  }

  // Restrict to trials over the given system pair, normalizing order so that
  // `sys_a` is side A.
  PreferenceTable filter_pair(const std::string& sys_a, const std::string& sys_b) const {
    PreferenceTable out;
    for (const auto& tr : trials) {
      if (tr.system_a == sys_a && tr.system_b == sys_b) {
        out.trials.push_back(tr);
      } else if (tr.system_a == sys_b && tr.system_b == sys_a) {
        Trial flipped = tr;
        std::swap(flipped.system_a, flipped.system_b);
        flipped.choice = tr.choice == 'A' ? 'B' : 'A';
        out.trials.push_back(flipped);
      }
    }
    return out;
  }
};

struct PreferenceResult {
  long long count_a = 0;
  long long count_b = 0;
  double p = 1.0;
};

inline PreferenceResult preference_tally(const PreferenceTable& table) {
  if (table.trials.empty())
    throw std::runtime_error("preference_tally: no trials");
  PreferenceResult r;
  for (const auto& t : table.trials)
    (t.choice == 'A' ? r.count_a : r.count_b) += 1;
  r.p = binomial_test(r.count_a, r.count_a + r.count_b, 0.5);
  return r;
}

// ---- stimulus assembly -------------------------------------------------------------

// prev ++ pause ++ curr with a fixed silent gap, as presented to listeners.
inline dsp::Waveform concat_with_pause(const dsp::Waveform& prev,
                                       const dsp::Waveform& curr, double pause_ms) {
  if (prev.sample_rate != curr.sample_rate)
    throw std::runtime_error("concat_with_pause: sample rates differ (" +
                             std::to_string(prev.sample_rate) + " vs " +
                             std::to_string(curr.sample_rate) + ")");
  if (pause_ms < 0) throw std::runtime_error("concat_with_pause: negative pause");
  const auto gap = static_cast<std::size_t>(
      std::llround(pause_ms * prev.sample_rate / 1000.0));
  dsp::Waveform out;
  out.sample_rate = prev.sample_rate;
  out.samples.reserve(prev.samples.size() + gap + curr.samples.size());
  out.samples.insert(out.samples.end(), prev.samples.begin(), prev.samples.end());
  out.samples.insert(out.samples.end(), gap, 0.0f);
  out.samples.insert(out.samples.end(), curr.samples.begin(), curr.samples.end());
  return out;
}

}  // namespace ctts::stats
