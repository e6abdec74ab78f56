#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ctts::corpus {

// Structured utterance ID, e.g. "LJ026-0047" -> chapter 26, chunk 47.
// The raw string is kept so re-rendering is exact regardless of padding.
struct UtteranceId {
  int chapter = 0;
  int chunk = 0;
  std::string raw;

  bool operator==(const UtteranceId& o) const {
    return chapter == o.chapter && chunk == o.chunk;
  }
};

// Accepts `<alpha prefix><digits>-<digits>`; the common corpus form is a
// 2-letter prefix with 3+4 digit zero-padded fields.
inline UtteranceId parse_utterance_id(const std::string& s) {
  size_t i = 0;
  while (i < s.size() && std::isalpha(static_cast<unsigned char>(s[i]))) ++i;
  size_t d1 = i;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i == d1 || i >= s.size() || s[i] != '-')
    throw std::runtime_error("malformed utterance ID: '" + s + "'");
  size_t d2 = ++i;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i == d2 || i != s.size())
    throw std::runtime_error("malformed utterance ID: '" + s + "'");
  UtteranceId id;
  id.chapter = std::stoi(s.substr(d1, s.find('-') - d1));
  id.chunk = std::stoi(s.substr(d2));
  id.raw = s;
  if (id.chapter <= 0 || id.chunk <= 0)
    throw std::runtime_error("utterance ID fields must be positive: '" + s + "'");
  return id;
}

struct UtteranceRecord {
  UtteranceId id;
  std::string raw_text;   // verbatim second field, kept for round-tripping
  std::string text;       // normalized transcript used for synthesis
  std::string audio_path; // resolved lazily; empty until features are requested
};

// Ordered pair of consecutive utterances from the same chapter; the unit of
// context-conditioned training.
struct BigramPair {
  UtteranceRecord prev;  // utterance N-1
  UtteranceRecord curr;  // utterance N
};

struct SplitSpec {
  std::size_t train_count = 0;
  std::size_t val_count = 0;
  std::size_t test_count = 0;
  std::uint64_t seed = 0;
};

// Parses pipe-delimited metadata, one utterance per line: `ID|raw|normalized`.
// File order is preserved.
inline std::vector<UtteranceRecord> parse_metadata(std::istream& in) {
  std::vector<UtteranceRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      size_t bar = line.find('|', start);
      if (bar == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, bar - start));
      start = bar + 1;
    }
    if (fields.size() != 3)
      throw std::runtime_error("metadata line " + std::to_string(lineno) +
                               ": expected 3 pipe-delimited fields, got " +
                               std::to_string(fields.size()));
    UtteranceRecord rec;
    try {
      rec.id = parse_utterance_id(fields[0]);
    } catch (const std::exception& e) {
      throw std::runtime_error("metadata line " + std::to_string(lineno) + ": " +
                               e.what());
    }
    rec.raw_text = fields[1];
    rec.text = fields[2];
    if (rec.text.empty())
      throw std::runtime_error("metadata line " + std::to_string(lineno) +
                               ": empty normalized text");
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::vector<UtteranceRecord> parse_metadata_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metadata file: " + path);
  return parse_metadata(in);
}

inline std::string serialize_record(const UtteranceRecord& r) {
  return r.id.raw + "|" + r.raw_text + "|" + r.text;
}

// Emits one pair per record whose immediate predecessor (same chapter,
// chunk-1) exists. Chapter boundaries and chunk gaps break the chain, so
// chapter-initial and gap-adjacent records yield no pair.
inline std::vector<BigramPair> build_bigram_pairs(
    std::vector<UtteranceRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const UtteranceRecord& a, const UtteranceRecord& b) {
              return std::pair(a.id.chapter, a.id.chunk) <
                     std::pair(b.id.chapter, b.id.chunk);
            });
  for (size_t i = 1; i < records.size(); ++i) {
    if (records[i - 1].id == records[i].id)
      throw std::runtime_error("duplicate utterance ID: " + records[i].id.raw);
  }
  std::vector<BigramPair> pairs;
  for (size_t i = 1; i < records.size(); ++i) {
    const auto& p = records[i - 1];
    const auto& c = records[i];
    if (p.id.chapter == c.id.chapter && p.id.chunk + 1 == c.id.chunk)
      pairs.push_back({p, c});
  }
  return pairs;
}

// Seeded random partition into train/val/test of exactly the requested sizes.
inline std::array<std::vector<BigramPair>, 3> split_dataset(
    const std::vector<BigramPair>& pairs, const SplitSpec& spec) {
  std::size_t want = spec.train_count + spec.val_count + spec.test_count;
  if (want > pairs.size())
    throw std::runtime_error("infeasible split: requested " + std::to_string(want) +
                             " of " + std::to_string(pairs.size()) + " pairs");
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::array<std::vector<BigramPair>, 3> out;
  std::size_t at = 0;
  const std::size_t counts[3] = {spec.train_count, spec.val_count, spec.test_count};
  for (int part = 0; part < 3; ++part)
    for (std::size_t i = 0; i < counts[part]; ++i) out[part].push_back(pairs[order[at++]]);
  return out;
}

// Manifest lines are the metadata format plus a fourth field naming the
// predecessor ID, or `-` for records without one.
inline std::string serialize_manifest_line(const UtteranceRecord& r,
                                           const std::string& prev_id) {
  return serialize_record(r) + "|" + (prev_id.empty() ? "-" : prev_id);
}

struct ManifestEntry {
  UtteranceRecord record;
  std::string prev_id;  // empty when the record has no predecessor
};

inline std::vector<ManifestEntry> parse_manifest(std::istream& in) {
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto last = line.rfind('|');
    if (last == std::string::npos)
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": missing predecessor field");
    std::string prev = line.substr(last + 1);
    std::istringstream head(line.substr(0, last));
    auto recs = parse_metadata(head);
    if (recs.size() != 1)
      throw std::runtime_error("manifest line " + std::to_string(lineno) +
                               ": malformed record");
    out.push_back({recs[0], prev == "-" ? "" : prev});
  }
  return out;
}

inline std::vector<ManifestEntry> parse_manifest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  return parse_manifest(in);
}

}  // namespace ctts::corpus
