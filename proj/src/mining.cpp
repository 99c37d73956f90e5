#include "s2s/mining.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "s2s/error.hpp"
#include "s2s/parallel.hpp"

namespace s2s {

namespace {

using ordered_json = nlohmann::ordered_json;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string pad_id(const std::string& prefix, std::size_t i, std::size_t total) {
  std::string digits = std::to_string(i);
  std::size_t width = std::max<std::size_t>(6, std::to_string(total).size());
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

using UnorderedPair = std::pair<std::size_t, std::size_t>;  // first < second

// Up to `cap` distinct unordered pairs from `members`, sampled by `rng`.
std::vector<UnorderedPair> sample_pairs(const std::vector<std::size_t>& members, std::size_t cap,
                                        std::mt19937_64& rng) {
  const std::size_t m = members.size();
  const std::size_t all = m * (m - 1) / 2;
  std::vector<UnorderedPair> out;
  auto make = [&](std::size_t i, std::size_t j) {
    std::size_t a = members[i], b = members[j];
    if (a > b) std::swap(a, b);
    return UnorderedPair{a, b};
  };
  if (all <= 4 * cap) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) out.push_back(make(i, j));
    }
    if (out.size() > cap) {
      std::shuffle(out.begin(), out.end(), rng);
      out.resize(cap);
    }
    return out;
  }
  std::set<UnorderedPair> chosen;
  std::uniform_int_distribution<std::size_t> pick(0, m - 1);
  while (chosen.size() < cap) {
    const std::size_t i = pick(rng);
    const std::size_t j = pick(rng);
    if (i == j) continue;
    chosen.insert(make(i, j));
  }
  return {chosen.begin(), chosen.end()};
}

ordered_json units_json(const UnitSequence& s) {
  auto arr = ordered_json::array();
  for (UnitId u : s.units()) arr.push_back(u);
  return arr;
}

}  // namespace

void PairRecord::validate() const {
  if (target && !(*target >= 0.0 && *target <= 1.0)) {
    throw ValidationError("pair '" + pair_id + "': target " + std::to_string(*target) + " outside [0,1]");
  }
  if (h_units.vocab_size() != r_units.vocab_size()) {
    throw ValidationError("pair '" + pair_id + "': h_units and r_units disagree on vocab_size");
  }
}

std::vector<PairRecord> mine_pairs(std::span<const Utterance> utts, const MiningOptions& opts) {
  if (opts.n < 1) throw ValidationError("n-gram order must be >= 1");
  if (opts.max_pairs_per_ngram == 0) throw ValidationError("max_pairs_per_ngram must be positive");

  // Inverted index: joined n-gram -> utterances containing it (each once).
  std::map<std::string, std::vector<std::size_t>> index;
  for (std::size_t u = 0; u < utts.size(); ++u) {
    if (!utts[u].transcript) throw ValidationError("utterance '" + utts[u].id + "' has no transcript");
    const auto words = tokenize_text(*utts[u].transcript);
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i + opts.n <= words.size(); ++i) {
      std::string key = words[i];
      for (int k = 1; k < opts.n; ++k) {
        key.push_back('\x1f');
        key += words[i + k];
      }
      if (seen.insert(key).second) index[key].push_back(u);
    }
  }

  std::set<UnorderedPair> pairs;
  for (const auto& [key, members] : index) {
    if (members.size() < 2) continue;
    std::mt19937_64 rng(opts.seed ^ fnv1a(key));
    for (const auto& p : sample_pairs(members, opts.max_pairs_per_ngram, rng)) pairs.insert(p);
  }

  std::vector<UnorderedPair> selected(pairs.begin(), pairs.end());
  std::mt19937_64 rng(opts.seed);
  if (selected.size() > opts.max_total) {
    std::shuffle(selected.begin(), selected.end(), rng);
    selected.resize(opts.max_total);
    std::sort(selected.begin(), selected.end());
  }

  std::vector<PairRecord> out;
  out.reserve(selected.size());
  for (std::size_t i = 0; i < selected.size(); ++i) {
    auto [a, b] = selected[i];
    // Orientation: one deterministic coin per pair.
    std::mt19937_64 coin(opts.seed + 0x9E3779B97F4A7C15ULL * (i + 1));
    if (coin() & 1ULL) std::swap(a, b);
    const Utterance& h = utts[a];
    const Utterance& r = utts[b];
    PairRecord p;
    p.pair_id = pad_id("m", i, selected.size());
    p.h_id = h.id;
    p.r_id = r.id;
    const std::size_t k = std::max(h.units.vocab_size(), r.units.vocab_size());
    p.h_units = UnitSequence(h.units.units(), k);
    p.r_units = UnitSequence(r.units.units(), k);
    p.h_transcript = h.transcript;
    p.r_transcript = r.transcript;
    out.push_back(std::move(p));
  }
  return out;
}

void attach_targets(std::span<PairRecord> pairs, MetricKind metric, TextMode mode, unsigned threads) {
  for (const auto& p : pairs) {
    if (!p.h_transcript || !p.r_transcript) {
      throw ValidationError("pair '" + p.pair_id + "' is missing a transcript");
    }
  }
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    pairs[i].target = text_metric(*pairs[i].h_transcript, *pairs[i].r_transcript, metric, mode);
  });
}

SplitManifest split_pairs(std::span<const PairRecord> pairs, SplitFractions f, std::uint64_t seed) {
  if (!(f.train > 0.0 && f.dev > 0.0 && f.test > 0.0)) {
    throw ValidationError("split fractions must all be positive");
  }
  if (std::abs(f.train + f.dev + f.test - 1.0) > 1e-9) {
    throw ValidationError("split fractions must sum to 1");
  }
  if (pairs.size() < 3) throw ValidationError("cannot split fewer than 3 pairs");
  std::vector<std::string> ids;
  ids.reserve(pairs.size());
  for (const auto& p : pairs) ids.push_back(p.pair_id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ValidationError("duplicate pair_id in split input");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const double n = static_cast<double>(ids.size());
  auto n_dev = static_cast<std::size_t>(std::llround(n * f.dev));
  auto n_test = static_cast<std::size_t>(std::llround(n * f.test));
  n_dev = std::max<std::size_t>(1, n_dev);
  n_test = std::max<std::size_t>(1, n_test);
  if (n_dev + n_test >= ids.size()) throw ValidationError("split leaves no training pairs");
  SplitManifest m;
  m.dev.assign(ids.begin(), ids.begin() + n_dev);
  m.test.assign(ids.begin() + n_dev, ids.begin() + n_dev + n_test);
  m.train.assign(ids.begin() + n_dev + n_test, ids.end());
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.dev.begin(), m.dev.end());
  std::sort(m.test.begin(), m.test.end());
  return m;
}

std::vector<PairRecord> read_pair_file(const std::filesystem::path& path, std::size_t vocab_size) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open pair file " + path.string());
  struct Raw {
    PairRecord rec;
    std::vector<UnitId> h, r;
  };
  std::vector<Raw> raw;
  std::string line;
  std::size_t line_no = 0;
  UnitId max_id = 0;
  std::unordered_set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ": line " + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      Raw r;
      r.rec.pair_id = j.at("pair_id").get<std::string>();
      r.rec.h_id = j.at("h_id").get<std::string>();
      r.rec.r_id = j.at("r_id").get<std::string>();
      r.h = j.at("h_units").get<std::vector<UnitId>>();
      r.r = j.at("r_units").get<std::vector<UnitId>>();
      for (UnitId u : r.h) max_id = std::max(max_id, u);
      for (UnitId u : r.r) max_id = std::max(max_id, u);
      if (j.contains("h_transcript") && !j["h_transcript"].is_null()) r.rec.h_transcript = j["h_transcript"].get<std::string>();
      if (j.contains("r_transcript") && !j["r_transcript"].is_null()) r.rec.r_transcript = j["r_transcript"].get<std::string>();
      if (j.contains("target") && !j["target"].is_null()) r.rec.target = j["target"].get<double>();
      if (!ids.insert(r.rec.pair_id).second) throw ParseError("duplicate pair_id '" + r.rec.pair_id + "'");
      raw.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  const std::size_t k = vocab_size == 0 ? static_cast<std::size_t>(max_id) + 1 : vocab_size;
  std::vector<PairRecord> out;
  out.reserve(raw.size());
  for (auto& r : raw) {
    try {
      r.rec.h_units = UnitSequence(std::move(r.h), k);
      r.rec.r_units = UnitSequence(std::move(r.r), k);
      r.rec.validate();
    } catch (const ValidationError& e) {
      throw ParseError(path.string() + ": pair '" + r.rec.pair_id + "': " + e.what());
    }
    out.push_back(std::move(r.rec));
  }
  return out;
}

void write_pair_file(std::span<const PairRecord> pairs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& p : pairs) {
    p.validate();
    ordered_json j;
    j["pair_id"] = p.pair_id;
    j["h_id"] = p.h_id;
    j["r_id"] = p.r_id;
    j["h_units"] = units_json(p.h_units);
    j["r_units"] = units_json(p.r_units);
    if (p.h_transcript) j["h_transcript"] = *p.h_transcript;
    if (p.r_transcript) j["r_transcript"] = *p.r_transcript;
    if (p.target) j["target"] = *p.target;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

SplitManifest read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open split manifest " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    SplitManifest m;
    m.train = j.at("train").get<std::vector<std::string>>();
    m.dev = j.at("dev").get<std::vector<std::string>>();
    m.test = j.at("test").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_split_manifest(const SplitManifest& m, const std::filesystem::path& path) {
  ordered_json j;
  j["train"] = m.train;
  j["dev"] = m.dev;
  j["test"] = m.test;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump() << '\n';
}

}  // namespace s2s
