#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s2s/textmetrics.hpp"
#include "s2s/units.hpp"

namespace s2s {

// One (hypothesis, reference) pair with an optional text-side target.
struct PairRecord {
  std::string pair_id;
  std::string h_id;
  std::string r_id;
  UnitSequence h_units;
  UnitSequence r_units;
  std::optional<std::string> h_transcript;
  std::optional<std::string> r_transcript;
  std::optional<double> target;

  // Throws ValidationError if the target is outside [0,1] or the two unit
  // sequences disagree on vocab_size.
  void validate() const;

  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> dev;
  std::vector<std::string> test;
};

struct MiningOptions {
  int n = 4;
  std::size_t max_pairs_per_ngram = 50;
  std::size_t max_total = 1'000'000;
  std::uint64_t seed = 0;
};

// Pairs of utterances sharing at least one word n-gram (after tokenize_text),
// found through an n-gram inverted index. Output is sorted by pair_id.
std::vector<PairRecord> mine_pairs(std::span<const Utterance> utts, const MiningOptions& opts);

// Sets target = text metric(h_transcript, r_transcript).
void attach_targets(std::span<PairRecord> pairs, MetricKind metric, TextMode mode, unsigned threads = 0);

struct SplitFractions {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};

// Seeded shuffle; dev and test sizes are rounded, train takes the remainder.
SplitManifest split_pairs(std::span<const PairRecord> pairs, SplitFractions fractions, std::uint64_t seed);

// Pair files are JSON Lines. vocab_size 0 infers K as max id + 1 over the file.
std::vector<PairRecord> read_pair_file(const std::filesystem::path& path, std::size_t vocab_size = 0);
void write_pair_file(std::span<const PairRecord> pairs, const std::filesystem::path& path);

SplitManifest read_split_manifest(const std::filesystem::path& path);
void write_split_manifest(const SplitManifest& m, const std::filesystem::path& path);

}  // namespace s2s
