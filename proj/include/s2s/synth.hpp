#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "s2s/mining.hpp"
#include "s2s/quantizer.hpp"
#include "s2s/textmetrics.hpp"

namespace s2s {

// Edit and rendering noise applied to one synthetic pair.
struct NoiseModel {
  double sub_rate = 0.0;
  double ins_rate = 0.0;
  double del_rate = 0.0;
  double frame_jitter = 0.0;
  int dup_min = 1;
  int dup_max = 1;

  void validate() const;
};

// A weighted mixture entry; only the edit rates vary between components.
struct MixtureComponent {
  double weight = 1.0;
  double sub_rate = 0.0;
  double ins_rate = 0.0;
  double del_rate = 0.0;
};

struct SynthConfig {
  std::size_t n_pairs = 1000;
  std::size_t latent_vocab = 1000;
  std::size_t k = 200;
  int len_min = 6;
  int len_max = 16;
  int units_per_token_min = 1;
  int units_per_token_max = 3;
  std::size_t feature_dim = 16;
  bool emit_features = false;
  MetricKind metric = MetricKind::bleu;
  NoiseModel noise;
  // Empty means a single component using noise's edit rates.
  std::vector<MixtureComponent> mixture;

  void validate() const;
};

struct SynthCorpus {
  std::vector<PairRecord> pairs;
  // Two sequences per pair (h then r), ids equal to h_id / r_id. Empty
  // unless emit_features is set.
  std::vector<FeatureSequence> features;
  // The centroids the features were drawn around, as an l2 codebook.
  Codebook true_codebook;
};

// Deterministic in (config, seed) and independent of `threads`. The latent
// transcripts depend only on seed and pair index, so two configs that differ
// only in k render the same latent corpus.
SynthCorpus gen_corpus(const SynthConfig& config, std::uint64_t seed, unsigned threads = 0);

// Unit rendering of each latent token: an injective map into adjacent-distinct
// unit strings.
std::vector<std::vector<UnitId>> token_unit_map(const SynthConfig& config, std::uint64_t seed);

SynthConfig read_synth_config(const std::filesystem::path& path);
SynthConfig synth_config_from_json(const std::string& text);
std::string synth_config_to_json(const SynthConfig& c);

}  // namespace s2s
