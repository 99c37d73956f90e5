#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "s2s/units.hpp"

namespace s2s {

// Tokens are opaque integers; words are interned before scoring.
using Token = std::uint32_t;
using TokenSeq = std::vector<Token>;

struct MetricScore {
  double value = 0.0;
  std::string metric_name;
  // BLEU: per-order (smoothed) precisions. ChrF: per-order F-scores, with
  // skipped orders omitted.
  std::vector<double> per_order;
  double brevity_penalty = 1.0;
};

// Sentence BLEU with add-one smoothing on every order >= 2.
MetricScore sentence_bleu(std::span<const Token> hyp, std::span<const Token> ref, int max_n = 4);
MetricScore sentence_bleu(const std::vector<std::string>& hyp, const std::vector<std::string>& ref,
                          int max_n = 4);

// Character n-gram F-score over Unicode scalars with whitespace removed.
MetricScore sentence_chrf(std::string_view hyp, std::string_view ref, int max_n = 6, double beta = 2.0);

// Lowercases, splits on Unicode whitespace and strips leading/trailing
// punctuation from every token. Lowercasing covers ASCII, Latin-1, Greek and
// Cyrillic letters.
std::vector<std::string> tokenize_text(std::string_view s);

// Whitespace split only; case and punctuation preserved.
std::vector<std::string> split_whitespace(std::string_view s);

bool is_unicode_space(char32_t c);
bool is_punctuation(char32_t c);

enum class MetricKind { bleu, chrf };
enum class TextMode { tokenized, raw };

MetricKind parse_metric(const std::string& s);
std::string to_string(MetricKind m);

// Text-side target: BLEU over words (tokenize_text or whitespace split) or
// ChrF over characters (after the same normalisation, re-joined by spaces).
double text_metric(std::string_view hyp, std::string_view ref, MetricKind metric, TextMode mode);

// Naive unit-side metric: BLEU over unit ids or ChrF over unit characters.
double unit_metric(const UnitSequence& hyp, const UnitSequence& ref, MetricKind metric);

}  // namespace s2s
