#include "s2s/textmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "s2s/error.hpp"

namespace s2s {

namespace {

using Counts = std::unordered_map<std::u32string_view, int>;

// n-gram counts over a scalar sequence; keys view into `seq`.
Counts count_ngrams(std::u32string_view seq, int n) {
  Counts counts;
  if (static_cast<int>(seq.size()) < n) return counts;
  counts.reserve(seq.size());
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[seq.substr(i, n)];
  return counts;
}

// Clipped matches and hypothesis n-gram total.
std::pair<long, long> clipped_matches(std::u32string_view hyp, std::u32string_view ref, int n) {
  const Counts h = count_ngrams(hyp, n);
  const Counts r = count_ngrams(ref, n);
  long matches = 0;
  long total = 0;
  for (const auto& [gram, c] : h) {
    total += c;
    auto it = r.find(gram);
    if (it != r.end()) matches += std::min(c, it->second);
  }
  return {matches, total};
}

std::u32string as_scalars(std::span<const Token> toks) {
  return std::u32string(toks.begin(), toks.end());
}

char32_t lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  if ((c >= 0xC0 && c <= 0xDE) && c != 0xD7) return c + 32;  // Latin-1
  if (c >= 0x391 && c <= 0x3AB && c != 0x3A2) return c + 32;  // Greek
  if (c >= 0x410 && c <= 0x42F) return c + 32;                // Cyrillic
  if (c >= 0x400 && c <= 0x40F) return c + 80;
  return c;
}

std::vector<std::u32string> split_scalars(const std::u32string& s) {
  std::vector<std::u32string> out;
  std::u32string cur;
  for (char32_t c : s) {
    if (is_unicode_space(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string encode(const std::u32string& s) {
  std::string out;
  for (char32_t c : s) utf8_append(out, c);
  return out;
}

}  // namespace

bool is_unicode_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F ||
         c == 0x3000;
}

bool is_punctuation(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  return c == 0xA1 || c == 0xA7 || c == 0xAB || c == 0xB6 || c == 0xB7 || c == 0xBB || c == 0xBF ||
         (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) || (c >= 0x3001 && c <= 0x3003) ||
         (c >= 0x3008 && c <= 0x3011) || (c >= 0xFF01 && c <= 0xFF0F);
}

MetricScore sentence_bleu(std::span<const Token> hyp, std::span<const Token> ref, int max_n) {
  if (max_n < 1) throw ValidationError("BLEU max_n must be >= 1");
  MetricScore score;
  score.metric_name = "bleu";
  if (hyp.empty()) {
    score.value = ref.empty() ? 1.0 : 0.0;
    score.brevity_penalty = ref.empty() ? 1.0 : 0.0;
    return score;
  }
  const std::u32string h = as_scalars(hyp);
  const std::u32string r = as_scalars(ref);
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 1; n <= max_n; ++n) {
    auto [m, c] = clipped_matches(h, r, n);
    double p;
    if (n == 1) {
      p = static_cast<double>(m) / static_cast<double>(c);
    } else {
      p = static_cast<double>(m + 1) / static_cast<double>(c + 1);
    }
    score.per_order.push_back(p);
    if (p <= 0.0) {
      zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  const double hl = static_cast<double>(hyp.size());
  const double rl = static_cast<double>(ref.size());
  score.brevity_penalty = hl >= rl ? 1.0 : std::exp(1.0 - rl / hl);
  score.value = zero ? 0.0 : score.brevity_penalty * std::exp(log_sum / max_n);
  score.value = std::clamp(score.value, 0.0, 1.0);
  return score;
}

MetricScore sentence_bleu(const std::vector<std::string>& hyp, const std::vector<std::string>& ref,
                          int max_n) {
  std::unordered_map<std::string_view, Token> vocab;
  auto intern = [&](const std::vector<std::string>& words) {
    TokenSeq out;
    out.reserve(words.size());
    for (const auto& w : words) {
      auto [it, inserted] = vocab.try_emplace(w, static_cast<Token>(vocab.size()));
      out.push_back(it->second);
    }
    return out;
  };
  const TokenSeq h = intern(hyp);
  const TokenSeq r = intern(ref);
  return sentence_bleu(h, r, max_n);
}

MetricScore sentence_chrf(std::string_view hyp, std::string_view ref, int max_n, double beta) {
  if (max_n < 1) throw ValidationError("ChrF max_n must be >= 1");
  if (!(beta > 0.0)) throw ValidationError("ChrF beta must be positive");
  MetricScore score;
  score.metric_name = "chrf";
  auto strip = [](std::string_view s) {
    std::u32string out;
    for (char32_t c : utf8_decode(s)) {
      if (!is_unicode_space(c)) out.push_back(c);
    }
    return out;
  };
  const std::u32string h = strip(hyp);
  const std::u32string r = strip(ref);
  if (h.empty() || r.empty()) {
    score.value = (h.empty() && r.empty()) ? 1.0 : 0.0;
    return score;
  }
  const double b2 = beta * beta;
  double sum = 0.0;
  int used = 0;
  for (int n = 1; n <= max_n; ++n) {
    const long h_total = std::max<long>(0, static_cast<long>(h.size()) - n + 1);
    const long r_total = std::max<long>(0, static_cast<long>(r.size()) - n + 1);
    if (h_total == 0 && r_total == 0) continue;
    auto [m, c] = clipped_matches(h, r, n);
    const double p = h_total > 0 ? static_cast<double>(m) / static_cast<double>(h_total) : 0.0;
    const double rc = r_total > 0 ? static_cast<double>(m) / static_cast<double>(r_total) : 0.0;
    const double denom = b2 * p + rc;
    const double f = denom > 0.0 ? (1.0 + b2) * p * rc / denom : 0.0;
    score.per_order.push_back(f);
    sum += f;
    ++used;
  }
  score.value = used > 0 ? std::clamp(sum / used, 0.0, 1.0) : 1.0;
  return score;
}

std::vector<std::string> tokenize_text(std::string_view s) {
  std::u32string lowered;
  for (char32_t c : utf8_decode(s)) lowered.push_back(lower(c));
  std::vector<std::string> out;
  for (auto& tok : split_scalars(lowered)) {
    std::size_t lo = 0;
    std::size_t hi = tok.size();
    while (lo < hi && is_punctuation(tok[lo])) ++lo;
    while (hi > lo && is_punctuation(tok[hi - 1])) --hi;
    if (lo < hi) out.push_back(encode(tok.substr(lo, hi - lo)));
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  for (auto& tok : split_scalars(utf8_decode(s))) out.push_back(encode(tok));
  return out;
}

MetricKind parse_metric(const std::string& s) {
  if (s == "bleu") return MetricKind::bleu;
  if (s == "chrf") return MetricKind::chrf;
  throw ValidationError("unknown metric '" + s + "' (expected bleu or chrf)");
}

std::string to_string(MetricKind m) { return m == MetricKind::bleu ? "bleu" : "chrf"; }

double text_metric(std::string_view hyp, std::string_view ref, MetricKind metric, TextMode mode) {
  auto words = [mode](std::string_view s) {
    return mode == TextMode::tokenized ? tokenize_text(s) : split_whitespace(s);
  };
  if (metric == MetricKind::bleu) return sentence_bleu(words(hyp), words(ref)).value;
  if (mode == TextMode::raw) return sentence_chrf(hyp, ref).value;
  auto join = [](const std::vector<std::string>& ws) {
    std::string out;
    for (std::size_t i = 0; i < ws.size(); ++i) {
      if (i) out.push_back(' ');
      out += ws[i];
    }
    return out;
  };
  return sentence_chrf(join(words(hyp)), join(words(ref))).value;
}

double unit_metric(const UnitSequence& hyp, const UnitSequence& ref, MetricKind metric) {
  if (metric == MetricKind::bleu) return sentence_bleu(hyp.units(), ref.units()).value;
  return sentence_chrf(units_to_chars(hyp), units_to_chars(ref)).value;
}

}  // namespace s2s
