#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace s2s {

using UnitId = std::uint32_t;

// Largest vocabulary that fits in the Private Use Area starting at U+E000.
inline constexpr std::size_t kMaxCharVocab = 6400;
inline constexpr char32_t kUnitCharBase = 0xE000;

// Ordered discrete acoustic-unit ids for one utterance. Every id is below
// vocab_size; the sequence may be empty.
class UnitSequence {
 public:
  UnitSequence() = default;
  UnitSequence(std::vector<UnitId> units, std::size_t vocab_size);

  const std::vector<UnitId>& units() const { return units_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t size() const { return units_.size(); }
  bool empty() const { return units_.empty(); }
  UnitId operator[](std::size_t i) const { return units_[i]; }

  // True when no two adjacent ids are equal.
  bool is_deduplicated() const;

  friend bool operator==(const UnitSequence&, const UnitSequence&) = default;

 private:
  std::vector<UnitId> units_;
  std::size_t vocab_size_ = 1;
};

struct Utterance {
  std::string id;
  UnitSequence units;
  std::optional<std::string> transcript;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

// Collapses every maximal run of equal adjacent ids to its first element.
UnitSequence dedup(const UnitSequence& seq);

// Maps unit i to the code point U+E000 + i, UTF-8 encoded.
std::string units_to_chars(const UnitSequence& seq);

// Inverse of units_to_chars. Throws ParseError naming the offending
// code-point index when a scalar is outside [U+E000, U+E000 + vocab_size).
UnitSequence chars_to_units(std::string_view s, std::size_t vocab_size);

// Decodes UTF-8 into scalar values. Throws ParseError on invalid input.
std::u32string utf8_decode(std::string_view s);
void utf8_append(std::string& out, char32_t cp);

// Unit file: one `<id>\t<space separated ids>` per line. vocab_size is the
// K assigned to every sequence read; 0 means "max id + 1 over the file".
std::vector<Utterance> read_units_file(const std::filesystem::path& path,
                                       std::size_t vocab_size = 0);
std::vector<Utterance> parse_units(std::string_view text, std::size_t vocab_size = 0);
void write_units_file(std::span<const Utterance> utts, const std::filesystem::path& path);
std::string format_units(std::span<const Utterance> utts);

// Throws ValidationError unless id is non-empty and free of tab/newline.
void validate_utterance_id(std::string_view id);

}  // namespace s2s
