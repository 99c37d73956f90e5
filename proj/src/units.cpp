#include "s2s/units.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "s2s/error.hpp"

namespace s2s {

UnitSequence::UnitSequence(std::vector<UnitId> units, std::size_t vocab_size)
    : units_(std::move(units)), vocab_size_(vocab_size) {
  if (vocab_size_ == 0) throw ValidationError("vocab_size must be positive");
  for (std::size_t i = 0; i < units_.size(); ++i) {
    if (units_[i] >= vocab_size_) {
      throw ValidationError("unit " + std::to_string(units_[i]) + " at position " +
                            std::to_string(i) + " is outside vocabulary of size " +
                            std::to_string(vocab_size_));
    }
  }
}

bool UnitSequence::is_deduplicated() const {
  return std::adjacent_find(units_.begin(), units_.end()) == units_.end();
}

UnitSequence dedup(const UnitSequence& seq) {
  std::vector<UnitId> out;
  out.reserve(seq.size());
  std::unique_copy(seq.units().begin(), seq.units().end(), std::back_inserter(out));
  return UnitSequence(std::move(out), seq.vocab_size());
}

void utf8_append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::u32string utf8_decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto lead = static_cast<unsigned char>(s[i]);
    int extra = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      extra = 1;
      cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
      extra = 2;
      cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
      extra = 3;
      cp = lead & 0x07;
    } else {
      throw ParseError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (extra > 0 && i + extra >= s.size()) {
      throw ParseError("truncated UTF-8 sequence at offset " + std::to_string(i));
    }
    for (int k = 1; k <= extra; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) {
        throw ParseError("invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
      }
      cp = (cp << 6) | (b & 0x3F);
    }
    out.push_back(cp);
    i += 1 + extra;
  }
  return out;
}

std::string units_to_chars(const UnitSequence& seq) {
  if (seq.vocab_size() > kMaxCharVocab) {
    throw ValidationError("vocab_size " + std::to_string(seq.vocab_size()) +
                          " exceeds the Private Use Area capacity of " +
                          std::to_string(kMaxCharVocab) + " characters (U+E000..U+F8FF)");
  }
  std::string out;
  out.reserve(seq.size() * 3);
  for (UnitId u : seq.units()) utf8_append(out, kUnitCharBase + u);
  return out;
}

UnitSequence chars_to_units(std::string_view s, std::size_t vocab_size) {
  if (vocab_size > kMaxCharVocab) {
    throw ValidationError("vocab_size " + std::to_string(vocab_size) +
                          " exceeds the Private Use Area capacity of " +
                          std::to_string(kMaxCharVocab));
  }
  const std::u32string cps = utf8_decode(s);
  std::vector<UnitId> units;
  units.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t cp = cps[i];
    if (cp < kUnitCharBase || cp >= kUnitCharBase + vocab_size) {
      throw ParseError("character at index " + std::to_string(i) +
                       " is not a unit character for vocabulary size " +
                       std::to_string(vocab_size));
    }
    units.push_back(static_cast<UnitId>(cp - kUnitCharBase));
  }
  return UnitSequence(std::move(units), vocab_size);
}

void validate_utterance_id(std::string_view id) {
  if (id.empty()) throw ValidationError("utterance id is empty");
  if (id.find_first_of("\t\n\r") != std::string_view::npos) {
    throw ValidationError("utterance id '" + std::string(id) + "' contains a tab or newline");
  }
}

std::vector<Utterance> parse_units(std::string_view text, std::size_t vocab_size) {
  struct Raw {
    std::string id;
    std::vector<UnitId> units;
  };
  std::vector<Raw> raw;
  std::unordered_set<std::string> seen;
  UnitId max_id = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    auto fail = [&](const std::string& what) {
      return ParseError("line " + std::to_string(line_no) + ": " + what);
    };
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) throw fail("missing tab separator");
    Raw r;
    r.id = std::string(line.substr(0, tab));
    if (r.id.empty()) throw fail("empty utterance id");
    if (r.id.find('\r') != std::string::npos) throw fail("carriage return in id");
    std::string_view rest = line.substr(tab + 1);
    std::size_t i = 0;
    while (i < rest.size()) {
      if (rest[i] == ' ') {
        ++i;
        continue;
      }
      UnitId v = 0;
      const char* first = rest.data() + i;
      const char* last = rest.data() + rest.size();
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || (ptr != last && *ptr != ' ')) {
        throw fail("invalid unit id '" + std::string(rest.substr(i, rest.find(' ', i) - i)) + "'");
      }
      r.units.push_back(v);
      max_id = std::max(max_id, v);
      i = static_cast<std::size_t>(ptr - rest.data());
    }
    if (!seen.insert(r.id).second) throw fail("duplicate utterance id '" + r.id + "'");
    raw.push_back(std::move(r));
  }
  const std::size_t k = vocab_size == 0 ? static_cast<std::size_t>(max_id) + 1 : vocab_size;
  std::vector<Utterance> out;
  out.reserve(raw.size());
  for (std::size_t n = 0; n < raw.size(); ++n) {
    try {
      out.push_back(Utterance{std::move(raw[n].id), UnitSequence(std::move(raw[n].units), k), std::nullopt});
    } catch (const ValidationError& e) {
      throw ParseError("line " + std::to_string(n + 1) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Utterance> read_units_file(const std::filesystem::path& path, std::size_t vocab_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open unit file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_units(ss.str(), vocab_size);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string format_units(std::span<const Utterance> utts) {
  std::string out;
  std::unordered_set<std::string_view> seen;
  for (const auto& u : utts) {
    validate_utterance_id(u.id);
    if (!seen.insert(u.id).second) throw ValidationError("duplicate utterance id '" + u.id + "'");
    out += u.id;
    out.push_back('\t');
    for (std::size_t i = 0; i < u.units.size(); ++i) {
      if (i) out.push_back(' ');
      out += std::to_string(u.units[i]);
    }
    out.push_back('\n');
  }
  return out;
}

void write_units_file(std::span<const Utterance> utts, const std::filesystem::path& path) {
  const std::string text = format_units(utts);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace s2s
