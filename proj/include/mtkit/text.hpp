#pragma once

// UTF-8 helpers and the character classes shared by the tokenizers.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mtkit::text {

/// Byte offset of the first malformed sequence, or nullopt when `s` is valid UTF-8.
/// Overlong forms, surrogates and code points above U+10FFFF are rejected.
std::optional<std::size_t> find_invalid_utf8(std::string_view s);

inline bool is_valid_utf8(std::string_view s) { return !find_invalid_utf8(s).has_value(); }

/// Decodes valid UTF-8. Throws std::invalid_argument on malformed input.
std::u32string decode(std::string_view s);

std::string encode(char32_t cp);

/// Bytes needed to encode `cp` in UTF-8.
constexpr std::size_t utf8_length(char32_t cp) {
  return cp < 0x80 ? 1 : cp < 0x800 ? 2 : cp < 0x10000 ? 3 : 4;
}
std::string encode(std::u32string_view s);

/// One element per code point, each holding that code point's UTF-8 bytes.
std::vector<std::string> split_code_points(std::string_view s);

/// CJK Unified Ideographs (U+4E00..U+9FFF) and Extension A (U+3400..U+4DBF).
constexpr bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF);
}

/// Unicode White_Space property.
constexpr bool is_space(char32_t cp) {
  return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 || cp == 0xA0 ||
         cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 ||
         cp == 0x2029 || cp == 0x202F || cp == 0x205F || cp == 0x3000;
}

/// ASCII punctuation plus the Latin-1, General Punctuation, CJK Symbols and
/// fullwidth punctuation ranges that show up in zh/vi text.
bool is_punct(char32_t cp);

constexpr bool is_ascii_digit(char32_t cp) { return cp >= U'0' && cp <= U'9'; }

/// Letters as far as boundary checks are concerned: ASCII letters, Latin
/// letters with diacritics (Vietnamese), and anything CJK.
bool is_letter(char32_t cp);

/// Removes trailing '\r' characters.
std::string_view trim_cr(std::string_view s);

bool is_blank(std::string_view s);

}  // namespace mtkit::text
