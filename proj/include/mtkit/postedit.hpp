#pragma once

// Rule-based post-editing of numbers and dates in translations.
//
// Entities are extracted from both sides, aligned in order per kind, and a
// target entity whose value disagrees with its source counterpart is
// re-rendered from the source value. Spans are code-point offsets.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mtkit::postedit {

class PosteditError : public std::runtime_error {
 public:
  PosteditError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Exact decimal: mantissa / 10^scale, kept normalised (no trailing
/// fractional zeros), so equal values compare equal member-wise.
class DecimalValue {
 public:
  static constexpr int kMaxScale = 18;

  DecimalValue() = default;
  static DecimalValue integer(std::int64_t v);
  /// From digit strings; nullopt on overflow or when a part holds non-digits.
  static std::optional<DecimalValue> from_digits(std::string_view int_digits,
                                                 std::string_view frac_digits = {});
  /// Parses "123", "-4.5". Throws PosteditError on malformed input.
  static DecimalValue parse(std::string_view s);

  std::int64_t mantissa() const { return mantissa_; }
  int scale() const { return scale_; }
  bool is_integer() const { return scale_ == 0; }
  bool negative() const { return mantissa_ < 0; }
  /// Digits before the decimal point (1 for values below 1).
  int integer_digits() const;

  /// value * 10^exp10, nullopt on overflow or when exceeding kMaxScale.
  std::optional<DecimalValue> scaled(int exp10) const;
  std::optional<DecimalValue> plus(const DecimalValue& other) const;

  /// Canonical ASCII form: "40000000000", "2.5".
  std::string to_string() const;

  bool operator==(const DecimalValue&) const = default;
  std::strong_ordering operator<=>(const DecimalValue& other) const;

 private:
  DecimalValue(std::int64_t m, int s);
  void normalise();

  std::int64_t mantissa_ = 0;
  int scale_ = 0;
};

/// year == 0 means the surface had no year.
struct Date {
  int year = 0;
  int month = 1;
  int day = 1;

  bool has_year() const { return year != 0; }
  bool operator==(const Date&) const = default;
};

/// Proleptic Gregorian month lengths; a yearless date allows 29 February.
bool is_valid_date(const Date& d);

enum class EntityKind { number, date };
std::string_view to_string(EntityKind k);

enum class DateStyle { slash, words, cjk };

struct NumericEntity {
  EntityKind kind = EntityKind::number;
  DecimalValue value;  // numbers
  Date date;           // dates
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string surface;
  std::optional<std::string> unit_word;  // largest magnitude word in the surface
  bool grouped = false;                  // digits carried thousands separators
  DateStyle date_style = DateStyle::slash;

  bool operator==(const NumericEntity&) const = default;
};

struct Unit {
  std::string word;
  int exponent = 0;        // multiplier 10^exponent
  bool canonical = false;  // candidate for rendering without a preference

  bool operator==(const Unit&) const = default;
};

/// Pattern tables. Defaults:
///   zh units: 万亿 (12), 亿 (8), 万 (4), all canonical
///   vi units: nghìn tỷ (12), tỷ/tỉ (9), triệu (6), nghìn/ngàn (3); canonical tỷ, triệu, nghìn
///   zh digits: none beyond ASCII and fullwidth digits
struct Rules {
  std::vector<Unit> zh_units;
  std::vector<Unit> vi_units;
  std::map<char32_t, int> zh_digits;  // extra digit characters, e.g. 〇一二...

  static const Rules& defaults();
  bool operator==(const Rules&) const = default;
};

/// Rules file: '#' comments, sections [zh_units], [vi_units], [zh_digits].
///   unit lines:  WORD = EXPONENT [canonical]
///   digit lines: CHAR = DIGIT
/// Entries are added on top of `base` (a word already present is replaced).
Rules parse_rules(std::string_view content, const Rules& base = Rules::defaults());
Rules load_rules(const std::filesystem::path& path, const Rules& base = Rules::defaults());

std::vector<NumericEntity> extract_zh_entities(std::string_view text,
                                               const Rules& rules = Rules::defaults());
std::vector<NumericEntity> extract_vi_entities(std::string_view text,
                                               const Rules& rules = Rules::defaults());

/// With a preferred unit word: coefficient + word when value/unit >= 1 with at
/// most 4 integer digits and 2 decimals. Otherwise the largest canonical unit
/// giving a coefficient >= 1 with at most one decimal. Otherwise plain digits
/// with '.' thousands separators and ',' decimal comma.
/// Throws PosteditError for negative values or an unknown preferred unit.
std::string render_vi_number(const DecimalValue& value,
                             const std::optional<std::string>& preferred_unit = std::nullopt,
                             const Rules& rules = Rules::defaults());
/// Plain digits; `grouped` inserts '.' thousands separators.
std::string render_vi_plain(const DecimalValue& value, bool grouped);
/// "D/M/Y" (or "D/M" when yearless), no zero padding. Throws for invalid dates.
std::string render_vi_date(const Date& date, DateStyle style = DateStyle::slash);

/// Same selection rules with 万亿/亿/万; plain digits carry no separators.
std::string render_zh_number(const DecimalValue& value,
                             const std::optional<std::string>& preferred_unit = std::nullopt,
                             const Rules& rules = Rules::defaults());
/// "Y年M月D日" or "M月D日".
std::string render_zh_date(const Date& date);

struct Edit {
  std::size_t begin = 0;  // code points in the input translation
  std::size_t end = 0;
  std::string before;
  std::string after;
  std::string reason;

  bool operator==(const Edit&) const = default;
};

/// Entities that were deliberately left alone.
struct Skip {
  EntityKind kind = EntityKind::number;
  std::optional<std::size_t> tgt_begin;  // absent when only the source side has it
  std::string reason;
};

struct Correction {
  std::string text;
  std::vector<Edit> edits;  // increasing, non-overlapping
  std::vector<Skip> skipped;
};

/// zh source, vi translation.
Correction correct_translation(std::string_view src_zh, std::string_view tgt_vi,
                               const Rules& rules = Rules::defaults());

/// vi source, zh translation. Experimental: same alignment, zh rendering.
Correction correct_translation_vi_zh(std::string_view src_vi, std::string_view tgt_zh,
                                     const Rules& rules = Rules::defaults());

/// Applies edits (spans in code points) to `text`.
std::string apply_edits(std::string_view text, const std::vector<Edit>& edits);

}  // namespace mtkit::postedit
