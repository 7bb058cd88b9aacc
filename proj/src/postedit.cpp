#include "mtkit/postedit.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "mtkit/text.hpp"

namespace mtkit::postedit {

namespace {

constexpr std::array<std::int64_t, 19> kPow10 = {
    1LL,
    10LL,
    100LL,
    1000LL,
    10000LL,
    100000LL,
    1000000LL,
    10000000LL,
    100000000LL,
    1000000000LL,
    10000000000LL,
    100000000000LL,
    1000000000000LL,
    10000000000000LL,
    100000000000000LL,
    1000000000000000LL,
    10000000000000000LL,
    100000000000000000LL,
    1000000000000000000LL,
};

std::optional<std::int64_t> mul_pow10(std::int64_t m, int e) {
  if (e < 0 || e > 18) return std::nullopt;
  std::int64_t out = 0;
  if (__builtin_mul_overflow(m, kPow10[static_cast<std::size_t>(e)], &out)) return std::nullopt;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// DecimalValue

DecimalValue::DecimalValue(std::int64_t m, int s) : mantissa_(m), scale_(s) { normalise(); }

void DecimalValue::normalise() {
  while (scale_ > 0 && mantissa_ % 10 == 0) {
    mantissa_ /= 10;
    --scale_;
  }
  if (mantissa_ == 0) scale_ = 0;
}

DecimalValue DecimalValue::integer(std::int64_t v) { return DecimalValue(v, 0); }

std::optional<DecimalValue> DecimalValue::from_digits(std::string_view int_digits,
                                                      std::string_view frac_digits) {
  if (int_digits.empty() && frac_digits.empty()) return std::nullopt;
  if (frac_digits.size() > static_cast<std::size_t>(kMaxScale)) return std::nullopt;
  std::int64_t m = 0;
  for (std::string_view part : {int_digits, frac_digits}) {
    for (char c : part) {
      if (c < '0' || c > '9') return std::nullopt;
      if (__builtin_mul_overflow(m, 10, &m) || __builtin_add_overflow(m, c - '0', &m)) {
        return std::nullopt;
      }
    }
  }
  return DecimalValue(m, static_cast<int>(frac_digits.size()));
}

DecimalValue DecimalValue::parse(std::string_view s) {
  bool neg = false;
  std::string_view body = s;
  if (!body.empty() && body.front() == '-') {
    neg = true;
    body.remove_prefix(1);
  }
  const auto dot = body.find('.');
  auto ip = body.substr(0, dot);
  auto fp = dot == std::string_view::npos ? std::string_view{} : body.substr(dot + 1);
  if (ip.empty() || (dot != std::string_view::npos && fp.empty())) {
    throw PosteditError("malformed decimal '" + std::string(s) + "'");
  }
  auto v = from_digits(ip, fp);
  if (!v) throw PosteditError("malformed or out-of-range decimal '" + std::string(s) + "'");
  if (neg) v->mantissa_ = -v->mantissa_;
  return *v;
}

int DecimalValue::integer_digits() const {
  std::int64_t ip = mantissa_ / kPow10[static_cast<std::size_t>(scale_)];
  if (ip < 0) ip = -ip;
  int n = 1;
  while (ip >= 10) {
    ip /= 10;
    ++n;
  }
  return n;
}

std::optional<DecimalValue> DecimalValue::scaled(int exp10) const {
  if (exp10 >= 0) {
    if (scale_ >= exp10) return DecimalValue(mantissa_, scale_ - exp10);
    auto m = mul_pow10(mantissa_, exp10 - scale_);
    if (!m) return std::nullopt;
    return DecimalValue(*m, 0);
  }
  if (scale_ - exp10 > kMaxScale) return std::nullopt;
  return DecimalValue(mantissa_, scale_ - exp10);
}

std::optional<DecimalValue> DecimalValue::plus(const DecimalValue& other) const {
  const int s = std::max(scale_, other.scale_);
  auto a = mul_pow10(mantissa_, s - scale_);
  auto b = mul_pow10(other.mantissa_, s - other.scale_);
  std::int64_t sum = 0;
  if (!a || !b || __builtin_add_overflow(*a, *b, &sum)) return std::nullopt;
  return DecimalValue(sum, s);
}

std::string DecimalValue::to_string() const {
  const bool neg = mantissa_ < 0;
  const auto mag = neg ? -static_cast<unsigned long long>(mantissa_)
                       : static_cast<unsigned long long>(mantissa_);
  const auto div = static_cast<unsigned long long>(kPow10[static_cast<std::size_t>(scale_)]);
  std::string out = neg ? "-" : "";
  out += std::to_string(mag / div);
  if (scale_ > 0) {
    std::string frac = std::to_string(mag % div);
    out += '.' + std::string(static_cast<std::size_t>(scale_) - frac.size(), '0') + frac;
  }
  return out;
}

std::strong_ordering DecimalValue::operator<=>(const DecimalValue& other) const {
  const int s = std::max(scale_, other.scale_);
  const __int128 a = static_cast<__int128>(mantissa_) * kPow10[static_cast<std::size_t>(s - scale_)];
  const __int128 b =
      static_cast<__int128>(other.mantissa_) * kPow10[static_cast<std::size_t>(s - other.scale_)];
  return a <=> b;
}

// ---------------------------------------------------------------------------
// Dates

bool is_valid_date(const Date& d) {
  if (d.year < 0 || d.month < 1 || d.month > 12 || d.day < 1) return false;
  static constexpr std::array<int, 12> kDays = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int limit = kDays[static_cast<std::size_t>(d.month - 1)];
  if (d.month == 2 && d.has_year()) {
    const bool leap = (d.year % 4 == 0 && d.year % 100 != 0) || d.year % 400 == 0;
    limit = leap ? 29 : 28;
  }
  return d.day <= limit;
}

std::string_view to_string(EntityKind k) { return k == EntityKind::number ? "number" : "date"; }

// ---------------------------------------------------------------------------
// Rules

const Rules& Rules::defaults() {
  static const Rules rules = [] {
    Rules r;
    r.zh_units = {{"万亿", 12, true}, {"亿", 8, true}, {"万", 4, true}};
    r.vi_units = {{"nghìn tỷ", 12, false}, {"tỷ", 9, true},    {"tỉ", 9, false},
                  {"triệu", 6, true},      {"nghìn", 3, true}, {"ngàn", 3, false}};
    return r;
  }();
  return rules;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

void upsert_unit(std::vector<Unit>& units, Unit u) {
  for (auto& existing : units) {
    if (existing.word == u.word) {
      existing = std::move(u);
      return;
    }
  }
  units.push_back(std::move(u));
}

}  // namespace

Rules parse_rules(std::string_view content, const Rules& base) {
  Rules rules = base;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    auto line = trim(content.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw PosteditError("unterminated section header", line_no);
      section = std::string(line.substr(1, line.size() - 2));
      if (section != "zh_units" && section != "vi_units" && section != "zh_digits") {
        throw PosteditError("unknown section [" + section + "]", line_no);
      }
      continue;
    }
    if (section.empty()) throw PosteditError("entry outside a section", line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw PosteditError("expected KEY = VALUE", line_no);
    const auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty() || !text::is_valid_utf8(key)) throw PosteditError("bad key", line_no);

    if (section == "zh_digits") {
      const auto cps = text::decode(key);
      int digit = -1;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), digit);
      if (cps.size() != 1 || ec != std::errc() || p != value.data() + value.size() || digit < 0 ||
          digit > 9) {
        throw PosteditError("digit entries look like CHAR = 0..9", line_no);
      }
      rules.zh_digits[cps[0]] = digit;
      continue;
    }
    bool canonical = false;
    if (const auto sp = value.find_first_of(" \t"); sp != std::string_view::npos) {
      if (trim(value.substr(sp)) != "canonical") throw PosteditError("unexpected text after exponent", line_no);
      canonical = true;
      value = value.substr(0, sp);
    }
    int exponent = -1;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), exponent);
    if (ec != std::errc() || p != value.data() + value.size() || exponent < 1 || exponent > 18) {
      throw PosteditError("unit exponent must be an integer in 1..18", line_no);
    }
    upsert_unit(section == "zh_units" ? rules.zh_units : rules.vi_units,
                {std::string(key), exponent, canonical});
  }
  return rules;
}

Rules load_rules(const std::filesystem::path& path, const Rules& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PosteditError("cannot read rules file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_rules(ss.str(), base);
  } catch (const PosteditError& e) {
    throw PosteditError(path.string() + ":" + std::to_string(e.line()) + ": " + e.what(), e.line());
  }
}

// ---------------------------------------------------------------------------
// Extraction

namespace {

struct UnitMatcher {
  struct Entry {
    std::u32string word;
    const Unit* unit;
  };
  std::vector<Entry> entries;  // longest first

  explicit UnitMatcher(const std::vector<Unit>& units) {
    for (const auto& u : units) entries.push_back({text::decode(u.word), &u});
    std::stable_sort(entries.begin(), entries.end(),
                     [](const Entry& a, const Entry& b) { return a.word.size() > b.word.size(); });
  }

  /// Longest unit word at `pos`; `word_boundary` requires a non-letter after it.
  const Entry* match(const std::u32string& s, std::size_t pos, bool word_boundary) const {
    for (const auto& e : entries) {
      if (s.compare(pos, e.word.size(), e.word) != 0) continue;
      const std::size_t end = pos + e.word.size();
      if (word_boundary && end < s.size() && text::is_letter(s[end])) continue;
      return &e;
    }
    return nullptr;
  }
};

struct Scanner {
  const std::u32string& s;
  std::function<int(char32_t)> digit;  // -1 when not a digit

  bool is_digit(std::size_t i) const { return i < s.size() && digit(s[i]) >= 0; }

  /// Digits from `pos` as an ASCII string.
  std::string digits(std::size_t pos, std::size_t& end) const {
    std::string out;
    end = pos;
    while (is_digit(end)) out += static_cast<char>('0' + digit(s[end++]));
    return out;
  }

  bool at(std::size_t i, char32_t c) const { return i < s.size() && s[i] == c; }
};

struct Coefficient {
  DecimalValue value;
  std::size_t end = 0;
  bool grouped = false;
  bool has_fraction = false;
  bool valid = true;  // false on overflow; the text is still consumed
};

/// Digits with optional thousands groups and a fractional part.
///   group_sep: separator followed by exactly three digits (first run <= 3 digits)
///   decimal_seps: characters starting a fractional part
Coefficient scan_coefficient(const Scanner& sc, std::size_t pos, char32_t group_sep,
                             std::u32string_view decimal_seps) {
  Coefficient c;
  std::size_t q = 0;
  std::string ip = sc.digits(pos, q);
  if (ip.size() <= 3) {
    while (sc.at(q, group_sep) && sc.is_digit(q + 1) && sc.is_digit(q + 2) && sc.is_digit(q + 3) &&
           !sc.is_digit(q + 4)) {
      std::size_t e = 0;
      ip += sc.digits(q + 1, e);
      q = e;
      c.grouped = true;
    }
  }
  std::string fp;
  if (q < sc.s.size() && decimal_seps.find(sc.s[q]) != std::u32string_view::npos && sc.is_digit(q + 1) &&
      !(c.grouped && sc.s[q] == group_sep)) {
    std::size_t e = 0;
    fp = sc.digits(q + 1, e);
    q = e;
    c.has_fraction = true;
  }
  c.end = q;
  auto v = DecimalValue::from_digits(ip, fp);
  c.valid = v.has_value();
  if (v) c.value = *v;
  return c;
}

std::u32string slice(const std::u32string& s, std::size_t b, std::size_t e) { return s.substr(b, e - b); }

NumericEntity make_entity(const std::u32string& s, std::size_t b, std::size_t e, EntityKind kind) {
  NumericEntity ent;
  ent.kind = kind;
  ent.begin = b;
  ent.end = e;
  ent.surface = text::encode(slice(s, b, e));
  return ent;
}

int small_int(const std::string& digits) {
  int v = 0;
  for (char c : digits) v = v * 10 + (c - '0');
  return v;
}

std::u32string decode_lenient(std::string_view text) {
  if (!text::is_valid_utf8(text)) throw PosteditError("text is not valid UTF-8");
  return text::decode(text);
}

}  // namespace

std::vector<NumericEntity> extract_zh_entities(std::string_view text, const Rules& rules) {
  const std::u32string s = decode_lenient(text);
  Scanner sc{s, [&](char32_t c) -> int {
               if (c >= U'0' && c <= U'9') return static_cast<int>(c - U'0');
               if (c >= 0xFF10 && c <= 0xFF19) return static_cast<int>(c - 0xFF10);
               if (auto it = rules.zh_digits.find(c); it != rules.zh_digits.end()) return it->second;
               return -1;
             }};
  const UnitMatcher units(rules.zh_units);
  auto day_mark = [&](std::size_t i) { return sc.at(i, U'日') || sc.at(i, U'号'); };

  std::vector<NumericEntity> out;
  std::size_t p = 0;
  while (p < s.size()) {
    if (!sc.is_digit(p) || (p > 0 && sc.is_digit(p - 1))) {
      ++p;
      continue;
    }
    std::size_t e1 = 0;
    const std::string d1 = sc.digits(p, e1);

    // Y年M月D日 and M月D日
    if (d1.size() <= 4 && sc.at(e1, U'年') && sc.is_digit(e1 + 1)) {
      std::size_t e2 = 0;
      const std::string d2 = sc.digits(e1 + 1, e2);
      std::size_t e3 = 0;
      const std::string d3 = sc.at(e2, U'月') ? sc.digits(e2 + 1, e3) : std::string();
      if (d2.size() <= 2 && !d3.empty() && d3.size() <= 2 && day_mark(e3)) {
        Date d{small_int(d1), small_int(d2), small_int(d3)};
        if (d.year != 0 && is_valid_date(d)) {
          auto ent = make_entity(s, p, e3 + 1, EntityKind::date);
          ent.date = d;
          ent.date_style = DateStyle::cjk;
          out.push_back(std::move(ent));
        }
        p = e3 + 1;
        continue;
      }
    }
    if (d1.size() <= 2 && sc.at(e1, U'月') && sc.is_digit(e1 + 1)) {
      std::size_t e2 = 0;
      const std::string d2 = sc.digits(e1 + 1, e2);
      if (d2.size() <= 2 && day_mark(e2)) {
        Date d{0, small_int(d1), small_int(d2)};
        if (is_valid_date(d)) {
          auto ent = make_entity(s, p, e2 + 1, EntityKind::date);
          ent.date = d;
          ent.date_style = DateStyle::cjk;
          out.push_back(std::move(ent));
        }
        p = e2 + 1;
        continue;
      }
    }

    // Coefficient, then an optional chain of decreasing units, then an
    // optional bare remainder after 万 (X亿Y万Z).
    Coefficient c = scan_coefficient(sc, p, U',', U".");
    bool valid = c.valid;
    std::optional<DecimalValue> total = c.value;
    std::size_t q = c.end;
    std::optional<std::string> unit_word;
    bool grouped = c.grouped;
    if (const auto* u = units.match(s, q, false)) {
      total = valid ? c.value.scaled(u->unit->exponent) : std::nullopt;
      unit_word = u->unit->word;
      int last_exp = u->unit->exponent;
      q += u->word.size();
      for (;;) {
        if (!sc.is_digit(q)) break;
        Coefficient next = scan_coefficient(sc, q, U',', U".");
        const auto* nu = units.match(s, next.end, false);
        if (nu && nu->unit->exponent < last_exp) {
          auto part = next.valid ? next.value.scaled(nu->unit->exponent) : std::nullopt;
          total = total && part ? total->plus(*part) : std::nullopt;
          last_exp = nu->unit->exponent;
          q = next.end + nu->word.size();
          continue;
        }
        if (!nu && last_exp == 4 && !next.has_fraction && !next.grouped && next.end - q <= 4 &&
            total && total->is_integer()) {
          total = next.valid ? total->plus(next.value) : std::nullopt;
          q = next.end;
        }
        break;
      }
    }
    valid = valid && total.has_value();
    if (valid) {
      auto ent = make_entity(s, p, q, EntityKind::number);
      ent.value = *total;
      ent.unit_word = unit_word;
      ent.grouped = grouped;
      out.push_back(std::move(ent));
    }
    p = q;
  }
  return out;
}

std::vector<NumericEntity> extract_vi_entities(std::string_view text, const Rules& rules) {
  const std::u32string s = decode_lenient(text);
  Scanner sc{s, [](char32_t c) -> int { return c >= U'0' && c <= U'9' ? static_cast<int>(c - U'0') : -1; }};
  const UnitMatcher units(rules.vi_units);
  auto skip_spaces = [&](std::size_t i) {
    while (i < s.size() && (s[i] == U' ' || s[i] == 0xA0)) ++i;
    return i;
  };
  auto word_at = [&](std::size_t i, std::u32string_view w) {
    return s.compare(i, w.size(), w) == 0 && (i + w.size() >= s.size() || !text::is_letter(s[i + w.size()]));
  };

  std::vector<NumericEntity> out;
  std::size_t p = 0;
  while (p < s.size()) {
    if (!sc.is_digit(p) || (p > 0 && sc.is_digit(p - 1))) {
      ++p;
      continue;
    }
    std::size_t e1 = 0;
    const std::string d1 = sc.digits(p, e1);

    // D/M/Y and D/M
    if (d1.size() <= 2 && sc.at(e1, U'/') && sc.is_digit(e1 + 1) && !(p > 0 && s[p - 1] == U'/')) {
      std::size_t e2 = 0;
      const std::string d2 = sc.digits(e1 + 1, e2);
      if (d2.size() <= 2) {
        std::optional<std::size_t> end;
        Date d{0, small_int(d2), small_int(d1)};
        if (sc.at(e2, U'/') && sc.is_digit(e2 + 1)) {
          std::size_t e3 = 0;
          const std::string d3 = sc.digits(e2 + 1, e3);
          if (d3.size() == 4 && !sc.at(e3, U'/')) {
            d.year = small_int(d3);
            end = e3;
          }
        } else if (!sc.at(e2, U'/')) {
          end = e2;
        }
        if (end) {
          if (is_valid_date(d)) {
            auto ent = make_entity(s, p, *end, EntityKind::date);
            ent.date = d;
            ent.date_style = DateStyle::slash;
            out.push_back(std::move(ent));
          }
          p = *end;
          continue;
        }
      }
    }
    // D tháng M [năm Y]
    if (d1.size() <= 2) {
      std::size_t q = skip_spaces(e1);
      if (q > e1 && word_at(q, U"tháng")) {
        const std::size_t m0 = skip_spaces(q + 5);
        if (m0 > q + 5 && sc.is_digit(m0)) {
          std::size_t e2 = 0;
          const std::string d2 = sc.digits(m0, e2);
          if (d2.size() <= 2) {
            Date d{0, small_int(d2), small_int(d1)};
            std::size_t end = e2;
            const std::size_t y0 = skip_spaces(e2);
            if (y0 > e2 && word_at(y0, U"năm")) {
              const std::size_t y1 = skip_spaces(y0 + 3);
              std::size_t e3 = 0;
              const std::string d3 = y1 > y0 + 3 ? sc.digits(y1, e3) : std::string();
              if (d3.size() == 4) {
                d.year = small_int(d3);
                end = e3;
              }
            }
            if (is_valid_date(d)) {
              auto ent = make_entity(s, p, end, EntityKind::date);
              ent.date = d;
              ent.date_style = DateStyle::words;
              out.push_back(std::move(ent));
            }
            p = end;
            continue;
          }
        }
      }
    }

    // Number with optional magnitude words: "4 tỷ", "1 tỷ 200 triệu".
    Coefficient c = scan_coefficient(sc, p, U'.', U",.");
    std::optional<DecimalValue> total;
    if (c.valid) total = c.value;
    std::size_t q = c.end;
    std::optional<std::string> unit_word;
    if (const auto* u = units.match(s, skip_spaces(q), true)) {
      total = total ? total->scaled(u->unit->exponent) : std::nullopt;
      unit_word = u->unit->word;
      int last_exp = u->unit->exponent;
      q = skip_spaces(q) + u->word.size();
      for (;;) {
        const std::size_t n0 = skip_spaces(q);
        if (n0 == q || !sc.is_digit(n0)) break;
        Coefficient next = scan_coefficient(sc, n0, U'.', U",.");
        const std::size_t u0 = skip_spaces(next.end);
        const auto* nu = units.match(s, u0, true);
        if (!nu || nu->unit->exponent >= last_exp) break;
        auto part = next.valid ? next.value.scaled(nu->unit->exponent) : std::nullopt;
        total = total && part ? total->plus(*part) : std::nullopt;
        last_exp = nu->unit->exponent;
        q = u0 + nu->word.size();
      }
    }
    if (total) {
      auto ent = make_entity(s, p, q, EntityKind::number);
      ent.value = *total;
      ent.unit_word = unit_word;
      ent.grouped = c.grouped;
      out.push_back(std::move(ent));
    }
    p = q;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string digits_of(const DecimalValue& v, std::string& frac) {
  const std::string s = v.to_string();
  const auto dot = s.find('.');
  frac = dot == std::string::npos ? "" : s.substr(dot + 1);
  return s.substr(0, dot);
}

std::string group_thousands(const std::string& ip, char sep) {
  std::string out;
  const std::size_t n = ip.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && (n - i) % 3 == 0) out += sep;
    out += ip[i];
  }
  return out;
}

std::string vi_coefficient(const DecimalValue& c) {
  std::string frac;
  std::string ip = digits_of(c, frac);
  if (ip.size() > 4) ip = group_thousands(ip, '.');
  return frac.empty() ? ip : ip + "," + frac;
}

std::string zh_coefficient(const DecimalValue& c) { return c.to_string(); }

const Unit* find_unit(const std::vector<Unit>& units, const std::string& word) {
  for (const auto& u : units) {
    if (u.word == word) return &u;
  }
  return nullptr;
}

/// Shared selection rule; `fmt` renders a coefficient, `join` attaches a unit.
template <class Fmt, class Join, class Plain>
std::string render_number(const DecimalValue& value, const std::optional<std::string>& preferred,
                          const std::vector<Unit>& units, Fmt fmt, Join join, Plain plain) {
  if (value.negative()) throw PosteditError("cannot render negative value " + value.to_string());
  const DecimalValue one = DecimalValue::integer(1);
  if (preferred) {
    const Unit* u = find_unit(units, *preferred);
    if (!u) throw PosteditError("unknown unit word '" + *preferred + "'");
    auto c = value.scaled(-u->exponent);
    if (c && *c >= one && c->integer_digits() <= 4 && c->scale() <= 2) return join(fmt(*c), u->word);
  }
  std::vector<const Unit*> canonical;
  for (const auto& u : units) {
    if (u.canonical) canonical.push_back(&u);
  }
  std::stable_sort(canonical.begin(), canonical.end(),
                   [](const Unit* a, const Unit* b) { return a->exponent > b->exponent; });
  for (const Unit* u : canonical) {
    auto c = value.scaled(-u->exponent);
    if (c && *c >= one && c->scale() <= 1) return join(fmt(*c), u->word);
  }
  return plain(value);
}

}  // namespace

std::string render_vi_plain(const DecimalValue& value, bool grouped) {
  if (value.negative()) throw PosteditError("cannot render negative value " + value.to_string());
  std::string frac;
  std::string ip = digits_of(value, frac);
  if (grouped) ip = group_thousands(ip, '.');
  return frac.empty() ? ip : ip + "," + frac;
}

std::string render_vi_number(const DecimalValue& value, const std::optional<std::string>& preferred_unit,
                             const Rules& rules) {
  return render_number(
      value, preferred_unit, rules.vi_units, vi_coefficient,
      [](const std::string& c, const std::string& w) { return c + " " + w; },
      [](const DecimalValue& v) { return render_vi_plain(v, true); });
}

std::string render_vi_date(const Date& d, DateStyle style) {
  if (!is_valid_date(d)) throw PosteditError("invalid date");
  std::string out;
  if (style == DateStyle::words) {
    out = std::to_string(d.day) + " tháng " + std::to_string(d.month);
    if (d.has_year()) out += " năm " + std::to_string(d.year);
  } else {
    out = std::to_string(d.day) + "/" + std::to_string(d.month);
    if (d.has_year()) out += "/" + std::to_string(d.year);
  }
  return out;
}

std::string render_zh_number(const DecimalValue& value, const std::optional<std::string>& preferred_unit,
                             const Rules& rules) {
  return render_number(
      value, preferred_unit, rules.zh_units, zh_coefficient,
      [](const std::string& c, const std::string& w) { return c + w; },
      [](const DecimalValue& v) { return v.to_string(); });
}

std::string render_zh_date(const Date& d) {
  if (!is_valid_date(d)) throw PosteditError("invalid date");
  std::string out;
  if (d.has_year()) out = std::to_string(d.year) + "年";
  return out + std::to_string(d.month) + "月" + std::to_string(d.day) + "日";
}

// ---------------------------------------------------------------------------
// Correction

std::string apply_edits(std::string_view text, const std::vector<Edit>& edits) {
  const std::u32string s = decode_lenient(text);
  std::string out;
  std::size_t pos = 0;
  for (const auto& e : edits) {
    if (e.begin < pos || e.end < e.begin || e.end > s.size()) {
      throw PosteditError("edits must be increasing, non-overlapping and inside the text");
    }
    out += text::encode(std::u32string_view(s).substr(pos, e.begin - pos));
    out += e.after;
    pos = e.end;
  }
  out += text::encode(std::u32string_view(s).substr(pos));
  return out;
}

namespace {

bool same_value(const NumericEntity& a, const NumericEntity& b) {
  if (a.kind != b.kind) return false;
  if (a.kind == EntityKind::number) return a.value == b.value;
  return a.date.month == b.date.month && a.date.day == b.date.day &&
         (a.date.year == b.date.year || !a.date.has_year() || !b.date.has_year());
}

std::string describe(const NumericEntity& e) {
  if (e.kind == EntityKind::number) return e.value.to_string();
  std::string s = e.date.has_year() ? std::to_string(e.date.year) + "-" : "";
  return s + std::to_string(e.date.month) + "-" + std::to_string(e.date.day);
}

using Renderer = std::function<std::optional<std::string>(const NumericEntity& src, const NumericEntity& tgt)>;

Correction correct(const std::vector<NumericEntity>& src, std::string_view tgt_text,
                   const std::vector<NumericEntity>& tgt, const Renderer& render) {
  Correction out;
  for (EntityKind kind : {EntityKind::number, EntityKind::date}) {
    std::vector<const NumericEntity*> S, T;
    for (const auto& e : src) {
      if (e.kind == kind) S.push_back(&e);
    }
    for (const auto& e : tgt) {
      if (e.kind == kind) T.push_back(&e);
    }
    if (S.size() != T.size()) {
      // Only values that agree at both ends are anchored; the rest is ambiguous.
      std::size_t lo = 0;
      while (lo < S.size() && lo < T.size() && same_value(*S[lo], *T[lo])) ++lo;
      std::size_t hs = S.size(), ht = T.size();
      while (hs > lo && ht > lo && same_value(*S[hs - 1], *T[ht - 1])) {
        --hs;
        --ht;
      }
      const std::string why = std::to_string(S.size()) + " source vs " + std::to_string(T.size()) +
                              " target " + std::string(to_string(kind)) + " entities";
      for (std::size_t i = lo; i < ht; ++i) out.skipped.push_back({kind, T[i]->begin, "unaligned: " + why});
      for (std::size_t i = lo; i < hs; ++i) out.skipped.push_back({kind, std::nullopt, "unaligned source " + S[i]->surface + ": " + why});
      continue;
    }
    for (std::size_t j = 0; j < S.size(); ++j) {
      const auto& s = *S[j];
      const auto& t = *T[j];
      if (same_value(s, t)) continue;
      const bool elsewhere = std::any_of(S.begin(), S.end(), [&](const NumericEntity* o) { return same_value(*o, t); });
      if (elsewhere) {
        out.skipped.push_back({kind, t.begin, "target value " + describe(t) + " appears elsewhere in the source"});
        continue;
      }
      auto replacement = render(s, t);
      if (!replacement) {
        out.skipped.push_back({kind, t.begin, "source value " + describe(s) + " cannot be rendered here"});
        continue;
      }
      out.edits.push_back({t.begin, t.end, t.surface, *replacement,
                           std::string(to_string(kind)) + " " + describe(t) + " -> " + describe(s)});
    }
  }
  std::sort(out.edits.begin(), out.edits.end(), [](const Edit& a, const Edit& b) { return a.begin < b.begin; });
  out.text = apply_edits(tgt_text, out.edits);
  return out;
}

std::optional<Date> merged_date(const NumericEntity& s, const NumericEntity& t) {
  Date d = s.date;
  if (!t.date.has_year()) {
    d.year = 0;
  } else if (!d.has_year()) {
    d.year = t.date.year;
  }
  if (!is_valid_date(d)) return std::nullopt;
  return d;
}

}  // namespace

Correction correct_translation(std::string_view src_zh, std::string_view tgt_vi, const Rules& rules) {
  return correct(extract_zh_entities(src_zh, rules), tgt_vi, extract_vi_entities(tgt_vi, rules),
                 [&](const NumericEntity& s, const NumericEntity& t) -> std::optional<std::string> {
                   if (s.kind == EntityKind::date) {
                     auto d = merged_date(s, t);
                     if (!d) return std::nullopt;
                     return render_vi_date(*d, t.date_style == DateStyle::words ? DateStyle::words : DateStyle::slash);
                   }
                   if (t.unit_word) return render_vi_number(s.value, t.unit_word, rules);
                   return render_vi_plain(s.value, t.grouped);
                 });
}

Correction correct_translation_vi_zh(std::string_view src_vi, std::string_view tgt_zh, const Rules& rules) {
  return correct(extract_vi_entities(src_vi, rules), tgt_zh, extract_zh_entities(tgt_zh, rules),
                 [&](const NumericEntity& s, const NumericEntity& t) -> std::optional<std::string> {
                   if (s.kind == EntityKind::date) {
                     auto d = merged_date(s, t);
                     if (!d) return std::nullopt;
                     return render_zh_date(*d);
                   }
                   if (t.unit_word) return render_zh_number(s.value, t.unit_word, rules);
                   std::string frac;
                   std::string ip = digits_of(s.value, frac);
                   if (t.grouped) ip = group_thousands(ip, ',');
                   return frac.empty() ? ip : ip + "." + frac;
                 });
}

}  // namespace mtkit::postedit
