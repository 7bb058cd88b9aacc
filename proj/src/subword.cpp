#include "mtkit/subword.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "mtkit/parallel.hpp"
#include "mtkit/text.hpp"

namespace mtkit::subword {

namespace {

constexpr std::string_view kHeader = "#mtkit-bpe 1";
constexpr std::string_view kVocabHeader = "#mtkit-vocab 1";

std::string pair_key(std::string_view left, std::string_view right) {
  std::string key;
  key.reserve(left.size() + right.size() + 1);
  key.append(left).push_back('\x1F');
  key.append(right);
  return key;
}

// Splits on single ASCII spaces, keeping empty pieces.
std::vector<std::string_view> split_words(std::string_view s) {
  std::vector<std::string_view> words;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(' ', start);
    if (pos == std::string_view::npos) {
      words.push_back(s.substr(start));
      return words;
    }
    words.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

void reject_marker(std::string_view text) {
  if (text.find(kEndOfWordUtf8) != std::string_view::npos) {
    throw SubwordError("input contains the reserved end-of-word symbol U+2581");
  }
}

}  // namespace

SubwordVocab::SubwordVocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kNumSpecials) throw SubwordError("vocabulary is missing special tokens");
  for (TokenId i = 0; i < kNumSpecials; ++i) {
    if (tokens_[i] != kSpecialTokens[i]) {
      throw SubwordError("special token " + std::to_string(i) + " must be '" +
                         std::string(kSpecialTokens[i]) + "', found '" + tokens_[i] + "'");
    }
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw SubwordError("duplicate token '" + tokens_[i] + "' in vocabulary");
    }
  }
}

std::optional<TokenId> SubwordVocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

BpeModel::BpeModel(MergeTable merges, SubwordVocab vocab)
    : merges_(std::move(merges)), vocab_(std::move(vocab)) {
  for (std::size_t i = 0; i < merges_.merges.size(); ++i) {
    const auto& m = merges_.merges[i];
    if (!rank_.emplace(pair_key(m.left, m.right), i).second) {
      throw SubwordError("duplicate merge '" + m.left + " " + m.right + "'");
    }
    if (!vocab_.find(m.left + m.right)) {
      throw SubwordError("merged token '" + m.left + m.right + "' missing from vocabulary");
    }
  }
  if (vocab_.size() > 0 && !vocab_.find(kEndOfWordUtf8)) {
    throw SubwordError("vocabulary lacks the end-of-word symbol");
  }
}

std::vector<std::string> BpeModel::segment_word(std::string_view word) const {
  std::vector<std::string> symbols = text::split_code_points(word);
  symbols.emplace_back(kEndOfWordUtf8);
  while (symbols.size() > 1) {
    std::size_t best_rank = SIZE_MAX;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank_.find(pair_key(symbols[i], symbols[i + 1]));
      if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == SIZE_MAX) break;
    const Merge& m = merges_.merges[best_rank];
    std::vector<std::string> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == m.left && symbols[i + 1] == m.right) {
        next.push_back(m.left + m.right);
        ++i;
      } else {
        next.push_back(std::move(symbols[i]));
      }
    }
    symbols = std::move(next);
  }
  return symbols;
}

std::vector<std::string> BpeModel::segment(std::string_view text) const {
  reject_marker(text);
  std::vector<std::string> out;
  if (text.empty()) return out;
  for (auto word : split_words(text)) {
    auto pieces = segment_word(word);
    out.insert(out.end(), std::make_move_iterator(pieces.begin()),
               std::make_move_iterator(pieces.end()));
  }
  return out;
}

std::vector<TokenId> BpeModel::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& piece : segment(text)) ids.push_back(vocab_.find(piece).value_or(kUnkId));
  return ids;
}

std::string BpeModel::decode(const std::vector<TokenId>& ids) const {
  std::string joined;
  for (TokenId id : ids) {
    if (id == kUnkId) {
      joined += kSpecialTokens[kUnkId];
    } else if (!SubwordVocab::is_special(id)) {
      joined += vocab_.token(id);
    }
  }
  if (joined.ends_with(kEndOfWordUtf8)) joined.resize(joined.size() - kEndOfWordUtf8.size());
  std::string out;
  out.reserve(joined.size());
  for (std::size_t pos = 0;;) {
    const std::size_t hit = joined.find(kEndOfWordUtf8, pos);
    if (hit == std::string::npos) {
      out.append(joined, pos);
      break;
    }
    out.append(joined, pos, hit - pos).push_back(' ');
    pos = hit + kEndOfWordUtf8.size();
  }
  return out;
}

std::vector<TokenId> encode(std::string_view text, const BpeModel& model) {
  return model.encode(text);
}

std::string decode(const std::vector<TokenId>& ids, const BpeModel& model) {
  return model.decode(ids);
}

namespace {

// Training state over interned symbols.
class BpeTrainer {
 public:
  explicit BpeTrainer(const corpus::Corpus& corpus) {
    std::map<std::string, std::size_t> freq;  // ordered for deterministic word ids
    for (const auto& s : corpus.sentences) {
      reject_marker(s.text);
      for (auto w : split_words(s.text)) {
        if (!w.empty()) ++freq[std::string(w)];
      }
    }
    marker_ = intern(std::string(kEndOfWordUtf8));
    for (const auto& [word, count] : freq) {
      std::vector<int> syms;
      for (auto& cp : text::split_code_points(word)) {
        const int id = intern(cp);
        chars_.insert(cp);
        syms.push_back(id);
      }
      syms.push_back(marker_);
      words_.push_back(std::move(syms));
      counts_.push_back(count);
    }
    for (std::size_t w = 0; w < words_.size(); ++w) add_pairs(w, +1);
  }

  std::vector<Merge> run(std::size_t n_merges) {
    std::vector<Merge> merges;
    while (merges.size() < n_merges && !queue_.empty()) {
      const auto best = *queue_.begin();
      if (best.count < 2) break;
      const int left = best.left;
      const int right = best.right;
      const int merged = intern(symbols_[left] + symbols_[right]);
      merges.push_back({symbols_[left], symbols_[right]});

      const auto affected = where_[key(left, right)];  // copy: updated below
      for (std::size_t w : affected) {
        add_pairs(w, -1);
        auto& syms = words_[w];
        std::vector<int> next;
        next.reserve(syms.size());
        for (std::size_t i = 0; i < syms.size(); ++i) {
          if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
            next.push_back(merged);
            ++i;
          } else {
            next.push_back(syms[i]);
          }
        }
        syms = std::move(next);
        add_pairs(w, +1);
      }
    }
    return merges;
  }

  const std::set<std::string>& chars() const { return chars_; }

 private:
  struct Entry {
    std::size_t count;
    int left;
    int right;
  };

  struct EntryOrder {
    const std::vector<std::string>* symbols;
    bool operator()(const Entry& a, const Entry& b) const {
      if (a.count != b.count) return a.count > b.count;
      const auto& al = (*symbols)[a.left];
      const auto& bl = (*symbols)[b.left];
      if (al != bl) return al < bl;
      return (*symbols)[a.right] < (*symbols)[b.right];
    }
  };

  static std::uint64_t key(int left, int right) {
    return (static_cast<std::uint64_t>(left) << 32) | static_cast<std::uint32_t>(right);
  }

  int intern(const std::string& sym) {
    auto [it, inserted] = ids_.emplace(sym, static_cast<int>(symbols_.size()));
    if (inserted) symbols_.push_back(sym);
    return it->second;
  }

  void adjust(int left, int right, std::size_t word, long delta) {
    const auto k = key(left, right);
    auto& count = pair_count_[k];
    if (count > 0) queue_.erase(Entry{count, left, right});
    count = static_cast<std::size_t>(static_cast<long>(count) + delta);
    if (count > 0) {
      queue_.insert(Entry{count, left, right});
    } else {
      pair_count_.erase(k);
    }
    if (delta > 0) {
      where_[k].insert(word);
    }
  }

  // Adds (sign=+1) or removes (sign=-1) a word's adjacent-pair contributions.
  void add_pairs(std::size_t w, int sign) {
    const auto& syms = words_[w];
    const long delta = sign * static_cast<long>(counts_[w]);
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) adjust(syms[i], syms[i + 1], w, delta);
    if (sign < 0) {
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        const auto k = key(syms[i], syms[i + 1]);
        if (auto it = where_.find(k); it != where_.end() && !pair_count_.contains(k)) {
          where_.erase(it);
        }
      }
    }
  }

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> ids_;
  std::set<std::string> chars_;
  int marker_ = 0;
  std::vector<std::vector<int>> words_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::uint64_t, std::size_t> pair_count_;
  std::unordered_map<std::uint64_t, std::set<std::size_t>> where_;
  std::set<Entry, EntryOrder> queue_{EntryOrder{&symbols_}};
};

}  // namespace

BpeModel train_bpe(const corpus::Corpus& corpus, std::size_t n_merges) {
  if (corpus.empty()) throw SubwordError("cannot train BPE on an empty corpus");
  BpeTrainer trainer(corpus);
  std::vector<Merge> merges = trainer.run(n_merges);

  std::vector<std::string> tokens(kSpecialTokens.begin(), kSpecialTokens.end());
  std::unordered_set<std::string> seen(tokens.begin(), tokens.end());
  auto add = [&](const std::string& t) {
    if (seen.insert(t).second) tokens.push_back(t);
  };
  add(std::string(kEndOfWordUtf8));
  for (const auto& c : trainer.chars()) add(c);
  for (const auto& m : merges) add(m.left + m.right);
  return BpeModel(MergeTable{std::move(merges)}, SubwordVocab(std::move(tokens)));
}

std::set<TokenId> corpus_vocab(const std::vector<corpus::Corpus>& corpora, const BpeModel& model,
                               unsigned threads) {
  std::set<TokenId> ids;
  for (TokenId i = 0; i < kNumSpecials; ++i) ids.insert(i);
  for (const auto& c : corpora) {
    const std::size_t shards = shard_count(c.size(), threads);
    std::vector<std::set<TokenId>> partial(shards);
    parallel_shards(c.size(), threads, [&](std::size_t shard, std::size_t begin, std::size_t end) {
      std::unordered_map<std::string, std::vector<TokenId>> cache;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& sentence = c.sentences[i].text;
        reject_marker(sentence);
        for (auto word : split_words(sentence)) {
          auto it = cache.find(std::string(word));
          if (it == cache.end()) {
            std::vector<TokenId> word_ids;
            for (auto& piece : model.segment(word)) {
              word_ids.push_back(model.vocab().find(piece).value_or(kUnkId));
            }
            it = cache.emplace(std::string(word), std::move(word_ids)).first;
          }
          partial[shard].insert(it->second.begin(), it->second.end());
        }
      }
    });
    for (auto& p : partial) ids.merge(p);
  }
  return ids;
}

namespace {

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case ' ': out += "\\s"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      case '\n': out += "\\n"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape(std::string_view s, std::size_t lineno) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (++i == s.size()) throw SubwordError("dangling escape", lineno);
    switch (s[i]) {
      case '\\': out.push_back('\\'); break;
      case 's': out.push_back(' '); break;
      case 't': out.push_back('\t'); break;
      case 'r': out.push_back('\r'); break;
      case 'n': out.push_back('\n'); break;
      default: throw SubwordError(std::string("unknown escape \\") + s[i], lineno);
    }
  }
  return out;
}

}  // namespace

std::string serialize_model(const BpeModel& model) {
  std::ostringstream os;
  os << kHeader << '\n';
  os << "specials " << kNumSpecials << '\n';
  for (auto s : kSpecialTokens) os << s << '\n';
  os << "merges " << model.merges().merges.size() << '\n';
  for (const auto& m : model.merges().merges) os << escape(m.left) << ' ' << escape(m.right) << '\n';
  os << "tokens " << model.vocab().size() << '\n';
  for (const auto& t : model.vocab().tokens()) os << escape(t) << '\n';
  return os.str();
}

BpeModel parse_model(std::string_view content) {
  std::vector<std::string_view> lines;
  for (std::size_t pos = 0; pos < content.size();) {
    const std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) throw SubwordError("model file must end with a newline");
    lines.push_back(content.substr(pos, nl - pos));
    pos = nl + 1;
  }
  std::size_t cur = 0;
  auto next = [&]() -> std::string_view {
    if (cur >= lines.size()) throw SubwordError("truncated model file", cur + 1);
    return lines[cur++];
  };
  auto section = [&](std::string_view name) -> std::size_t {
    auto line = next();
    const std::string prefix = std::string(name) + " ";
    if (!line.starts_with(prefix)) {
      throw SubwordError("expected '" + std::string(name) + " <count>'", cur);
    }
    try {
      std::size_t used = 0;
      const std::string num(line.substr(prefix.size()));
      const auto n = std::stoull(num, &used);
      if (used != num.size()) throw std::invalid_argument("trailing");
      return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      throw SubwordError("bad count in '" + std::string(line) + "'", cur);
    }
  };

  if (next() != kHeader) throw SubwordError("not an mtkit BPE model (bad header)", 1);
  if (section("specials") != kNumSpecials) throw SubwordError("unexpected special count", cur);
  for (auto s : kSpecialTokens) {
    if (next() != s) throw SubwordError("special tokens out of order", cur);
  }
  MergeTable merges;
  const std::size_t n_merges = section("merges");
  for (std::size_t i = 0; i < n_merges; ++i) {
    auto line = next();
    const auto sp = line.find(' ');
    if (sp == std::string_view::npos || line.find(' ', sp + 1) != std::string_view::npos) {
      throw SubwordError("merge line must hold exactly two symbols", cur);
    }
    merges.merges.push_back({unescape(line.substr(0, sp), cur), unescape(line.substr(sp + 1), cur)});
  }
  const std::size_t n_tokens = section("tokens");
  std::vector<std::string> tokens;
  tokens.reserve(n_tokens);
  for (std::size_t i = 0; i < n_tokens; ++i) tokens.push_back(unescape(next(), cur));
  if (cur != lines.size()) throw SubwordError("trailing content after token list", cur + 1);
  return BpeModel(std::move(merges), SubwordVocab(std::move(tokens)));
}

void save_model(const BpeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SubwordError("cannot write " + path.string());
  out << serialize_model(model);
  if (!out) throw SubwordError("write error on " + path.string());
}

BpeModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SubwordError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

std::string serialize_vocab(const SubwordVocab& vocab) {
  std::ostringstream os;
  os << kVocabHeader << '\n' << "tokens " << vocab.size() << '\n';
  for (const auto& t : vocab.tokens()) os << escape(t) << '\n';
  return os.str();
}

SubwordVocab parse_vocab(std::string_view content) {
  std::vector<std::string_view> lines;
  for (std::size_t pos = 0; pos < content.size();) {
    const std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) throw SubwordError("vocabulary file must end with a newline");
    lines.push_back(content.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.empty() || lines[0] != kVocabHeader) throw SubwordError("not an mtkit vocabulary (bad header)", 1);
  if (lines.size() < 2 || !lines[1].starts_with("tokens ")) throw SubwordError("expected 'tokens <count>'", 2);
  std::size_t n = 0;
  const auto num = lines[1].substr(7);
  auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), n);
  if (ec != std::errc() || p != num.data() + num.size()) throw SubwordError("bad token count", 2);
  if (lines.size() != n + 2) throw SubwordError("token count does not match the file", lines.size());
  std::vector<std::string> tokens;
  tokens.reserve(n);
  for (std::size_t i = 0; i < n; ++i) tokens.push_back(unescape(lines[i + 2], i + 3));
  return SubwordVocab(std::move(tokens));
}

void save_vocab(const SubwordVocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SubwordError("cannot write " + path.string());
  out << serialize_vocab(vocab);
  if (!out) throw SubwordError("write error on " + path.string());
}

SubwordVocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SubwordError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_vocab(buf.str());
}

}  // namespace mtkit::subword
