#include "mtkit/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace mtkit::config {

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ConfigError("cannot format number");
  return std::string(buf, p);
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::uint64_t to_u64(std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw std::invalid_argument("expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::string> to_list(std::string_view v) {
  std::vector<std::string> out;
  if (v.empty()) return out;
  std::size_t pos = 0;
  for (;;) {
    const auto comma = v.find(',', pos);
    const auto item = trim(v.substr(pos, comma == std::string_view::npos ? v.npos : comma - pos));
    if (item.empty()) throw std::invalid_argument("empty list item");
    out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& items, std::function<std::string(const T&)> fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += fmt(items[i]);
  }
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, std::string_view)> set;
};

using C = PipelineConfig;

Field str(std::string sec, std::string key, std::string C::*m) {
  return {std::move(sec), std::move(key), [m](const C& c) { return c.*m; },
          [m](C& c, std::string_view v) { c.*m = std::string(v); }};
}
Field u64(std::string sec, std::string key, std::uint64_t C::*m) {
  return {std::move(sec), std::move(key), [m](const C& c) { return std::to_string(c.*m); },
          [m](C& c, std::string_view v) { c.*m = to_u64(v); }};
}
Field dbl(std::string sec, std::string key, double C::*m) {
  return {std::move(sec), std::move(key), [m](const C& c) { return format_double(c.*m); },
          [m](C& c, std::string_view v) { c.*m = to_double(v); }};
}
Field boolean(std::string sec, std::string key, bool C::*m) {
  return {std::move(sec), std::move(key), [m](const C& c) { return std::string(c.*m ? "true" : "false"); },
          [m](C& c, std::string_view v) { c.*m = to_bool(v); }};
}
Field list(std::string sec, std::string key, std::vector<std::string> C::*m) {
  return {std::move(sec), std::move(key),
          [m](const C& c) { return join<std::string>(c.*m, [](const std::string& s) { return s; }); },
          [m](C& c, std::string_view v) { c.*m = to_list(v); }};
}
Field train_u64(std::string key, std::uint64_t TrainingConfig::*m) {
  return {"training", std::move(key), [m](const C& c) { return std::to_string(c.training.*m); },
          [m](C& c, std::string_view v) { c.training.*m = to_u64(v); }};
}
Field train_dbl(std::string key, double TrainingConfig::*m) {
  return {"training", std::move(key), [m](const C& c) { return format_double(c.training.*m); },
          [m](C& c, std::string_view v) { c.training.*m = to_double(v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      str("run", "work_dir", &C::work_dir),
      u64("run", "seed", &C::seed),
      {"run", "threads", [](const C& c) { return std::to_string(c.threads); },
       [](C& c, std::string_view v) {
         const auto n = to_u64(v);
         if (n > 1024) throw std::invalid_argument("threads must be at most 1024");
         c.threads = static_cast<unsigned>(n);
       }},
      str("run", "src_lang", &C::src_lang),
      str("run", "tgt_lang", &C::tgt_lang),
      list("run", "stages", &C::stages),
      str("data", "bitext_src", &C::bitext_src),
      str("data", "bitext_tgt", &C::bitext_tgt),
      str("data", "mono", &C::mono),
      u64("filter", "min_len", &C::filter_min_len),
      u64("filter", "max_len", &C::filter_max_len),
      u64("sample", "size", &C::sample_size),
      u64("subword", "n_merges", &C::n_merges),
      str("subword", "model", &C::subword_model),
      str("backtranslate", "backend", &C::backend),
      str("backtranslate", "mode", &C::mode),
      u64("backtranslate", "k", &C::k),
      u64("backtranslate", "min_len", &C::pair_min_len),
      u64("backtranslate", "max_len", &C::pair_max_len),
      dbl("backtranslate", "max_len_ratio", &C::max_len_ratio),
      boolean("backtranslate", "drop_empty", &C::drop_empty),
      boolean("backtranslate", "drop_src_eq_tgt", &C::drop_src_eq_tgt),
      u64("backtranslate", "timeout_ms", &C::timeout_ms),
      u64("backtranslate", "max_in_flight", &C::max_in_flight),
      u64("backtranslate", "batch_size", &C::batch_size),
      dbl("backtranslate", "toy_epsilon", &C::toy_epsilon),
      u64("backtranslate", "toy_shift", &C::toy_shift),
      u64("merge", "upsample_bitext", &C::upsample_bitext),
      list("average", "checkpoints", &C::checkpoints),
      u64("average", "n_last", &C::n_last),
      str("prune", "checkpoint", &C::prune_checkpoint),
      str("prune", "embed_name", &C::embed_name),
      str("score", "valid_ref", &C::valid_ref),
      str("score", "test_ref", &C::test_ref),
      str("postedit", "src", &C::postedit_src),
      str("postedit", "hyp", &C::postedit_hyp),
      str("postedit", "rules", &C::rules),
      train_u64("max_updates", &TrainingConfig::max_updates),
      train_u64("patience", &TrainingConfig::patience),
      {"training", "optimizer", [](const C& c) { return c.training.optimizer; },
       [](C& c, std::string_view v) { c.training.optimizer = std::string(v); }},
      train_dbl("adam_eps", &TrainingConfig::adam_eps),
      {"training", "adam_betas",
       [](const C& c) { return join<double>(c.training.adam_betas, format_double); },
       [](C& c, std::string_view v) {
         std::vector<double> out;
         for (const auto& s : to_list(v)) out.push_back(to_double(s));
         c.training.adam_betas = std::move(out);
       }},
      train_u64("warmup_updates", &TrainingConfig::warmup_updates),
      train_dbl("lr", &TrainingConfig::lr),
      train_dbl("dropout", &TrainingConfig::dropout),
      train_dbl("attention_dropout", &TrainingConfig::attention_dropout),
      train_u64("max_tokens", &TrainingConfig::max_tokens),
      train_u64("save_interval_updates", &TrainingConfig::save_interval_updates),
  };
  return all;
}

const std::vector<std::string>& section_order() {
  static const std::vector<std::string> order = {"run",     "data",   "filter", "sample",
                                                 "subword", "backtranslate", "merge", "average",
                                                 "prune",   "score",  "postedit", "training"};
  return order;
}

bool representable(const std::string& v) {
  return v.find_first_of("\r\n") == std::string::npos && trim(v) == v;
}

}  // namespace

bool PipelineConfig::stage_enabled(std::string_view stage) const {
  return std::find(stages.begin(), stages.end(), stage) != stages.end();
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) { throw ConfigError(field + ": " + msg, 0, field); };
  std::set<std::string> seen;
  for (const auto& s : stages) {
    if (std::find(std::begin(kStageOrder), std::end(kStageOrder), s) == std::end(kStageOrder)) {
      fail("run.stages", "unknown stage '" + s + "'");
    }
    if (!seen.insert(s).second) fail("run.stages", "stage '" + s + "' listed twice");
  }
  if (threads < 1) fail("run.threads", "must be >= 1");
  for (const auto& [field, lang] : {std::pair{"run.src_lang", src_lang}, std::pair{"run.tgt_lang", tgt_lang}}) {
    if (lang != "zh" && lang != "vi") fail(field, "must be zh or vi");
  }
  if (src_lang == tgt_lang) fail("run.tgt_lang", "must differ from run.src_lang");
  if (filter_min_len < 1 || filter_min_len > filter_max_len) fail("filter.min_len", "need 1 <= min_len <= max_len");
  if (mode != "greedy" && mode != "beam" && mode != "sample_topk") {
    fail("backtranslate.mode", "must be greedy, beam or sample_topk");
  }
  if (k < 1 || k > UINT32_MAX) fail("backtranslate.k", "must be >= 1");
  if (pair_min_len > pair_max_len) fail("backtranslate.min_len", "must not exceed backtranslate.max_len");
  if (!(max_len_ratio >= 1.0)) fail("backtranslate.max_len_ratio", "must be >= 1");
  if (max_in_flight < 1) fail("backtranslate.max_in_flight", "must be >= 1");
  if (batch_size < 1) fail("backtranslate.batch_size", "must be >= 1");
  if (timeout_ms < 1) fail("backtranslate.timeout_ms", "must be >= 1");
  if (!(toy_epsilon >= 0.0 && toy_epsilon < 1.0)) fail("backtranslate.toy_epsilon", "must lie in [0, 1)");
  if (backend != "toy" && !backend.starts_with("tcp://") && !backend.starts_with("exec:")) {
    fail("backtranslate.backend", "must be toy, tcp://HOST:PORT or exec:COMMAND");
  }
  if (upsample_bitext < 1) fail("merge.upsample_bitext", "must be >= 1");
  if (n_last < 1) fail("average.n_last", "must be >= 1");
  if (training.adam_betas.size() != 2) fail("training.adam_betas", "needs exactly two values");
  for (const auto& s : systems) {
    if (s.name.empty() || s.name.find_first_of(". \t=") != std::string::npos) {
      fail("score.system", "bad system name '" + s.name + "'");
    }
  }
}

PipelineConfig parse_config(std::string_view content) {
  PipelineConfig c;
  std::map<std::string, const Field*> index;
  for (const auto& f : fields()) index[f.section + "." + f.key] = &f;
  std::set<std::string> seen;
  std::string section;
  std::size_t line_no = 0;
  for (std::size_t pos = 0; pos < content.size();) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    const auto line = trim(content.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header", line_no);
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (std::find(section_order().begin(), section_order().end(), section) == section_order().end()) {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section + "]", line_no);
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value", line_no);
    }
    if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside a section", line_no);
    const std::string key(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    const std::string field = section + "." + key;
    if (!seen.insert(field).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key " + field, line_no, field);
    }
    try {
      if (section == "score" && key.starts_with("system.")) {
        const auto dot = key.rfind('.');
        const std::string name = key.substr(7, dot - 7);
        const std::string which = key.substr(dot + 1);
        if (dot <= 7 || name.empty() || (which != "valid" && which != "test")) {
          throw ConfigError("line " + std::to_string(line_no) + ": unknown key " + field, line_no, field);
        }
        auto it = std::find_if(c.systems.begin(), c.systems.end(), [&](const SystemEntry& s) { return s.name == name; });
        if (it == c.systems.end()) {
          c.systems.push_back({name, "", ""});
          it = std::prev(c.systems.end());
        }
        (which == "valid" ? it->valid_hyp : it->test_hyp) = std::string(value);
        continue;
      }
      auto it = index.find(field);
      if (it == index.end()) {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown key " + field, line_no, field);
      }
      it->second->set(c, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + field + ": " + e.what(), line_no, field);
    }
  }
  c.validate();
  return c;
}

std::string render_config(const PipelineConfig& c) {
  std::ostringstream os;
  bool first = true;
  for (const auto& section : section_order()) {
    os << (first ? "" : "\n") << '[' << section << "]\n";
    first = false;
    for (const auto& f : fields()) {
      if (f.section != section) continue;
      const std::string v = f.get(c);
      if (!representable(v)) throw ConfigError(section + "." + f.key + ": value cannot be written", 0, section + "." + f.key);
      os << f.key << (v.empty() ? " =" : " = ") << v << '\n';
    }
    if (section == "score") {
      for (const auto& s : c.systems) {
        if (!representable(s.valid_hyp) || !representable(s.test_hyp)) {
          throw ConfigError("score.system." + s.name + ": value cannot be written");
        }
        os << "system." << s.name << ".valid" << (s.valid_hyp.empty() ? " =" : " = ") << s.valid_hyp << '\n';
        os << "system." << s.name << ".test" << (s.test_hyp.empty() ? " =" : " = ") << s.test_hyp << '\n';
      }
    }
  }
  return os.str();
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what(), e.line(), e.field());
  }
}

void save_config(const PipelineConfig& c, const std::filesystem::path& path) {
  const std::string text = render_config(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << text;
  if (!out.flush()) throw ConfigError("write failed: " + path.string());
}

std::optional<std::filesystem::path> resolve_config_path(const std::optional<std::filesystem::path>& cli_path) {
  if (cli_path) return cli_path;
  if (const char* env = std::getenv(kConfigEnv); env != nullptr && *env != '\0') return std::filesystem::path(env);
  return std::nullopt;
}

}  // namespace mtkit::config
