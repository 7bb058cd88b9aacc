#include <cstdlib>

#include "doctest.h"
#include "mtkit/config.hpp"
#include "test_util.hpp"

using namespace mtkit;
using namespace mtkit::config;
using mtkit::testing::TempDir;

namespace {

std::size_t error_line(std::string_view content) {
  try {
    parse_config(content);
  } catch (const ConfigError& e) {
    return e.line();
  }
  FAIL("expected a ConfigError");
  return 0;
}

}  // namespace

TEST_CASE("training defaults") {
  const TrainingConfig t;
  CHECK(t.max_updates == 120000);
  CHECK(t.patience == 10);
  CHECK(t.optimizer == "adam");
  CHECK(t.adam_eps == 1e-06);
  CHECK(t.adam_betas == std::vector<double>{0.9, 0.98});
  CHECK(t.warmup_updates == 2500);
  CHECK(t.lr == 3e-05);
  CHECK(t.dropout == 0.3);
  CHECK(t.attention_dropout == 0.1);
  CHECK(t.max_tokens == 1024);
  CHECK(t.save_interval_updates == 5000);
}

TEST_CASE("pipeline defaults") {
  const PipelineConfig c;
  CHECK(c.filter_min_len == 10);
  CHECK(c.filter_max_len == 60);
  CHECK(c.sample_size == 1500000);
  CHECK(c.k == 5);
  CHECK(c.mode == "sample_topk");
  CHECK(c.max_len_ratio == 1.5);
  CHECK(c.n_last == 5);
  CHECK(c.stages == std::vector<std::string>{"stats"});
  CHECK(parse_config("") == c);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("render and parse round-trip") {
  PipelineConfig c;
  CHECK(parse_config(render_config(c)) == c);
  c.stages = {"stats", "filter", "backtranslate", "merge"};
  c.mono = "data/mono.vi";
  c.bitext_src = "a b/train.zh";
  c.toy_epsilon = 0.1;
  c.max_len_ratio = 1.25;
  c.checkpoints = {"c1.mtck", "c2.mtck"};
  c.systems = {{"Base", "v.hyp", "t.hyp"}, {"BT", "v2.hyp", ""}};
  c.training.lr = 0.1 + 0.2;  // not exactly representable as a short decimal
  c.training.adam_betas = {0.85, 0.999};
  c.drop_empty = false;
  c.seed = 18446744073709551615ull;
  const auto text = render_config(c);
  CHECK(parse_config(text) == c);
  CHECK(render_config(parse_config(text)) == text);
  CHECK(text.find("lr = 0.30000000000000004\n") != std::string::npos);
  CHECK(text.find(" \n") == std::string::npos);

  TempDir dir;
  save_config(c, dir / "p.cfg");
  CHECK(load_config(dir / "p.cfg") == c);
}

TEST_CASE("values that cannot be written are rejected") {
  PipelineConfig c;
  c.mono = "bad\nname";
  CHECK_THROWS_AS(render_config(c), ConfigError);
  c.mono = " padded";
  CHECK_THROWS_AS(render_config(c), ConfigError);
}

TEST_CASE("comments, whitespace and CRLF are accepted") {
  const auto c = parse_config("# header\r\n[run]\r\n  seed =  7  \r\n; note\r\n\r\n[sample]\nsize=3\n");
  CHECK(c.seed == 7);
  CHECK(c.sample_size == 3);
}

TEST_CASE("parse errors carry line numbers and fields") {
  CHECK(error_line("[run]\nseed = 1\n[nope]\n") == 3);
  CHECK(error_line("[run]\nseeds = 1\n") == 2);
  CHECK(error_line("[run]\nseed = 1\n\nseed = 2\n") == 4);
  CHECK(error_line("seed = 1\n") == 1);
  CHECK(error_line("[run]\nseed\n") == 2);
  CHECK(error_line("[run]\nseed = -1\n") == 2);
  CHECK(error_line("[run\n") == 1);
  CHECK(error_line("[backtranslate]\ndrop_empty = yes\n") == 2);
  CHECK(error_line("[training]\nlr = nan\n") == 2);
  CHECK(error_line("[run]\nstages = stats,,filter\n") == 2);
  try {
    parse_config("[filter]\nmax_len = x\n");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "filter.max_len");
  }
}

TEST_CASE("validation") {
  auto field_of = [](std::string_view content) -> std::string {
    try {
      parse_config(content);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return "";
  };
  CHECK(field_of("[run]\nstages = stats, train\n") == "run.stages");
  CHECK(field_of("[run]\nstages = stats, stats\n") == "run.stages");
  CHECK(field_of("[run]\nthreads = 0\n") == "run.threads");
  CHECK(field_of("[run]\nsrc_lang = en\n") == "run.src_lang");
  CHECK(field_of("[run]\nsrc_lang = vi\n") == "run.tgt_lang");
  CHECK(field_of("[filter]\nmin_len = 70\n") == "filter.min_len");
  CHECK(field_of("[backtranslate]\nmode = nucleus\n") == "backtranslate.mode");
  CHECK(field_of("[backtranslate]\nk = 0\n") == "backtranslate.k");
  CHECK(field_of("[backtranslate]\nmax_len_ratio = 0.5\n") == "backtranslate.max_len_ratio");
  CHECK(field_of("[backtranslate]\ntoy_epsilon = 1\n") == "backtranslate.toy_epsilon");
  CHECK(field_of("[backtranslate]\nbackend = http://x\n") == "backtranslate.backend");
  CHECK(field_of("[merge]\nupsample_bitext = 0\n") == "merge.upsample_bitext");
  CHECK(field_of("[training]\nadam_betas = 0.9\n") == "training.adam_betas");
  CHECK(field_of("[score]\nsystem.a.dev = x\n") == "score.system.a.dev");
  CHECK(field_of("[run]\nstages = postedit, stats\n").empty());
}

TEST_CASE("system entries") {
  const auto c = parse_config("[score]\nsystem.Base.valid = v1\nsystem.BT.test = t2\nsystem.Base.test = t1\n");
  REQUIRE(c.systems.size() == 2);
  CHECK(c.systems[0] == SystemEntry{"Base", "v1", "t1"});
  CHECK(c.systems[1] == SystemEntry{"BT", "", "t2"});
  CHECK(c.stage_enabled("stats"));
  CHECK_FALSE(c.stage_enabled("score"));
}

TEST_CASE("config path resolution") {
  ::unsetenv(kConfigEnv);
  CHECK(resolve_config_path(std::nullopt) == std::nullopt);
  CHECK(resolve_config_path(std::filesystem::path("a.cfg")) == std::filesystem::path("a.cfg"));
  ::setenv(kConfigEnv, "env.cfg", 1);
  CHECK(resolve_config_path(std::nullopt) == std::filesystem::path("env.cfg"));
  CHECK(resolve_config_path(std::filesystem::path("a.cfg")) == std::filesystem::path("a.cfg"));
  ::setenv(kConfigEnv, "", 1);
  CHECK(resolve_config_path(std::nullopt) == std::nullopt);
  ::unsetenv(kConfigEnv);
  CHECK_THROWS_AS(load_config("/nonexistent/x.cfg"), ConfigError);
}

TEST_CASE("format_double is shortest round-trip") {
  CHECK(format_double(1e-06) == "1e-06");
  CHECK(format_double(0.3) == "0.3");
  CHECK(format_double(1.5) == "1.5");
  CHECK(std::stod(format_double(0.1 + 0.2)) == 0.1 + 0.2);
}
