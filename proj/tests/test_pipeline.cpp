#include <doctest.h>

#include "support.hpp"
#include "tracerace/corpus.hpp"
#include "tracerace/pipeline.hpp"

using namespace tracerace;

TEST_CASE("two writers race on every seed") {
  const Program p = parse_program(fixture("two_writers").text);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SimConfig cfg;
    cfg.seed = seed;
    const auto r = run_pipeline(p, Mode::Selective, cfg);
    CHECK(r.hb.size() >= 1);
    CHECK(race_keys(r.hb) == testing::hb_oracle(r.decoded.merged));
  }
}

TEST_CASE("race-free fixture reports nothing") {
  const auto r = run_pipeline(parse_program(fixture("lock_guarded").text), Mode::Selective, {});
  CHECK(r.hb.empty());
  CHECK(r.lockset.empty());
}

TEST_CASE("modes agree on races and differ on static points") {
  for (const auto& name : {"lock_guarded", "owned_heap", "derived", "stress"}) {
    const Program p = parse_program(fixture(name).text);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      SimConfig cfg;
      cfg.seed = seed;
      const auto s = run_pipeline(p, Mode::Selective, cfg);
      const auto n = run_pipeline(p, Mode::Naive, cfg);
      INFO(name << " seed " << seed);
      CHECK(race_keys(s.hb) == race_keys(n.hb));
      CHECK(s.stats.s_inst < n.stats.s_inst);
      CHECK(s.stats.d_inst <= n.stats.d_inst);
    }
  }
}

TEST_CASE("statistics") {
  const Program p = parse_program(fixture("stress").text);
  const auto unlimited = run_pipeline(p, Mode::Naive, {});
  CHECK(unlimited.stats.loss_percent == 0.0);
  CHECK(unlimited.stats.loss_times == 0);
  SimConfig cfg;
  cfg.buffer_capacity = 16;
  const auto limited = run_pipeline(p, Mode::Naive, cfg);
  CHECK(limited.stats.loss_percent > 0.0);
  CHECK(limited.stats.d_inst >= loss_stats(limited.run).emitted);
  CHECK(limited.stats.d_inst == unlimited.stats.d_inst);
  for (const char* stage : {"analyze", "select", "instrument", "run", "decode", "detect"})
    CHECK(limited.stats.stage_ms.count(stage) == 1);
  const auto j = stats_to_json(limited.stats);
  CHECK(j.at("s_inst") == limited.stats.s_inst);
}

TEST_CASE("stage errors carry the stage name") {
  const Program p = parse_program("global g8 size 8\nfn main {\n a: unlock g8\n b: halt\n}");
  try {
    run_pipeline(p, Mode::Selective, {});
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "run");
  }
}

TEST_CASE("generated corpus covers every pattern") {
  std::set<Pattern> seen;
  for (const auto& g : generate_corpus(50))
    for (auto pat : g.patterns) seen.insert(pat);
  CHECK(seen.size() == 7);
  CHECK(generate_program(9).text == generate_program(9).text);
}
