#include "tracerace/pipeline.hpp"

#include <chrono>

namespace tracerace {

std::string_view mode_name(Mode m) { return m == Mode::Selective ? "selective" : "naive"; }

std::optional<Mode> parse_mode(std::string_view s) {
  if (s == "selective") return Mode::Selective;
  if (s == "naive") return Mode::Naive;
  return std::nullopt;
}

nlohmann::json stats_to_json(const StatsReport& s) {
  return {{"s_inst", s.s_inst},
          {"d_inst", s.d_inst},
          {"loss_percent", s.loss_percent},
          {"loss_times", s.loss_times},
          {"hb_races", s.hb_races},
          {"lockset_races", s.lockset_races},
          {"derived_events", s.derived_events},
          {"stage_ms", s.stage_ms}};
}

StatsReport compute_stats(const MappingTable& table, const RunArtifacts& run,
                          const DecodeResult& dec, const std::vector<RaceReport>& hb,
                          const std::vector<RaceReport>& lockset) {
  StatsReport s;
  s.s_inst = table.entries.size();
  const LossStats loss = loss_stats(run);
  s.d_inst = loss.emitted + loss.dropped;
  s.loss_percent = loss.loss_percent;
  s.loss_times = loss.loss_times;
  s.hb_races = hb.size();
  s.lockset_races = lockset.size();
  s.derived_events = dec.derived;
  return s;
}

namespace {

template <class F>
auto timed(const char* stage, std::map<std::string, double>& ms, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    auto r = f();
    ms[stage] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return r;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

}  // namespace

PipelineResult run_pipeline(const Program& p, Mode mode, const SimConfig& cfg) {
  PipelineResult r;
  std::map<std::string, double> ms;
  r.program = p;
  const Icfg icfg(p);
  r.vsa = timed("analyze", ms, [&] { return analyze(icfg, p); });
  r.selection = timed("select", ms, [&] { return select(p, icfg, r.vsa); });
  r.instrumented = timed("instrument", ms, [&] {
    return mode == Mode::Selective ? instrument(p, r.selection) : instrument_naive(p, r.vsa);
  });
  r.run = timed("run", ms, [&] { return run(r.instrumented.program, cfg); });
  r.decoded = timed("decode", ms, [&] { return decode(r.run, r.instrumented.table); });
  r.hb = timed("detect", ms, [&] { return detect_hb(r.decoded.merged); });
  r.lockset = timed("detect_lockset", ms, [&] { return detect_lockset(r.decoded.merged); });
  r.stats = compute_stats(r.instrumented.table, r.run, r.decoded, r.hb, r.lockset);
  r.stats.stage_ms = std::move(ms);
  return r;
}

}  // namespace tracerace
