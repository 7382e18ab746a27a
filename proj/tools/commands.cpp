#include "commands.hpp"

#include <chrono>
#include <iostream>
#include <sstream>

#include "tracerace/corpus.hpp"
#include "tracerace/decoder.hpp"
#include "tracerace/detector.hpp"
#include "tracerace/instrumenter.hpp"
#include "tracerace/ir.hpp"
#include "tracerace/selector.hpp"
#include "tracerace/vsa.hpp"

namespace cli {

using namespace tracerace;
using nlohmann::json;

SimConfig SimFlags::config() const {
  SimConfig c;
  c.seed = seed;
  c.cpus = cpus;
  c.quantum = quantum;
  c.cycles_per_instr = cpi;
  c.buffer_capacity = buffer;
  c.tsc_interval = tsc_interval;
  c.max_steps = max_steps;
  c.validate();
  return c;
}

namespace {

template <class F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

Program load_program(const std::string& path) {
  return stage("parse", [&] { return parse_program(read_file(path)); });
}

// Writes to `out`, or stdout when empty.
void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-")
    std::cout << text;
  else
    write_file(out, text);
}

std::vector<RaceReport> run_detectors(const std::vector<MemoryEvent>& events,
                                      const std::string& algo) {
  std::vector<RaceReport> out;
  if (algo == "hb" || algo == "both") {
    auto r = stage("detect", [&] { return detect_hb(events); });
    out.insert(out.end(), r.begin(), r.end());
  }
  if (algo == "lockset" || algo == "both") {
    auto r = stage("detect", [&] { return detect_lockset(events); });
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

Instrumented instrument_mode(const Program& p, Mode mode) {
  const Icfg icfg(p);
  const VsaResult vsa = stage("analyze", [&] { return analyze(icfg, p); });
  if (mode == Mode::Naive) return stage("instrument", [&] { return instrument_naive(p, vsa); });
  const SelectionReport sel = stage("select", [&] { return select(p, icfg, vsa); });
  return stage("instrument", [&] { return instrument(p, sel); });
}

Mode mode_or_throw(const std::string& s) {
  auto m = parse_mode(s);
  if (!m) throw StageError("config", "unknown mode '" + s + "'");
  return *m;
}

}  // namespace

int cmd_analyze(const std::string& program, const std::string& out) {
  const Program p = load_program(program);
  const Icfg icfg(p);
  const VsaResult res = stage("analyze", [&] { return analyze(icfg, p); });
  emit(out, vsa_to_json(res, p, icfg).dump(1) + "\n");
  return kClean;
}

int cmd_select(const std::string& program, const std::string& out) {
  const Program p = load_program(program);
  const Icfg icfg(p);
  const VsaResult res = stage("analyze", [&] { return analyze(icfg, p); });
  const SelectionReport sel = stage("select", [&] { return select(p, icfg, res); });
  emit(out, selection_to_json(p, sel).dump(1) + "\n");
  return kClean;
}

int cmd_instrument(const std::string& program, const std::string& mode, const std::string& out,
                   const std::string& mapping) {
  const Program p = load_program(program);
  const Instrumented inst = instrument_mode(p, mode_or_throw(mode));
  emit(out, print_program(inst.program));
  write_file(mapping, mapping_to_json(inst.table).dump(1) + "\n");
  return kClean;
}

int cmd_run(const std::string& program, const SimFlags& sim, const std::string& out_dir) {
  const Program p = load_program(program);
  const SimConfig cfg = stage("config", [&] { return sim.config(); });
  const RunArtifacts a = stage("run", [&] { return run(p, cfg); });
  fs::create_directories(out_dir);
  write_run(out_dir, p, a);
  const LossStats l = loss_stats(a);
  std::cerr << "steps " << a.steps << ", threads " << a.threads << ", ptw " << l.emitted
            << ", dropped " << l.dropped << "\n";
  return kClean;
}

int cmd_decode(const std::string& run_dir, const std::string& mapping, const std::string& out) {
  const RunArtifacts a = stage("decode", [&] { return read_run(run_dir); });
  const MappingTable t =
      stage("decode", [&] { return mapping_from_json(json::parse(read_file(mapping))); });
  const DecodeResult d = stage("decode", [&] { return decode(a, t); });
  emit(out, events_to_jsonl(d.merged));
  return kClean;
}

int cmd_detect(const std::string& events, const std::string& algo, const std::string& out,
               bool fail_on_race) {
  if (algo != "hb" && algo != "lockset" && algo != "both")
    throw StageError("config", "unknown detector '" + algo + "'");
  const auto evs = stage("detect", [&] { return events_from_jsonl(read_file(events)); });
  const auto reports = run_detectors(evs, algo);
  emit(out, reports_to_json(reports).dump(1) + "\n");
  return fail_on_race && !reports.empty() ? kRaces : kClean;
}

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// Runs every stage, writing each artifact as soon as it exists.
StatsReport pipeline_to_dir(const PipelineFlags& f, const fs::path& dir,
                            std::vector<RaceReport>& reports) {
  using clock = std::chrono::steady_clock;
  if (f.algo != "hb" && f.algo != "lockset" && f.algo != "both")
    throw StageError("config", "unknown detector '" + f.algo + "'");
  const Mode mode = mode_or_throw(f.mode);
  const SimConfig cfg = stage("config", [&] { return f.sim.config(); });
  std::map<std::string, double> ms;
  fs::create_directories(dir);

  const Program p = load_program(f.program);
  write_file(dir / "program.ir", print_program(p));
  const Icfg icfg(p);

  auto t0 = clock::now();
  const VsaResult vsa = stage("analyze", [&] { return analyze(icfg, p); });
  ms["analyze"] = ms_since(t0);
  write_file(dir / "vsa.json", vsa_to_json(vsa, p, icfg).dump(1) + "\n");

  t0 = clock::now();
  const SelectionReport sel = stage("select", [&] { return select(p, icfg, vsa); });
  ms["select"] = ms_since(t0);
  write_file(dir / "selection.json", selection_to_json(p, sel).dump(1) + "\n");

  t0 = clock::now();
  const Instrumented inst = stage("instrument", [&] {
    return mode == Mode::Selective ? instrument(p, sel) : instrument_naive(p, vsa);
  });
  ms["instrument"] = ms_since(t0);
  write_file(dir / "instrumented.ir", print_program(inst.program));
  write_file(dir / "mapping.json", mapping_to_json(inst.table).dump(1) + "\n");

  t0 = clock::now();
  const RunArtifacts a = stage("run", [&] { return run(inst.program, cfg); });
  ms["run"] = ms_since(t0);
  write_run(dir / "run", inst.program, a);

  t0 = clock::now();
  const DecodeResult d = stage("decode", [&] { return decode(a, inst.table); });
  ms["decode"] = ms_since(t0);
  write_file(dir / "events.jsonl", events_to_jsonl(d.merged));

  t0 = clock::now();
  reports = run_detectors(d.merged, f.algo);
  ms["detect"] = ms_since(t0);
  write_file(dir / "races.json", reports_to_json(reports).dump(1) + "\n");

  std::vector<RaceReport> hb, ls;
  for (const auto& r : reports) (r.detector == Detector::HappensBefore ? hb : ls).push_back(r);
  StatsReport s = compute_stats(inst.table, a, d, hb, ls);
  s.stage_ms = std::move(ms);
  write_file(dir / "stats.json", stats_to_json(s).dump(1) + "\n");
  return s;
}

void print_stats(const StatsReport& s, std::ostream& os) {
  os << "s_inst         " << s.s_inst << "\n"
     << "d_inst         " << s.d_inst << "\n"
     << "loss_percent   " << s.loss_percent << "\n"
     << "loss_times     " << s.loss_times << "\n"
     << "derived        " << s.derived_events << "\n"
     << "races.hb       " << s.hb_races << "\n"
     << "races.lockset  " << s.lockset_races << "\n";
  for (const auto& [k, v] : s.stage_ms) os << "ms." << k << std::string(11 - std::min<std::size_t>(k.size(), 10), ' ') << v << "\n";
}

}  // namespace

int cmd_pipeline(const PipelineFlags& f) {
  std::vector<RaceReport> reports;
  const StatsReport s = pipeline_to_dir(f, f.out_dir, reports);
  print_stats(s, std::cout);
  return f.fail_on_race && !reports.empty() ? kRaces : kClean;
}

int cmd_sweep(const PipelineFlags& f, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw StageError("config", "sweep needs at least one seed");
  json rows = json::array();
  bool any = false;
  for (auto seed : seeds) {
    PipelineFlags g = f;
    g.sim.seed = seed;
    std::vector<RaceReport> reports;
    const StatsReport s = pipeline_to_dir(g, fs::path(f.out_dir) / ("seed" + std::to_string(seed)), reports);
    any = any || !reports.empty();
    json row = stats_to_json(s);
    row.erase("stage_ms");
    row["seed"] = seed;
    rows.push_back(row);
  }
  const std::string text = rows.dump(1) + "\n";
  write_file(fs::path(f.out_dir) / "sweep.json", text);
  std::cout << text;
  return f.fail_on_race && any ? kRaces : kClean;
}

int cmd_stats(const std::string& dir_s, bool as_json) {
  const fs::path dir(dir_s);
  for (const char* need : {"mapping.json", "run", "events.jsonl", "races.json"})
    if (!fs::exists(dir / need))
      throw StageError("stats", "missing artifact " + (dir / need).string());
  const auto s = stage("stats", [&] {
    const MappingTable t = mapping_from_json(json::parse(read_file(dir / "mapping.json")));
    const RunArtifacts a = read_run(dir / "run");
    DecodeResult d;
    for (const auto& e : events_from_jsonl(read_file(dir / "events.jsonl"))) {
      if (e.kind == EventKind::Gap) ++d.gaps;
      else if (e.derived) ++d.derived;
      else ++d.recorded;
    }
    std::vector<RaceReport> hb, ls;
    for (const auto& j : json::parse(read_file(dir / "races.json"))) {
      RaceReport r = report_from_json(j);
      (r.detector == Detector::HappensBefore ? hb : ls).push_back(r);
    }
    StatsReport s = compute_stats(t, a, d, hb, ls);
    if (fs::exists(dir / "stats.json")) {
      const auto prev = json::parse(read_file(dir / "stats.json"));
      if (prev.contains("stage_ms")) s.stage_ms = prev["stage_ms"].get<std::map<std::string, double>>();
    }
    return s;
  });
  if (as_json)
    std::cout << stats_to_json(s).dump(1) << "\n";
  else
    print_stats(s, std::cout);
  return kClean;
}

int cmd_gen(const std::string& out_dir, std::size_t corpus, std::uint64_t first) {
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  for (const auto& fx : fixtures()) write_file(dir / (fx.name + ".ir"), fx.text);
  for (const auto& g : generate_corpus(corpus, first)) write_file(dir / (g.name + ".ir"), g.text);
  return kClean;
}

}  // namespace cli
