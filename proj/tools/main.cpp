#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

void add_sim_flags(CLI::App* c, cli::SimFlags& s) {
  c->add_option("--seed", s.seed, "schedule seed");
  c->add_option("--cpus", s.cpus, "simulated CPUs")->check(CLI::Range(1u, 64u));
  c->add_option("--quantum", s.quantum, "instructions per scheduling quantum")->check(CLI::PositiveNumber);
  c->add_option("--cpi", s.cpi, "cycles per instruction")->check(CLI::PositiveNumber);
  c->add_option("--buffer", s.buffer, "PTW packets per CPU per TSC window (default unlimited)");
  c->add_option("--tsc-interval", s.tsc_interval, "instructions per TSC window")->check(CLI::PositiveNumber);
  c->add_option("--max-steps", s.max_steps, "abort after this many steps");
}

void add_pipeline_flags(CLI::App* c, cli::PipelineFlags& f) {
  c->add_option("program", f.program, "program file")->required()->check(CLI::ExistingFile);
  c->add_option("--mode", f.mode, "selective or naive")->check(CLI::IsMember({"selective", "naive"}));
  c->add_option("--algo", f.algo, "hb, lockset or both")->check(CLI::IsMember({"hb", "lockset", "both"}));
  c->add_option("--out-dir", f.out_dir, "artifact directory")->required();
  c->add_flag("!--no-fail-on-race", f.fail_on_race, "exit 0 even when races are reported");
  add_sim_flags(c, f.sim);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective trace-point instrumentation and offline race detection"};
  app.require_subcommand(1);

  std::string program, out, mode = "selective", mapping, run_dir, events, algo = "hb", dir;
  bool fail_on_race = true, as_json = false;
  cli::SimFlags sim;
  cli::PipelineFlags pf;
  std::vector<std::uint64_t> seeds;
  std::size_t corpus = 0;
  std::uint64_t first = 0;

  auto* analyze = app.add_subcommand("analyze", "value-set analysis, JSON dump");
  analyze->add_option("program", program)->required()->check(CLI::ExistingFile);
  analyze->add_option("-o,--out", out, "output file (default stdout)");

  auto* sel = app.add_subcommand("select", "trace-point selection report");
  sel->add_option("program", program)->required()->check(CLI::ExistingFile);
  sel->add_option("-o,--out", out, "output file (default stdout)");

  auto* inst = app.add_subcommand("instrument", "insert ptwrite trace points");
  inst->add_option("program", program)->required()->check(CLI::ExistingFile);
  inst->add_option("--mode", mode)->check(CLI::IsMember({"selective", "naive"}));
  inst->add_option("-o,--out", out, "instrumented program (default stdout)");
  inst->add_option("--mapping", mapping, "mapping table output")->required();

  auto* runc = app.add_subcommand("run", "simulate a program and record traces");
  runc->add_option("program", program)->required()->check(CLI::ExistingFile);
  runc->add_option("--out-dir", dir)->required();
  add_sim_flags(runc, sim);

  auto* dec = app.add_subcommand("decode", "decode a run into memory events");
  dec->add_option("run_dir", run_dir)->required()->check(CLI::ExistingDirectory);
  dec->add_option("--mapping", mapping)->required()->check(CLI::ExistingFile);
  dec->add_option("-o,--out", out, "events JSON lines (default stdout)");

  auto* det = app.add_subcommand("detect", "detect races in decoded events");
  det->add_option("events", events)->required()->check(CLI::ExistingFile);
  det->add_option("--algo", algo)->check(CLI::IsMember({"hb", "lockset", "both"}));
  det->add_option("-o,--out", out, "race report (default stdout)");
  det->add_flag("!--no-fail-on-race", fail_on_race);

  auto* pipe = app.add_subcommand("pipeline", "run every stage, keep all artifacts");
  add_pipeline_flags(pipe, pf);

  auto* sweep = app.add_subcommand("sweep", "pipeline over a list of schedule seeds");
  cli::PipelineFlags sf;
  add_pipeline_flags(sweep, sf);
  sweep->get_option("--seed")->description("ignored, use --seeds");
  sweep->add_option("--seeds", seeds, "schedule seeds")->required()->delimiter(',');

  auto* stats = app.add_subcommand("stats", "counters from a pipeline artifact directory");
  stats->add_option("dir", dir)->required()->check(CLI::ExistingDirectory);
  stats->add_flag("--json", as_json);

  auto* gen = app.add_subcommand("gen", "write fixtures and generated programs");
  gen->add_option("--out-dir", dir)->required();
  gen->add_option("--corpus", corpus, "generated programs to write");
  gen->add_option("--first", first, "first generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kError;
  }

  try {
    if (*analyze) return cli::cmd_analyze(program, out);
    if (*sel) return cli::cmd_select(program, out);
    if (*inst) return cli::cmd_instrument(program, mode, out, mapping);
    if (*runc) return cli::cmd_run(program, sim, dir);
    if (*dec) return cli::cmd_decode(run_dir, mapping, out);
    if (*det) return cli::cmd_detect(events, algo, out, fail_on_race);
    if (*pipe) return cli::cmd_pipeline(pf);
    if (*sweep) return cli::cmd_sweep(sf, seeds);
    if (*stats) return cli::cmd_stats(dir, as_json);
    if (*gen) return cli::cmd_gen(dir, corpus, first);
  } catch (const tracerace::StageError& e) {
    std::cerr << "error in " << e.what() << "\n";
    return cli::kError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kError;
  }
  return cli::kError;
}
