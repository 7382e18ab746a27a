#include <doctest.h>

#include <filesystem>
#include <map>

#include "support.hpp"
#include "tracerace/corpus.hpp"
#include "tracerace/pipeline.hpp"

using namespace tracerace;

namespace {

Instrumented instrumented(const std::string& text, Mode mode) {
  const Program p = parse_program(text);
  const Icfg icfg(p);
  const VsaResult res = analyze(icfg, p);
  return mode == Mode::Naive ? instrument_naive(p, res) : instrument(p, select(p, icfg, res));
}

std::string gt_dump(const Program& p, const RunArtifacts& a) {
  std::string s;
  for (const auto& g : a.ground_truth) s += ground_truth_to_json(p, g).dump() + "\n";
  return s;
}

}  // namespace

TEST_CASE("runs are deterministic") {
  const auto inst = instrumented(fixture("lock_guarded").text, Mode::Naive);
  SimConfig cfg;
  cfg.seed = 7;
  cfg.buffer_capacity = 4;
  const auto a = run(inst.program, cfg);
  const auto b = run(inst.program, cfg);
  CHECK(a.streams == b.streams);
  CHECK(a.sideband == b.sideband);
  CHECK(a.ground_truth == b.ground_truth);
  CHECK(a.loss_log == b.loss_log);
  cfg.seed = 8;
  const auto c = run(inst.program, cfg);
  CHECK(gt_dump(inst.program, c) != gt_dump(inst.program, a));
}

TEST_CASE("single thread emits records in program order") {
  const Program p = parse_program(
      "global g8 size 64\nfn main {\n ptwrite #0\n a: mov [g8], r0\n ptwrite #1\n b: mov [g8+8], r0\n"
      " c: mov r1, g8\n ptwrite r1, #2\n d: mov r2, [r1+16]\n e: halt\n}");
  SimConfig cfg;
  cfg.cpus = 1;
  const auto a = run(p, cfg);
  std::vector<std::uint32_t> ids;
  for (const auto& pk : a.streams[0])
    if (pk.kind == Packet::Kind::Ptw) ids.push_back(pk.ptw_id);
  CHECK(ids == std::vector<std::uint32_t>{0, 1, 2});
  CHECK(a.streams[0].back().value == 8);
}

TEST_CASE("zero capacity drops everything") {
  const auto inst = instrumented(fixture("unguarded").text, Mode::Naive);
  SimConfig cfg;
  cfg.buffer_capacity = 0;
  const auto a = run(inst.program, cfg);
  const auto l = loss_stats(a);
  CHECK(l.emitted == 0);
  CHECK(l.dropped > 0);
  CHECK(l.loss_percent == doctest::Approx(100.0));
  CHECK(l.loss_times > 0);
}

TEST_CASE("loss arithmetic") {
  RunArtifacts a;
  a.streams.resize(1);
  a.streams[0].push_back(Packet::tsc(0));
  for (int i = 0; i < 63; ++i) a.streams[0].push_back(Packet::ptw(0, 0));
  a.loss_log = {{{0, 10, 30}, {20, 30, 7}}};
  const auto l = loss_stats(a);
  CHECK(l.loss_percent == doctest::Approx(37.0));
  CHECK(l.loss_times == 2);
  CHECK(loss_stats(RunArtifacts{}).loss_percent == 0.0);
}

TEST_CASE("streams are well formed and sideband covers execution") {
  for (const auto& f : fixtures()) {
    const auto inst = instrumented(f.text, Mode::Naive);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      SimConfig cfg;
      cfg.seed = seed;
      cfg.cpus = 1 + seed % 3;
      cfg.tsc_interval = 16;
      const auto a = run(inst.program, cfg);
      INFO(f.name << " seed " << seed);
      for (const auto& s : a.streams) {
        const auto err = testing::check_stream(s);
        CHECK_MESSAGE(!err, (err ? *err : ""));
      }
      // Every executed instruction lies in an interval where its thread
      // is switched in on that CPU.
      std::map<std::uint32_t, std::vector<SidebandRecord>> by_cpu;
      for (const auto& r : a.sideband) by_cpu[r.cpu].push_back(r);
      for (const auto& g : a.ground_truth) {
        const auto& v = by_cpu[g.cpu];
        const SidebandRecord* cur = nullptr;
        for (const auto& r : v)
          if (r.ts <= g.ts) cur = &r;
        REQUIRE(cur);
        CHECK(cur->tid_in == g.tid);
      }
      // Switch records chain: each outgoing thread is the previous incoming.
      for (const auto& [cpu, v] : by_cpu)
        for (std::size_t i = 1; i < v.size(); ++i) CHECK(v[i].tid_out == v[i - 1].tid_in);
    }
  }
}

TEST_CASE("locks are mutually exclusive in the ground truth") {
  std::vector<std::string> texts;
  for (const auto& f : fixtures()) texts.push_back(f.text);
  for (const auto& g : generate_corpus(20)) texts.push_back(g.text);
  for (const auto& t : texts) {
    const Program p = parse_program(t);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      SimConfig cfg;
      cfg.seed = seed;
      const auto a = run(p, cfg);
      std::map<std::uint64_t, std::uint32_t> holder;
      for (const auto& g : a.ground_truth) {
        if (g.access == AccessKind::LockAcq) {
          CHECK(holder.count(g.address) == 0);
          holder[g.address] = g.tid;
        } else if (g.access == AccessKind::LockRel) {
          REQUIRE(holder.count(g.address) == 1);
          CHECK(holder[g.address] == g.tid);
          holder.erase(g.address);
        }
      }
    }
  }
}

TEST_CASE("ptwrites cost no program state") {
  const Program p = parse_program(fixture("stress").text);
  const auto inst = instrumented(fixture("stress").text, Mode::Naive);
  SimConfig cfg;
  cfg.seed = 3;
  CHECK(run(p, cfg).final_memory == run(inst.program, cfg).final_memory);
}

TEST_CASE("capacity limits hit naive but not selective on the stress fixture") {
  const auto naive = instrumented(fixture("stress").text, Mode::Naive);
  const auto sel = instrumented(fixture("stress").text, Mode::Selective);
  SimConfig cfg;
  cfg.buffer_capacity = 16;
  CHECK(loss_stats(run(naive.program, cfg)).loss_percent > 0.0);
  CHECK(loss_stats(run(sel.program, cfg)).loss_percent == 0.0);
}

TEST_CASE("runtime errors") {
  CHECK_THROWS_AS(run(parse_program("fn main {\n a: mov r1, 3145728\n b: mov r0, [r1+0]\n c: halt\n}"), {}), SimError);
  CHECK_THROWS_AS(run(parse_program("global g8 size 8\nfn main {\n a: unlock g8\n b: halt\n}"), {}), SimError);
  CHECK_THROWS_AS(run(parse_program("global g8 size 8\nfn main {\n a: lock g8\n b: lock g8\n c: halt\n}"), {}),
                  SimError);
  SimConfig cfg;
  cfg.max_steps = 10;
  CHECK_THROWS_AS(run(parse_program("fn main {\n a: jmp a\n}"), cfg), SimError);
  cfg = {};
  cfg.cpus = 0;
  CHECK_THROWS_AS(run(parse_program("fn main {\n a: halt\n}"), cfg), SimError);
}

TEST_CASE("binary formats round-trip") {
  const auto inst = instrumented(fixture("derived").text, Mode::Naive);
  SimConfig cfg;
  cfg.seed = 5;
  cfg.buffer_capacity = 2;
  cfg.tsc_interval = 4;
  const auto a = run(inst.program, cfg);
  for (const auto& s : a.streams) CHECK(decode_stream(encode_stream(s)) == s);
  CHECK(decode_sideband(encode_sideband(a.sideband)) == a.sideband);
  const auto dir = std::filesystem::temp_directory_path() / "tracerace_run_roundtrip";
  std::filesystem::remove_all(dir);
  write_run(dir, inst.program, a);
  const auto b = read_run(dir);
  CHECK(b.streams == a.streams);
  CHECK(b.sideband == a.sideband);
  CHECK(b.loss_log == a.loss_log);
  CHECK(b.config.seed == 5);
  CHECK(b.config.buffer_capacity == cfg.buffer_capacity);
  std::filesystem::remove_all(dir);
  CHECK_THROWS(decode_stream(std::string("\x09\x07", 2)));
}
