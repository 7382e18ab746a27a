#include <doctest.h>

#include "support.hpp"
#include "tracerace/corpus.hpp"
#include "tracerace/instrumenter.hpp"

using namespace tracerace;

namespace {

std::vector<std::string> program_texts(std::size_t generated) {
  std::vector<std::string> out;
  for (const auto& f : fixtures()) out.push_back(f.text);
  for (const auto& g : generate_corpus(generated)) out.push_back(g.text);
  return out;
}

std::size_t count_ptwrites(const Program& p) {
  std::size_t n = 0;
  for (const auto& f : p.functions)
    for (const auto& i : f.body) n += i.op == Opcode::Ptwrite;
  return n;
}

Program strip_ptwrites(const Program& p) {
  Program q = p;
  for (auto& f : q.functions) std::erase_if(f.body, [](const Instruction& i) { return i.op == Opcode::Ptwrite; });
  return parse_program(print_program(q));
}

struct Both {
  Program p;
  Instrumented sel;
  Instrumented naive;
  explicit Both(const std::string& text) : p(parse_program(text)) {
    const Icfg icfg(p);
    const VsaResult res = analyze(icfg, p);
    sel = instrument(p, select(p, icfg, res));
    naive = instrument_naive(p, res);
  }
};

}  // namespace

TEST_CASE("one point gets one ptwrite right before it") {
  const Program p = parse_program(
      "global g8 size 8\nfn main {\n L1: mov r1, g8\n L2: mov r0, [r1+0]\n L3: halt\n}");
  const TracePoint t = *trace_point_for(p, *p.find_instr("main.L2"));
  const Instrumented out = instrument_points(p, {t}, {});
  REQUIRE(out.table.entries.size() == 1);
  const auto& body = out.program.functions[0].body;
  REQUIRE(body.size() == 4);
  CHECK(body[1].op == Opcode::Ptwrite);
  CHECK(body[1].reg == Reg::R1);
  CHECK(body[2].label == "L2");
  CHECK(out.table.at(0).origin == "main.L2");
}

TEST_CASE("nothing selected leaves the program unchanged") {
  const Program p = parse_program(fixture("two_writers").text);
  const Instrumented out = instrument_points(p, {}, {});
  CHECK(out.table.entries.empty());
  CHECK(print_program(out.program) == print_program(p));
}

TEST_CASE("already instrumented input is rejected") {
  const Program p = parse_program("global g8 size 8\nfn main {\n ptwrite #0\n a: mov [g8], r0\n b: halt\n}");
  CHECK_THROWS_AS(instrument_points(p, {}, {}), InstrumentError);
}

TEST_CASE("instrumentation structure over the corpus") {
  for (const auto& text : program_texts(40)) {
    const Both b(text);
    for (const Instrumented* inst : {&b.sel, &b.naive}) {
      const Program& q = inst->program;
      // One ptwrite per table entry, ids dense and matching.
      CHECK(count_ptwrites(q) == inst->table.entries.size());
      std::set<std::uint32_t> seen;
      for (const auto& f : q.functions)
        for (const auto& i : f.body)
          if (i.op == Opcode::Ptwrite) {
            CHECK(seen.insert(i.ptw_id).second);
            REQUIRE(i.ptw_id < inst->table.entries.size());
            const MappingEntry& e = inst->table.at(i.ptw_id);
            CHECK(e.attach == i.attach);
            CHECK(e.reg.has_value() == i.has_reg);
            const auto origin = b.p.find_instr(e.origin);
            REQUIRE(origin);
            CHECK(trace_point_for(b.p, *origin)->access == e.access);
          }
      for (std::uint32_t k = 0; k < inst->table.entries.size(); ++k) CHECK(inst->table.entries[k].ptw_id == k);
      // Removing the records gives back the original program.
      CHECK(strip_ptwrites(q).same_structure(b.p));
      // Branches land on the target or on the records prefixed to it.
      for (const auto& f : q.functions)
        for (const auto& i : f.body) {
          if (!i.is_branch()) continue;
          std::size_t k = i.resolved;
          while (f.body[k].op == Opcode::Ptwrite && f.body[k].attach == PtwAttach::Before) ++k;
          CHECK(f.body[k].label == i.target);
          if (i.resolved > 0) {
            const auto& prev = f.body[i.resolved - 1];
            CHECK_FALSE((prev.op == Opcode::Ptwrite && prev.attach == PtwAttach::Before));
          }
        }
    }
    CHECK(b.naive.table.entries.size() >= b.sel.table.entries.size());
  }
}

TEST_CASE("unprunable program instruments identically") {
  const Both b("global g8 size 8\nfn w {\n a: mov [g8], r1\n b: ret\n}\n"
               "fn main {\n m0: spawn r4, w\n m1: spawn r5, w\n m2: join r4\n m3: join r5\n m4: halt\n}");
  CHECK(b.sel.table == b.naive.table);
  CHECK(print_program(b.sel.program) == print_program(b.naive.program));
}

TEST_CASE("stack-only program records only synchronization") {
  const Both b("fn w {\n a: mov [fp-8], r1\n b: mov r2, [fp-8]\n c: ret\n}\n"
               "fn main {\n m0: spawn r4, w\n m1: join r4\n m2: halt\n}");
  for (const auto& e : b.naive.table.entries) CHECK_FALSE(is_memory_access(e.access));
  CHECK(b.naive.table.entries.size() == 2);
}

TEST_CASE("mapping table JSON round-trip") {
  const Both b(fixture("derived").text);
  CHECK(mapping_from_json(mapping_to_json(b.sel.table)) == b.sel.table);
  CHECK(b.sel.table.derived_count() == 2);
}

TEST_CASE("instrumentation preserves program semantics") {
  const auto texts = program_texts(20);
  for (const auto& text : texts) {
    const Both b(text);
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      SimConfig cfg;
      cfg.seed = seed;
      const auto orig = run(b.p, cfg);
      CHECK(run(b.sel.program, cfg).final_memory == orig.final_memory);
      CHECK(run(b.naive.program, cfg).final_memory == orig.final_memory);
    }
  }
}
