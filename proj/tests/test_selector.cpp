#include <doctest.h>

#include <algorithm>
#include <functional>

#include "support.hpp"
#include "tracerace/corpus.hpp"
#include "tracerace/selector.hpp"

using namespace tracerace;

namespace {

struct Selected {
  Program p;
  Icfg icfg;
  VsaResult res;
  LockSetResult locks;
  Selected(std::string_view text)
      : p(parse_program(text)), icfg(p), res(analyze(icfg, p)), locks(compute_locksets(p, icfg, res)) {}
  TracePoint tp(const std::string& id) const { return *trace_point_for(p, *p.find_instr(id)); }
  NodeId at(const std::string& id) const { return icfg.node(*p.find_instr(id)); }
  RaceFreeChecker checker() const { return RaceFreeChecker(p, icfg, res, locks); }
};

std::set<std::string> ids(const Program& p, const std::set<TracePoint>& s) {
  std::set<std::string> out;
  for (const auto& t : s) out.insert(p.instr_id(t.instr));
  return out;
}

constexpr const char* kMain2 =
    "fn main {\n m0: spawn r4, t1\n m1: spawn r5, t2\n m2: join r4\n m3: join r5\n m4: halt\n}\n";

}  // namespace

TEST_CASE("two reads of one global are race-free") {
  Selected s(std::string("global g8 size 8\nfn t1 {\n a: mov r1, [g8]\n b: ret\n}\n"
                         "fn t2 {\n a: mov r1, [g8]\n b: ret\n}\n") + kMain2);
  const auto c = s.checker();
  CHECK(RaceFreeChecker::not_write(s.tp("t1.a"), s.tp("t2.a")));
  const auto part = must_race_free({s.tp("t1.a"), s.tp("t2.a")}, c);
  CHECK(part.race_free.size() == 2);
}

TEST_CASE("writes under the same lock are not concurrent") {
  Selected s(std::string("global g8 size 8\nglobal g64 size 8\n"
                         "fn t1 {\n a: lock g64\n b: mov [g8], r1\n c: unlock g64\n d: ret\n}\n"
                         "fn t2 {\n a: lock g64\n b: mov [g8], r1\n c: unlock g64\n d: ret\n}\n") +
             kMain2);
  const auto c = s.checker();
  CHECK(c.not_concurrent(s.tp("t1.b"), s.tp("t2.b")));
  const auto part = must_race_free({s.tp("t1.b"), s.tp("t2.b")}, c);
  CHECK(part.race_free.size() == 2);
}

TEST_CASE("empty lockset against a held lock is concurrent") {
  Selected s(std::string("global g8 size 8\nglobal g64 size 8\n"
                         "fn t1 {\n a: mov [g8], r1\n d: ret\n}\n"
                         "fn t2 {\n a: lock g64\n b: mov [g8], r1\n c: unlock g64\n d: ret\n}\n") +
             kMain2);
  CHECK_FALSE(s.checker().not_concurrent(s.tp("t1.a"), s.tp("t2.b")));
}

TEST_CASE("alias checks") {
  Selected s(std::string(
                 "global g8 size 8\nglobal g16 size 8\nglobal g800 size 8\n"
                 "fn t1 {\n a: mov [g8], r1\n b: mov [g16], r1\n"
                 " c: mov r0, g8\n d: add r0, 8\n e: cmp r0, 800\n f: jne d\n g: mov [r0+0], r1\n"
                 " h: alloc r2, @S, 8\n i: cmp r1, 0\n j: je l\n k: mov r2, g8\n"
                 " l: mov [r2+0], r1\n n: alloc r5, @U, 8\n o: mov [r5+0], r1\n p: ret\n}\n"
                 "fn t2 {\n a: ret\n}\n") +
             kMain2);
  const auto c = s.checker();
  CHECK(c.not_alias(s.tp("t1.a"), s.tp("t1.b")));
  CHECK_FALSE(c.not_alias(s.tp("t1.a"), s.tp("t1.g")));  // {g8} vs TopGlobal
  CHECK_FALSE(c.not_alias(s.tp("t1.l"), s.tp("t1.l")));  // {g8, S} vs itself
  CHECK(c.not_alias(s.tp("t1.a"), s.tp("t1.o")));        // {g8} vs {U}
}

TEST_CASE("ownership") {
  SUBCASE("private allocation") {
    Selected s("fn main {\n a: alloc r1, @S, 8\n b: mov [r1+0], r0\n c: halt\n}");
    CHECK(s.checker().is_owned(s.tp("main.b")));
  }
  SUBCASE("escape to memory") {
    Selected s("global g8 size 8\nfn main {\n a: alloc r1, @S, 8\n b: mov [g8], r1\n"
               " c: mov [r1+0], r0\n d: halt\n}");
    CHECK_FALSE(s.checker().is_owned(s.tp("main.c")));
  }
  SUBCASE("escape to a callee") {
    Selected s("fn f {\n x: ret\n}\nfn main {\n a: alloc r1, @S, 8\n b: call f\n"
               " c: mov [r1+0], r0\n d: halt\n}");
    CHECK_FALSE(s.checker().is_owned(s.tp("main.c")));
  }
  SUBCASE("globals are never owned") {
    Selected s("global g8 size 8\nfn main {\n a: mov [g8], r0\n b: halt\n}");
    CHECK_FALSE(s.checker().is_owned(s.tp("main.a")));
  }
}

namespace {

// Must-held locks by enumerating every path of a loop-free function.
std::map<NodeId, std::set<std::uint64_t>> path_locksets(const Selected& s, std::uint32_t func) {
  std::map<NodeId, std::set<std::uint64_t>> out;
  std::function<void(NodeId, std::set<std::uint64_t>)> walk = [&](NodeId n, std::set<std::uint64_t> held) {
    auto it = out.find(n);
    if (it == out.end()) {
      out[n] = held;
    } else {
      std::set<std::uint64_t> both;
      std::set_intersection(it->second.begin(), it->second.end(), held.begin(), held.end(),
                            std::inserter(both, both.end()));
      it->second = both;
    }
    const Instruction& ins = s.p.at(s.icfg.ref(n));
    if (ins.op == Opcode::Lock) held.insert(static_cast<std::uint64_t>(ins.a.imm));
    if (ins.op == Opcode::Unlock) held.erase(static_cast<std::uint64_t>(ins.a.imm));
    for (NodeId m : s.icfg.intra_successors(n)) walk(m, held);
  };
  walk(s.icfg.entry_of(func), {});
  return out;
}

}  // namespace

TEST_CASE("locksets") {
  SUBCASE("straight line") {
    Selected s("global g8 size 8\nglobal g64 size 8\nfn main {\n a: lock g64\n b: mov [g8], r0\n"
               " c: unlock g64\n d: halt\n}");
    CHECK(s.locks.at(s.at("main.b")) == std::set<std::uint64_t>{64});
    CHECK(s.locks.at(s.at("main.d")).empty());
  }
  SUBCASE("one-armed acquire merges to empty") {
    Selected s("global g8 size 8\nglobal g64 size 8\nfn main {\n a: cmp r0, 0\n b: je d\n"
               " c: lock g64\n d: mov [g8], r0\n e: halt\n}");
    CHECK(s.locks.at(s.at("main.d")).empty());
  }
  SUBCASE("nested locks against path enumeration") {
    Selected s("global g8 size 8\nglobal g64 size 8\nglobal g72 size 8\nfn main {\n"
               " a: lock g64\n b: cmp r0, 0\n c: je f\n d: lock g72\n e: mov [g8], r0\n"
               " f: lock g72\n g: mov [g8], r1\n h: unlock g72\n i: cmp r1, 0\n j: je l\n"
               " k: unlock g64\n l: mov [g8], r2\n m: halt\n}");
    CHECK(s.locks.at(s.at("main.g")) == std::set<std::uint64_t>{64, 72});
    const auto oracle = path_locksets(s, 0);
    for (const auto& [n, held] : oracle) CHECK(s.locks.at(n) == held);
  }
}

TEST_CASE("redundant elimination") {
  SUBCASE("adjacent displacements off one base") {
    const Program p = parse_program(fixture("derived").text);
    const Icfg icfg(p);
    const VsaResult res = analyze(icfg, p);
    const SelectionReport sel = select(p, icfg, res);
    const auto trace = ids(p, sel.t_trace);
    CHECK(trace.count("w.a1"));
    CHECK_FALSE(trace.count("w.a2"));
    CHECK_FALSE(trace.count("w.a4"));
    bool found = false;
    for (const auto& r : sel.relations)
      if (p.instr_id(r.derived.instr) == "w.a2") {
        CHECK(p.instr_id(r.source.instr) == "w.a1");
        CHECK(r.delta == 0);
        found = true;
      }
    CHECK(found);
  }
  SUBCASE("reload of a stack slot after a diamond") {
    Selected s(std::string("global g8 size 8\n"
                           "fn t1 {\n x0: mov r2, [g8]\n x1: mov [fp-8], r2\n x2: mov r0, [fp-8]\n"
                           " x3: mov r1, [r0+4]\n x4: cmp r1, 0\n x5: je x7\n x6: mov r3, 1\n"
                           " x7: mov r0, [fp-8]\n x8: mov [r0+4], r3\n x9: ret\n}\n"
                           "fn t2 {\n a: mov [g8], r1\n b: ret\n}\n") +
               kMain2);
    const auto red = redundant_elimination({s.tp("t1.x3"), s.tp("t1.x8")}, s.p, s.icfg, s.res);
    CHECK(red.kept.size() == 1);
    REQUIRE(red.relations.size() == 1);
    CHECK(red.relations[0].delta == 0);
  }
  SUBCASE("no relation across a loop boundary") {
    Selected s("global g8 size 64\nfn main {\n a: mov r2, g8\n b: mov r1, [r2+8]\n c: mov r6, 0\n"
               " d: mov r2, g8\n e: mov r1, [r2+16]\n f: add r6, 1\n g: cmp r6, 3\n h: jne d\n"
               " i: mov r3, [r2+24]\n j: halt\n}");
    const auto red = redundant_elimination({s.tp("main.b"), s.tp("main.e"), s.tp("main.i")}, s.p, s.icfg, s.res);
    CHECK(red.kept.size() == 3);
    CHECK(red.relations.empty());
  }
  SUBCASE("single point is kept") {
    Selected s("global g8 size 8\nfn main {\n a: mov r0, g8\n b: mov [r0+0], r1\n c: halt\n}");
    const auto red = redundant_elimination({s.tp("main.b")}, s.p, s.icfg, s.res);
    CHECK(red.kept.size() == 1);
    CHECK(red.relations.empty());
  }
}

TEST_CASE("selection composition") {
  for (const auto& f : fixtures()) {
    const Program p = parse_program(f.text);
    const Icfg icfg(p);
    const VsaResult res = analyze(icfg, p);
    const SelectionReport s = select(p, icfg, res);
    INFO(f.name);
    CHECK(s.t_shared == find_shared_trace_points(res, p, icfg));
    std::set<TracePoint> expect = s.t_shared;
    for (const auto& t : s.t_race_free) CHECK(expect.erase(t) == 1);
    for (const auto& t : s.t_redundant) CHECK(expect.erase(t) == 1);
    CHECK(expect == s.t_trace);
  }
}

TEST_CASE("fixture selections") {
  auto sel = [](const std::string& name) {
    const Program p = parse_program(fixture(name).text);
    const Icfg icfg(p);
    const VsaResult res = analyze(icfg, p);
    return std::make_pair(p, select(p, icfg, res));
  };
  SUBCASE("stack-only accesses leave only sync points and the global write") {
    auto [p, s] = sel("stack_only");
    for (const auto& t : s.t_trace)
      if (is_memory_access(t.access)) CHECK(p.instr_id(t.instr) == "w.a7");
  }
  SUBCASE("same-lock accesses leave no memory points") {
    auto [p, s] = sel("lock_guarded");
    for (const auto& t : s.t_trace) CHECK_FALSE(is_memory_access(t.access));
  }
  SUBCASE("unguarded writers survive pruning") {
    auto [p, s] = sel("two_writers");
    CHECK(ids(p, s.t_trace).count("w.a1"));
    CHECK(s.t_trace == s.t_shared);
  }
}

TEST_CASE("race-free points have no racing partner") {
  std::vector<std::string> texts;
  for (const auto& f : fixtures()) texts.push_back(f.text);
  for (const auto& g : generate_corpus(20)) texts.push_back(g.text);
  for (const auto& t : texts) {
    const Selected s(t);
    const auto c = s.checker();
    const SelectionReport sel = select(s.p, s.icfg, s.res);
    for (const auto& x : sel.t_race_free) {
      CHECK(is_memory_access(x.access));
      CHECK(sel.t_may_race.count(x) == 0);
      for (const auto& y : sel.t_shared)
        if (is_memory_access(y.access))
          CHECK((c.not_alias(x, y) || c.not_concurrent(x, y) || RaceFreeChecker::not_write(x, y)));
    }
    CHECK(sel.t_trace.size() <= sel.t_shared.size());
    CHECK(sel.t_shared.size() == find_shared_trace_points(s.res, s.p, s.icfg).size());
  }
}
