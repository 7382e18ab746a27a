#include <doctest.h>

#include <algorithm>

#include "support.hpp"
#include "tracerace/corpus.hpp"
#include "tracerace/ir.hpp"

using namespace tracerace;

TEST_CASE("minimal program parses") {
  const Program p = parse_program("fn main { L1: mov [g100], r0\n L2: halt }");
  REQUIRE(p.functions.size() == 1);
  CHECK(p.functions[0].body.size() == 2);
  CHECK(p.entry == "main");
  CHECK(p.at({0, 0}).a.kind == Operand::Kind::Abs);
  CHECK(p.at({0, 0}).a.addr == 100);
}

TEST_CASE("empty text has no entry function") {
  CHECK_THROWS(parse_program(""));
}

TEST_CASE("unresolved label is rejected") {
  CHECK_THROWS_WITH(parse_program("fn main {\n L1: je L9\n L2: halt\n}"),
                    doctest::Contains("unresolved label 'L9'"));
}

TEST_CASE("duplicate alloc sites are rejected") {
  CHECK_THROWS(parse_program("fn main {\n a: alloc r1, @s, 8\n b: alloc r2, @s, 8\n c: halt\n}"));
}

TEST_CASE("straight line gives a fallthrough chain") {
  const Program p = parse_program("fn main {\n a: mov r0, 1\n b: mov r1, 2\n c: halt\n}");
  const Icfg g(p);
  CHECK(g.successors(0).size() == 1);
  CHECK(g.successors(0)[0].to == 1);
  CHECK(g.successors(1).size() == 1);
  CHECK(g.successors(1)[0].to == 2);
  CHECK(g.successors(2).empty());
}

TEST_CASE("conditional branch has two successors") {
  const Program p =
      parse_program("fn main {\n a: cmp r0, 0\n b: je d\n c: mov r1, 1\n d: halt\n}");
  const Icfg g(p);
  const auto s = g.intra_successors(g.node({0, 1}));
  REQUIRE(s.size() == 2);
  CHECK(std::count(s.begin(), s.end(), g.node({0, 2})) == 1);
  CHECK(std::count(s.begin(), s.end(), g.node({0, 3})) == 1);
}

TEST_CASE("call and return edges") {
  // Hand-enumerated: main.b -> f.x (call), f.y -> main.c (return).
  const Program p = parse_program(
      "fn f {\n x: mov r1, 1\n y: ret\n}\n"
      "fn main {\n a: mov r0, 0\n b: call f\n c: halt\n}");
  const Icfg g(p);
  const auto f = *p.function_index("f");
  const auto m = *p.function_index("main");
  const NodeId call = g.node({m, 1});
  const NodeId ret = g.node({f, 1});
  bool call_edge = false, ret_edge = false;
  for (const auto& e : g.successors(call))
    call_edge |= e.kind == EdgeKind::Call && e.to == g.entry_of(f);
  for (const auto& e : g.successors(ret))
    ret_edge |= e.kind == EdgeKind::Return && e.to == g.node({m, 2});
  CHECK(call_edge);
  CHECK(ret_edge);
  CHECK(g.call_sites(f) == std::vector<NodeId>{call});
}

TEST_CASE("print/parse round-trip over fixtures and corpus") {
  std::vector<std::string> texts;
  for (const auto& f : fixtures()) texts.push_back(f.text);
  for (const auto& g : generate_corpus(60)) texts.push_back(g.text);
  for (const auto& t : texts) {
    const Program a = parse_program(t);
    const Program b = parse_program(print_program(a));
    CHECK(a.same_structure(b));
    CHECK(print_program(b) == print_program(a));
  }
}

TEST_CASE("instrumented programs round-trip") {
  const Program p = parse_program(fixture("derived").text);
  const Program q = parse_program(
      "global g8 size 8\nfn main {\n ptwrite #0\n a: mov [g8], r0\n b: spawn r4, main\n"
      " ptwrite.after r4, #1\n c: halt\n}");
  CHECK(parse_program(print_program(q)).same_structure(q));
  CHECK(p.instr_id({0, 1}) == "w.a1");
}

TEST_CASE("intraprocedural successor counts") {
  std::vector<std::string> texts;
  for (const auto& f : fixtures()) texts.push_back(f.text);
  for (const auto& g : generate_corpus(30)) texts.push_back(g.text);
  for (const auto& t : texts) {
    const Program p = parse_program(t);
    const Icfg g(p);
    for (NodeId n = 0; n < g.size(); ++n) {
      const Instruction& ins = p.at(g.ref(n));
      const auto s = g.intra_successors(n);
      std::size_t want = 1;
      if (ins.op == Opcode::Je || ins.op == Opcode::Jne) want = 2;
      if (ins.op == Opcode::Ret || ins.op == Opcode::Halt) want = 0;
      CHECK(s.size() == want);
    }
    // Every instruction is reachable from its function entry.
    for (std::uint32_t f = 0; f < p.functions.size(); ++f) {
      std::vector<bool> seen(g.size(), false);
      std::vector<NodeId> stack{g.entry_of(f)};
      seen[g.entry_of(f)] = true;
      while (!stack.empty()) {
        const NodeId n = stack.back();
        stack.pop_back();
        for (NodeId m : g.intra_successors(n))
          if (!seen[m]) {
            seen[m] = true;
            stack.push_back(m);
          }
      }
      for (std::uint32_t i = 0; i < p.functions[f].body.size(); ++i) CHECK(seen[g.node({f, i})]);
    }
  }
}
