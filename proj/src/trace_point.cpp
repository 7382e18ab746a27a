#include "tracerace/trace_point.hpp"

namespace tracerace {

namespace {
constexpr std::string_view kAccessNames[] = {"read",     "write",  "lock_acq",
                                             "lock_rel", "fork",   "join"};
}

std::string_view access_name(AccessKind k) {
  return kAccessNames[static_cast<int>(k)];
}

std::optional<AccessKind> parse_access(std::string_view s) {
  for (int i = 0; i < 6; ++i)
    if (kAccessNames[i] == s) return static_cast<AccessKind>(i);
  return std::nullopt;
}

std::optional<TracePoint> trace_point_for(const Program& p, InstrRef at) {
  const Instruction& ins = p.at(at);
  TracePoint t;
  t.instr = at;
  auto reg_of = [](const Operand& o) -> std::optional<Reg> {
    if (o.kind == Operand::Kind::Reg || o.kind == Operand::Kind::Mem)
      return o.reg;
    return std::nullopt;
  };
  switch (ins.op) {
    case Opcode::Mov:
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::Cmp: {
      const Operand* m = ins.memory_operand();
      if (!m) return std::nullopt;
      t.reg = reg_of(*m);
      t.access = ins.writes_memory() ? AccessKind::Write : AccessKind::Read;
      return t;
    }
    case Opcode::Lock:
      t.reg = reg_of(ins.a);
      t.access = AccessKind::LockAcq;
      return t;
    case Opcode::Unlock:
      t.reg = reg_of(ins.a);
      t.access = AccessKind::LockRel;
      return t;
    case Opcode::Spawn:
      t.reg = ins.reg;
      t.access = AccessKind::ThreadFork;
      return t;
    case Opcode::Join:
      t.reg = ins.a.reg;
      t.access = AccessKind::ThreadJoin;
      return t;
    default:
      return std::nullopt;
  }
}

std::string describe(const Program& p, const TracePoint& t) {
  std::string s = p.instr_id(t.instr);
  s += "/";
  s += t.reg ? std::string(reg_name(*t.reg)) : std::string("const");
  s += "/";
  s += access_name(t.access);
  return s;
}

}  // namespace tracerace
