#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "tracerace/ir.hpp"

namespace tracerace {

enum class AccessKind : std::uint8_t {
  Read, Write, LockAcq, LockRel, ThreadFork, ThreadJoin
};

std::string_view access_name(AccessKind k);
std::optional<AccessKind> parse_access(std::string_view s);

inline bool is_memory_access(AccessKind k) {
  return k == AccessKind::Read || k == AccessKind::Write;
}

// An (instruction, register, access) triple selected for recording. reg is
// empty when the accessed address is a constant (absolute operands and
// immediate lock addresses).
struct TracePoint {
  InstrRef instr;
  std::optional<Reg> reg;
  AccessKind access = AccessKind::Read;

  auto operator<=>(const TracePoint&) const = default;
};

// Access kind and recorded register implied by an instruction, if it is a
// potential trace point at all.
std::optional<TracePoint> trace_point_for(const Program& p, InstrRef at);

std::string describe(const Program& p, const TracePoint& t);

}  // namespace tracerace
