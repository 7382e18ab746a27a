#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracerace/ir.hpp"
#include "tracerace/selector.hpp"
#include "tracerace/trace_point.hpp"
#include "tracerace/vsa.hpp"

namespace tracerace {

// An access whose base register was not recorded and is rebuilt offline as
// source payload + delta.
struct DerivedTarget {
  std::string origin;  // instruction id
  AccessKind access = AccessKind::Read;
  std::int64_t delta = 0;
  std::int64_t disp = 0;
  // Instructions executed from the source access to this one.
  std::uint32_t distance = 0;

  bool operator==(const DerivedTarget&) const = default;
};

struct MappingEntry {
  std::uint32_t ptw_id = 0;
  std::string origin;  // instruction id, stable across instrumentation
  std::optional<Reg> reg;
  AccessKind access = AccessKind::Read;
  PtwAttach attach = PtwAttach::Before;
  // Effective address = payload + disp, or `constant` when no register is
  // recorded. Fork/join payloads are thread ids.
  std::int64_t disp = 0;
  std::optional<std::uint64_t> constant;
  std::vector<DerivedTarget> derived;

  bool operator==(const MappingEntry&) const = default;
};

struct MappingTable {
  std::vector<MappingEntry> entries;  // indexed by ptw_id

  const MappingEntry& at(std::uint32_t ptw_id) const;
  std::size_t derived_count() const;
  bool operator==(const MappingTable&) const = default;
};

struct Instrumented {
  Program program;
  MappingTable table;
};

class InstrumentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Records every t_trace point and attaches derived relations to their sources.
Instrumented instrument(const Program& p, const SelectionReport& sel);

// Records every shared trace point, with no pruning.
Instrumented instrument_naive(const Program& p, const VsaResult& res);

// Shared core: records `points`, attaching `relations` (whose sources must be
// in `points`).
Instrumented instrument_points(const Program& p, const std::set<TracePoint>& points,
                               const std::vector<DerivedRelation>& relations);

nlohmann::json mapping_to_json(const MappingTable& t);
MappingTable mapping_from_json(const nlohmann::json& j);

}  // namespace tracerace
