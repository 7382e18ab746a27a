#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracerace/ir.hpp"
#include "tracerace/trace_point.hpp"
#include "tracerace/vsa.hpp"

namespace tracerace {

// Must-held locks before each ICFG node. A lock is identified by its global
// address; only operands whose value set is a single global address yield a
// must-lock.
struct LockSetResult {
  std::vector<std::set<std::uint64_t>> held;
  std::vector<std::string> warnings;

  const std::set<std::uint64_t>& at(NodeId n) const { return held[n]; }
};

struct DerivedRelation {
  TracePoint derived;
  TracePoint source;
  // value(derived.reg) == value(source.reg) + delta
  std::int64_t delta = 0;

  auto operator<=>(const DerivedRelation&) const = default;
};

struct SelectionReport {
  std::set<TracePoint> t_shared;
  std::set<TracePoint> t_race_free;
  std::set<TracePoint> t_may_race;
  std::set<TracePoint> t_redundant;
  std::set<TracePoint> t_trace;
  std::vector<DerivedRelation> relations;
};

// Context shared by the pairwise checks.
class RaceFreeChecker {
 public:
  RaceFreeChecker(const Program& p, const Icfg& icfg, const VsaResult& res,
                  const LockSetResult& locks);

  bool not_alias(const TracePoint& x, const TracePoint& y) const;
  bool not_concurrent(const TracePoint& x, const TracePoint& y) const;
  static bool not_write(const TracePoint& x, const TracePoint& y);
  bool is_owned(const TracePoint& x) const;

  // Global/heap a-locs a memory trace point may access.
  std::vector<ALoc> shared_targets(const TracePoint& x) const;

 private:
  bool escapes(const std::string& site, std::uint32_t func) const;

  const Program& p_;
  const Icfg& icfg_;
  const VsaResult& res_;
  const LockSetResult& locks_;
};

LockSetResult compute_locksets(const Program& p, const Icfg& icfg,
                               const VsaResult& res);

struct RaceFreePartition {
  std::set<TracePoint> race_free;
  std::set<TracePoint> may_race;
};

RaceFreePartition must_race_free(const std::set<TracePoint>& t_shared,
                                 const RaceFreeChecker& checker);

struct RedundancyResult {
  std::set<TracePoint> kept;
  std::vector<DerivedRelation> relations;
};

inline constexpr int kMaxPropagationSteps = 64;

RedundancyResult redundant_elimination(const std::set<TracePoint>& points,
                                       const Program& p, const Icfg& icfg,
                                       const VsaResult& res);

SelectionReport select(const Program& p, const Icfg& icfg, const VsaResult& res);

nlohmann::json trace_point_to_json(const Program& p, const TracePoint& t);
TracePoint trace_point_from_json(const Program& p, const nlohmann::json& j);
nlohmann::json selection_to_json(const Program& p, const SelectionReport& s);

}  // namespace tracerace
