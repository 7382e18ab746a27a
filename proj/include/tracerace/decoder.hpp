#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracerace/execsim.hpp"
#include "tracerace/instrumenter.hpp"

namespace tracerace {

enum class EventKind : std::uint8_t { Read, Write, LockAcq, LockRel, Fork, Join, Gap };

std::string_view event_kind_name(EventKind k);
EventKind event_kind_of(AccessKind a);
inline bool is_access(EventKind k) { return k == EventKind::Read || k == EventKind::Write; }

struct MemoryEvent {
  std::uint32_t tid = 0;
  std::uint64_t ts = 0;
  EventKind kind = EventKind::Read;
  std::uint64_t address = 0;  // child tid for Fork/Join
  std::string origin;         // instruction id; empty for gaps
  bool derived = false;
  // Merge key tail: cpu, position in that cpu's stream, and sub-index for
  // events synthesized from one packet.
  std::uint32_t cpu = 0;
  std::uint64_t pos = 0;
  std::uint32_t sub = 0;

  bool operator==(const MemoryEvent&) const = default;
};

struct TimedPtw {
  std::uint64_t ts = 0;
  std::uint64_t payload = 0;
  std::uint32_t ptw_id = 0;
  std::uint32_t cpu = 0;
  std::uint64_t pos = 0;  // index of the PTW packet in its stream
  std::uint32_t tid = 0;
};

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Time of each PTW: the last TSC plus every CYC since it.
std::vector<TimedPtw> reconstruct_timestamps(const std::vector<Packet>& stream,
                                             std::uint32_t cpu = 0);

// Assigns each PTW to the thread running on its CPU over [switch_in, next
// switch). A PTW at a switch instant belongs to the incoming thread.
void attribute_threads(std::vector<TimedPtw>& ptws,
                       const std::vector<SidebandRecord>& sideband);

struct DecodeResult {
  std::vector<MemoryEvent> merged;
  std::map<std::uint32_t, std::vector<MemoryEvent>> per_thread;
  std::size_t recorded = 0;
  std::size_t derived = 0;
  std::size_t gaps = 0;
};

DecodeResult decode(const RunArtifacts& run, const MappingTable& table);

nlohmann::json event_to_json(const MemoryEvent& e);
MemoryEvent event_from_json(const nlohmann::json& j);
std::string events_to_jsonl(const std::vector<MemoryEvent>& events);
std::vector<MemoryEvent> events_from_jsonl(std::string_view text);

}  // namespace tracerace
