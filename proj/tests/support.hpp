#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "tracerace/decoder.hpp"
#include "tracerace/detector.hpp"
#include "tracerace/execsim.hpp"
#include "tracerace/instrumenter.hpp"
#include "tracerace/ir.hpp"
#include "tracerace/vsa.hpp"

namespace testing {

using RaceKey = std::tuple<std::uint64_t, std::string, std::string>;

tracerace::Program compile(std::string_view text);

// Happens-before by explicit transitive closure over program order,
// release -> later acquire of the same lock, fork and join edges. Returns every
// unordered conflicting pair.
std::set<RaceKey> hb_oracle(const std::vector<tracerace::MemoryEvent>& events);

// Well-formed random trace: locks respect mutual exclusion, children start
// after their fork and stop before their join. Origins are "e0", "e1", ...
std::vector<tracerace::MemoryEvent> random_trace(std::mt19937_64& rng, std::size_t max_events,
                                                 std::uint32_t max_threads, std::uint32_t locks);

// Grammar of a per-CPU stream: starts with TSC, TSC values strictly increase
// and never move time backwards, CYC values are positive, and each PTW follows
// a timing packet or another PTW. Returns the first violation.
std::optional<std::string> check_stream(const std::vector<tracerace::Packet>& s);

struct Mismatch {
  std::size_t checked = 0;
  std::vector<std::string> errors;
  bool ok() const { return errors.empty(); }
};

// Every ground-truth memory and lock access at an instruction of `original` is
// covered by the static targets of its operand.
Mismatch vsa_soundness(const tracerace::Program& original, const tracerace::Icfg& icfg,
                       const tracerace::VsaResult& vsa, const tracerace::Program& executed,
                       const tracerace::RunArtifacts& run);

// Recorded events equal the ground truth of traced instructions on
// (tid, origin, kind, address, ts).
Mismatch recorded_roundtrip(const tracerace::Program& executed,
                            const tracerace::MappingTable& table,
                            const tracerace::RunArtifacts& run,
                            const tracerace::DecodeResult& dec);

// Derived events equal the ground truth of eliminated instructions on
// (tid, origin, kind, address).
Mismatch derived_roundtrip(const tracerace::Program& executed,
                           const tracerace::MappingTable& table,
                           const tracerace::RunArtifacts& run,
                           const tracerace::DecodeResult& dec);

}  // namespace testing
