#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracerace/decoder.hpp"

namespace tracerace {

// Missing entries read as zero.
class VectorClock {
 public:
  std::uint64_t get(std::uint32_t tid) const;
  void set(std::uint32_t tid, std::uint64_t c);
  void tick(std::uint32_t tid) { set(tid, get(tid) + 1); }
  void join(const VectorClock& o);
  bool leq(const VectorClock& o) const;
  const std::map<std::uint32_t, std::uint64_t>& entries() const { return c_; }
  bool operator==(const VectorClock&) const = default;

 private:
  std::map<std::uint32_t, std::uint64_t> c_;
};

enum class Detector : std::uint8_t { HappensBefore, Lockset };

struct RaceAccess {
  std::uint32_t tid = 0;
  std::string origin;
  EventKind kind = EventKind::Read;
  std::uint64_t ts = 0;
  auto operator<=>(const RaceAccess&) const = default;
};

struct RaceReport {
  std::uint64_t address = 0;
  RaceAccess first;
  RaceAccess second;
  Detector detector = Detector::HappensBefore;

  // (address, unordered origin pair)
  std::tuple<std::uint64_t, std::string, std::string> key() const;
  auto operator<=>(const RaceReport&) const = default;
};

class DetectError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<RaceReport> detect_hb(const std::vector<MemoryEvent>& events);
std::vector<RaceReport> detect_lockset(const std::vector<MemoryEvent>& events);

std::set<std::tuple<std::uint64_t, std::string, std::string>> race_keys(
    const std::vector<RaceReport>& reports);

nlohmann::json report_to_json(const RaceReport& r);
RaceReport report_from_json(const nlohmann::json& j);
nlohmann::json reports_to_json(const std::vector<RaceReport>& rs);

}  // namespace tracerace
