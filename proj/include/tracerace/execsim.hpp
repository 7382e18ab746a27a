#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracerace/ir.hpp"
#include "tracerace/trace_point.hpp"
#include "tracerace/vsa.hpp"

namespace tracerace {

struct SimConfig {
  std::uint64_t seed = 1;
  std::uint32_t cpus = 2;
  std::uint32_t quantum = 8;
  std::uint64_t cycles_per_instr = 3;
  // PTW packets accepted per CPU per window; unlimited when empty.
  std::optional<std::uint64_t> buffer_capacity;
  // Window length in instructions' worth of cycles; each window starts with
  // a TSC re-sync and a fresh packet budget.
  std::uint64_t tsc_interval = 64;
  std::uint64_t max_steps = 2'000'000;

  void validate() const;
  std::uint64_t window_cycles() const { return tsc_interval * cycles_per_instr; }
};

nlohmann::json sim_config_to_json(const SimConfig& c);
SimConfig sim_config_from_json(const nlohmann::json& j);

struct Packet {
  enum class Kind : std::uint8_t { Tsc = 1, Cyc = 2, Ptw = 3 };
  Kind kind = Kind::Tsc;
  std::uint64_t value = 0;  // timestamp, elapsed cycles, or PTW payload
  std::uint32_t ptw_id = 0;

  static Packet tsc(std::uint64_t t) { return {Kind::Tsc, t, 0}; }
  static Packet cyc(std::uint64_t e) { return {Kind::Cyc, e, 0}; }
  static Packet ptw(std::uint64_t payload, std::uint32_t id) { return {Kind::Ptw, payload, id}; }
  bool operator==(const Packet&) const = default;
};

inline constexpr std::uint32_t kNoThread = 0xFFFFFFFFu;

struct SidebandRecord {
  std::uint64_t ts = 0;
  std::uint32_t cpu = 0;
  std::uint32_t tid_out = kNoThread;
  std::uint32_t tid_in = 0;
  bool operator==(const SidebandRecord&) const = default;
};

// One executed instruction. Ptwrites share the timestamp of the instruction
// they are attached to.
struct GroundTruth {
  std::uint64_t ts = 0;
  std::uint32_t tid = 0;
  std::uint32_t cpu = 0;
  InstrRef instr;
  Opcode op = Opcode::Halt;
  std::optional<AccessKind> access;
  std::uint64_t address = 0;  // memory/lock address; thread id for fork/join
  std::int64_t value = 0;     // value read or written, ptwrite payload
  std::optional<ALoc> aloc;   // concrete location of memory/lock accesses
  bool operator==(const GroundTruth&) const = default;
};

struct LossWindow {
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  std::uint64_t dropped = 0;
  bool operator==(const LossWindow&) const = default;
};

struct RunArtifacts {
  SimConfig config;
  std::vector<std::vector<Packet>> streams;  // per CPU
  std::vector<SidebandRecord> sideband;
  std::vector<GroundTruth> ground_truth;
  std::vector<std::vector<LossWindow>> loss_log;  // per CPU
  // Non-zero memory words at exit, sorted by address.
  std::vector<std::pair<std::uint64_t, std::int64_t>> final_memory;
  std::uint64_t emitted_ptw = 0;
  std::uint64_t steps = 0;
  std::uint32_t threads = 0;
};

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunArtifacts run(const Program& p, const SimConfig& cfg);

struct LossStats {
  double loss_percent = 0.0;
  std::uint64_t loss_times = 0;
  std::uint64_t dropped = 0;
  std::uint64_t emitted = 0;
};

LossStats loss_stats(const RunArtifacts& a);

// Binary formats. Packet records: u8 length of the rest, u8 tag, then
// u64 (TSC, CYC) or u64 payload + u32 ptw id (PTW), little-endian.
// Sideband records: u64 ts, u32 cpu, u32 tid_out, u32 tid_in.
std::string encode_stream(const std::vector<Packet>& s);
std::vector<Packet> decode_stream(std::string_view bytes);
std::string encode_sideband(const std::vector<SidebandRecord>& s);
std::vector<SidebandRecord> decode_sideband(std::string_view bytes);

nlohmann::json packet_to_json(const Packet& p);
nlohmann::json ground_truth_to_json(const Program& p, const GroundTruth& g);

// Writes cpuN.bin, sideband.bin, run.json (config, loss log, JSON mirror of
// the streams) and ground_truth.jsonl into `dir`.
void write_run(const std::filesystem::path& dir, const Program& p, const RunArtifacts& a);

// Reads back what the decoder needs: streams, sideband, config and loss log.
RunArtifacts read_run(const std::filesystem::path& dir);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view data);

}  // namespace tracerace
