#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracerace/decoder.hpp"
#include "tracerace/detector.hpp"
#include "tracerace/execsim.hpp"
#include "tracerace/instrumenter.hpp"
#include "tracerace/ir.hpp"
#include "tracerace/selector.hpp"
#include "tracerace/vsa.hpp"

namespace tracerace {

enum class Mode : std::uint8_t { Selective, Naive };

std::string_view mode_name(Mode m);
std::optional<Mode> parse_mode(std::string_view s);

struct StatsReport {
  std::size_t s_inst = 0;
  std::uint64_t d_inst = 0;  // executed ptwrites, dropped ones included
  double loss_percent = 0.0;
  std::uint64_t loss_times = 0;
  std::size_t hb_races = 0;
  std::size_t lockset_races = 0;
  std::size_t derived_events = 0;
  std::map<std::string, double> stage_ms;
};

nlohmann::json stats_to_json(const StatsReport& s);

struct PipelineResult {
  Program program;
  VsaResult vsa;
  SelectionReport selection;
  Instrumented instrumented;
  RunArtifacts run;
  DecodeResult decoded;
  std::vector<RaceReport> hb;
  std::vector<RaceReport> lockset;
  StatsReport stats;
};

// Error raised by a named stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

PipelineResult run_pipeline(const Program& p, Mode mode, const SimConfig& cfg);

// Statistics recomputable from stored artifacts.
StatsReport compute_stats(const MappingTable& table, const RunArtifacts& run,
                          const DecodeResult& dec, const std::vector<RaceReport>& hb,
                          const std::vector<RaceReport>& lockset);

}  // namespace tracerace
