#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tracerace/execsim.hpp"
#include "tracerace/pipeline.hpp"

namespace cli {

namespace fs = std::filesystem;

enum Exit : int { kClean = 0, kRaces = 1, kError = 2 };

struct SimFlags {
  std::uint64_t seed = 1;
  std::uint32_t cpus = 2;
  std::uint32_t quantum = 8;
  std::uint32_t cpi = 3;
  std::optional<std::uint64_t> buffer;  // unlimited when absent
  std::uint64_t tsc_interval = 64;
  std::uint64_t max_steps = 2'000'000;

  tracerace::SimConfig config() const;
};

struct PipelineFlags {
  std::string program;
  std::string mode = "selective";
  std::string algo = "hb";
  std::string out_dir;
  bool fail_on_race = true;
  SimFlags sim;
};

int cmd_analyze(const std::string& program, const std::string& out);
int cmd_select(const std::string& program, const std::string& out);
int cmd_instrument(const std::string& program, const std::string& mode,
                   const std::string& out, const std::string& mapping);
int cmd_run(const std::string& program, const SimFlags& sim, const std::string& out_dir);
int cmd_decode(const std::string& run_dir, const std::string& mapping, const std::string& out);
int cmd_detect(const std::string& events, const std::string& algo, const std::string& out,
               bool fail_on_race);
int cmd_pipeline(const PipelineFlags& f);
int cmd_sweep(const PipelineFlags& f, const std::vector<std::uint64_t>& seeds);
int cmd_stats(const std::string& dir, bool as_json);
int cmd_gen(const std::string& out_dir, std::size_t corpus, std::uint64_t first);

}  // namespace cli
