#include <fstream>
#include <sstream>

#include "tracerace/execsim.hpp"

namespace tracerace {

namespace {

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::string_view in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

constexpr std::size_t kSidebandRecord = 20;

}  // namespace

std::string encode_stream(const std::vector<Packet>& s) {
  std::string out;
  for (const auto& p : s) {
    const bool ptw = p.kind == Packet::Kind::Ptw;
    out.push_back(static_cast<char>(ptw ? 13 : 9));
    out.push_back(static_cast<char>(p.kind));
    put_le(out, p.value, 8);
    if (ptw) put_le(out, p.ptw_id, 4);
  }
  return out;
}

std::vector<Packet> decode_stream(std::string_view bytes) {
  std::vector<Packet> out;
  std::size_t at = 0;
  while (at < bytes.size()) {
    const auto len = static_cast<unsigned char>(bytes[at]);
    if (at + 1 + len > bytes.size() || len < 1)
      throw SimError("truncated packet at byte " + std::to_string(at));
    const auto tag = static_cast<unsigned char>(bytes[at + 1]);
    Packet p;
    if ((tag == 1 || tag == 2) && len == 9) {
      p.kind = static_cast<Packet::Kind>(tag);
      p.value = get_le(bytes, at + 2, 8);
    } else if (tag == 3 && len == 13) {
      p.kind = Packet::Kind::Ptw;
      p.value = get_le(bytes, at + 2, 8);
      p.ptw_id = static_cast<std::uint32_t>(get_le(bytes, at + 10, 4));
    } else {
      throw SimError("bad packet tag " + std::to_string(tag) + " at byte " + std::to_string(at));
    }
    out.push_back(p);
    at += 1 + len;
  }
  return out;
}

std::string encode_sideband(const std::vector<SidebandRecord>& s) {
  std::string out;
  for (const auto& r : s) {
    put_le(out, r.ts, 8);
    put_le(out, r.cpu, 4);
    put_le(out, r.tid_out, 4);
    put_le(out, r.tid_in, 4);
  }
  return out;
}

std::vector<SidebandRecord> decode_sideband(std::string_view bytes) {
  if (bytes.size() % kSidebandRecord != 0) throw SimError("truncated sideband file");
  std::vector<SidebandRecord> out;
  for (std::size_t at = 0; at < bytes.size(); at += kSidebandRecord)
    out.push_back({get_le(bytes, at, 8), static_cast<std::uint32_t>(get_le(bytes, at + 8, 4)),
                   static_cast<std::uint32_t>(get_le(bytes, at + 12, 4)),
                   static_cast<std::uint32_t>(get_le(bytes, at + 16, 4))});
  return out;
}

nlohmann::json sim_config_to_json(const SimConfig& c) {
  return {{"seed", c.seed},
          {"cpus", c.cpus},
          {"quantum", c.quantum},
          {"cycles_per_instr", c.cycles_per_instr},
          {"buffer_capacity", c.buffer_capacity ? nlohmann::json(*c.buffer_capacity) : nlohmann::json()},
          {"tsc_interval", c.tsc_interval},
          {"max_steps", c.max_steps}};
}

SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.cpus = j.at("cpus").get<std::uint32_t>();
  c.quantum = j.at("quantum").get<std::uint32_t>();
  c.cycles_per_instr = j.at("cycles_per_instr").get<std::uint64_t>();
  if (!j.at("buffer_capacity").is_null())
    c.buffer_capacity = j.at("buffer_capacity").get<std::uint64_t>();
  c.tsc_interval = j.at("tsc_interval").get<std::uint64_t>();
  c.max_steps = j.value("max_steps", c.max_steps);
  return c;
}

nlohmann::json packet_to_json(const Packet& p) {
  switch (p.kind) {
    case Packet::Kind::Tsc: return {{"kind", "TSC"}, {"tsc", p.value}};
    case Packet::Kind::Cyc: return {{"kind", "CYC"}, {"elapsed", p.value}};
    case Packet::Kind::Ptw: return {{"kind", "PTW"}, {"payload", p.value}, {"ptw_id", p.ptw_id}};
  }
  return {};
}

nlohmann::json ground_truth_to_json(const Program& p, const GroundTruth& g) {
  nlohmann::json j{{"ts", g.ts},
                   {"tid", g.tid},
                   {"cpu", g.cpu},
                   {"instr", p.instr_id(g.instr)},
                   {"op", opcode_name(g.op)},
                   {"value", g.value}};
  if (g.access) {
    j["access"] = access_name(*g.access);
    j["address"] = g.address;
  }
  if (g.op == Opcode::Ptwrite) j["ptw_id"] = g.address;
  if (g.aloc) j["aloc"] = to_string(p, *g.aloc);
  return j;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

void write_run(const std::filesystem::path& dir, const Program& p, const RunArtifacts& a) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["config"] = sim_config_to_json(a.config);
  meta["steps"] = a.steps;
  meta["threads"] = a.threads;
  meta["loss_log"] = nlohmann::json::array();
  meta["streams"] = nlohmann::json::array();
  for (std::size_t c = 0; c < a.streams.size(); ++c) {
    write_file(dir / ("cpu" + std::to_string(c) + ".bin"), encode_stream(a.streams[c]));
    nlohmann::json s = nlohmann::json::array();
    for (const auto& pk : a.streams[c]) s.push_back(packet_to_json(pk));
    meta["streams"].push_back(std::move(s));
    nlohmann::json l = nlohmann::json::array();
    for (const auto& w : a.loss_log[c])
      l.push_back({{"start", w.start}, {"end", w.end}, {"dropped", w.dropped}});
    meta["loss_log"].push_back(std::move(l));
  }
  meta["sideband"] = nlohmann::json::array();
  for (const auto& r : a.sideband)
    meta["sideband"].push_back({{"ts", r.ts}, {"cpu", r.cpu}, {"tid_out", r.tid_out}, {"tid_in", r.tid_in}});
  write_file(dir / "sideband.bin", encode_sideband(a.sideband));
  write_file(dir / "run.json", meta.dump(1) + "\n");
  std::string gt;
  for (const auto& g : a.ground_truth) gt += ground_truth_to_json(p, g).dump() + "\n";
  write_file(dir / "ground_truth.jsonl", gt);
}

RunArtifacts read_run(const std::filesystem::path& dir) {
  RunArtifacts a;
  const auto meta = nlohmann::json::parse(read_file(dir / "run.json"));
  a.config = sim_config_from_json(meta.at("config"));
  a.steps = meta.value("steps", std::uint64_t{0});
  a.threads = meta.value("threads", 0u);
  a.streams.resize(a.config.cpus);
  a.loss_log.resize(a.config.cpus);
  for (std::uint32_t c = 0; c < a.config.cpus; ++c) {
    a.streams[c] = decode_stream(read_file(dir / ("cpu" + std::to_string(c) + ".bin")));
    for (const auto& w : meta.at("loss_log").at(c))
      a.loss_log[c].push_back({w.at("start").get<std::uint64_t>(), w.at("end").get<std::uint64_t>(),
                               w.at("dropped").get<std::uint64_t>()});
    for (const auto& pk : a.streams[c])
      if (pk.kind == Packet::Kind::Ptw) ++a.emitted_ptw;
  }
  a.sideband = decode_sideband(read_file(dir / "sideband.bin"));
  return a;
}

}  // namespace tracerace
