#include "support.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace testing {

using namespace tracerace;

Program compile(std::string_view text) { return parse_program(text); }

std::set<RaceKey> hb_oracle(const std::vector<MemoryEvent>& ev) {
  const std::size_t n = ev.size();
  std::vector<std::vector<bool>> hb(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = ev[i];
      const auto& b = ev[j];
      if (a.tid == b.tid) hb[i][j] = true;
      if (a.kind == EventKind::LockRel && b.kind == EventKind::LockAcq && a.address == b.address)
        hb[i][j] = true;
      if (a.kind == EventKind::Fork && b.tid == a.address) hb[i][j] = true;
      if (b.kind == EventKind::Join && a.tid == b.address) hb[i][j] = true;
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      if (hb[i][k])
        for (std::size_t j = 0; j < n; ++j)
          if (hb[k][j]) hb[i][j] = true;

  std::set<RaceKey> out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = ev[i];
      const auto& b = ev[j];
      if (!is_access(a.kind) || !is_access(b.kind)) continue;
      if (a.tid == b.tid || a.address != b.address) continue;
      if (a.kind != EventKind::Write && b.kind != EventKind::Write) continue;
      if (hb[i][j]) continue;
      out.emplace(a.address, std::min(a.origin, b.origin), std::max(a.origin, b.origin));
    }
  return out;
}

std::vector<MemoryEvent> random_trace(std::mt19937_64& rng, std::size_t max_events,
                                      std::uint32_t max_threads, std::uint32_t locks) {
  const std::uint32_t threads = 1 + static_cast<std::uint32_t>(rng() % max_threads);
  const std::size_t len = 1 + rng() % max_events;
  enum class St { Unborn, Live, Done };
  std::vector<St> st(threads, St::Unborn);
  std::vector<bool> root(threads, false);
  st[0] = St::Live;
  root[0] = true;
  for (std::uint32_t t = 1; t < threads; ++t)
    if (rng() % 2 == 0) {
      st[t] = St::Live;
      root[t] = true;
    }
  std::map<std::uint64_t, std::uint32_t> owner;  // lock -> holder
  const std::uint64_t addrs[] = {8, 16};

  std::vector<MemoryEvent> out;
  for (std::size_t guard = 0; out.size() < len && guard < 10 * len; ++guard) {
    std::vector<std::uint32_t> live;
    for (std::uint32_t t = 0; t < threads; ++t)
      if (st[t] == St::Live) live.push_back(t);
    const std::uint32_t t = live[rng() % live.size()];
    MemoryEvent e;
    e.tid = t;
    switch (rng() % 8) {
      case 0: case 1: case 2:
        e.kind = EventKind::Read;
        e.address = addrs[rng() % 2];
        break;
      case 3: case 4:
        e.kind = EventKind::Write;
        e.address = addrs[rng() % 2];
        break;
      case 5: {
        if (locks == 0) continue;
        const std::uint64_t l = 100 * (1 + rng() % locks);
        auto it = owner.find(l);
        if (it == owner.end()) {
          owner[l] = t;
          e.kind = EventKind::LockAcq;
        } else if (it->second == t) {
          owner.erase(it);
          e.kind = EventKind::LockRel;
        } else {
          continue;
        }
        e.address = l;
        break;
      }
      case 6: {
        std::vector<std::uint32_t> unborn;
        for (std::uint32_t c = 0; c < threads; ++c)
          if (st[c] == St::Unborn) unborn.push_back(c);
        if (unborn.empty()) continue;
        const std::uint32_t c = unborn[rng() % unborn.size()];
        st[c] = St::Live;
        e.kind = EventKind::Fork;
        e.address = c;
        break;
      }
      default: {
        std::vector<std::uint32_t> joinable;
        for (std::uint32_t c = 0; c < threads; ++c) {
          if (c == t || st[c] != St::Live || c == 0) continue;
          bool holds = false;
          for (const auto& [l, o] : owner) holds = holds || o == c;
          if (!holds) joinable.push_back(c);
        }
        if (joinable.empty()) continue;
        const std::uint32_t c = joinable[rng() % joinable.size()];
        st[c] = St::Done;
        e.kind = EventKind::Join;
        e.address = c;
        break;
      }
    }
    e.ts = out.size();
    e.origin = "e" + std::to_string(out.size());
    e.pos = out.size();
    out.push_back(e);
  }
  return out;
}

std::optional<std::string> check_stream(const std::vector<Packet>& s) {
  if (s.empty()) return std::nullopt;
  if (s.front().kind != Packet::Kind::Tsc) return "first packet is not TSC";
  std::uint64_t now = 0;
  std::uint64_t last_tsc = 0;
  bool first = true;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Packet& p = s[i];
    std::ostringstream where;
    where << "packet " << i << ": ";
    switch (p.kind) {
      case Packet::Kind::Tsc:
        if (!first && p.value <= last_tsc) return where.str() + "TSC does not increase";
        if (p.value < now) return where.str() + "TSC moves time backwards";
        now = last_tsc = p.value;
        first = false;
        break;
      case Packet::Kind::Cyc:
        if (p.value == 0) return where.str() + "zero CYC";
        now += p.value;
        break;
      case Packet::Kind::Ptw:
        if (i == 0) return where.str() + "PTW without timing";
        break;
      default:
        return where.str() + "unknown packet kind";
    }
  }
  return std::nullopt;
}

namespace {

std::string row(std::uint32_t tid, const std::string& origin, EventKind k, std::uint64_t addr,
                std::optional<std::uint64_t> ts) {
  std::ostringstream os;
  os << "tid " << tid << " " << origin << " " << event_kind_name(k) << " @" << addr;
  if (ts) os << " ts " << *ts;
  return os.str();
}

void diff(const std::multiset<std::string>& want, const std::multiset<std::string>& got,
          Mismatch& m) {
  std::vector<std::string> missing, extra;
  std::set_difference(want.begin(), want.end(), got.begin(), got.end(), std::back_inserter(missing));
  std::set_difference(got.begin(), got.end(), want.begin(), want.end(), std::back_inserter(extra));
  for (const auto& s : missing) m.errors.push_back("missing " + s);
  for (const auto& s : extra) m.errors.push_back("unexpected " + s);
  m.checked = want.size();
}

}  // namespace

Mismatch vsa_soundness(const Program& original, const Icfg& icfg, const VsaResult& vsa,
                       const Program& executed, const RunArtifacts& run) {
  Mismatch m;
  for (const auto& g : run.ground_truth) {
    if (!g.aloc || g.op == Opcode::Ptwrite) continue;
    const std::string id = executed.instr_id(g.instr);
    const auto ref = original.find_instr(id);
    if (!ref) {
      m.errors.push_back(id + " not in the analyzed program");
      continue;
    }
    const Instruction& ins = original.at(*ref);
    const Operand* op = (ins.op == Opcode::Lock || ins.op == Opcode::Unlock) ? &ins.a
                                                                              : ins.memory_operand();
    if (!op) {
      m.errors.push_back(id + " has no address operand");
      continue;
    }
    const NodeId n = icfg.node(*ref);
    ++m.checked;
    if (!vsa.reached[n]) {
      m.errors.push_back(id + " executed but unreachable in the analysis");
      continue;
    }
    const auto targets = operand_targets(original, *op, vsa.in[n]);
    if (!covers(targets, *g.aloc))
      m.errors.push_back(id + " touched " + to_string(original, *g.aloc) + " outside its value set");
  }
  return m;
}

Mismatch recorded_roundtrip(const Program& executed, const MappingTable& table,
                            const RunArtifacts& run, const DecodeResult& dec) {
  std::set<std::string> traced;
  for (const auto& e : table.entries) traced.insert(e.origin);
  std::multiset<std::string> want, got;
  for (const auto& g : run.ground_truth) {
    if (g.op == Opcode::Ptwrite || !g.access) continue;
    const std::string id = executed.instr_id(g.instr);
    if (!traced.count(id)) continue;
    want.insert(row(g.tid, id, event_kind_of(*g.access), g.address, g.ts));
  }
  for (const auto& e : dec.merged)
    if (e.kind != EventKind::Gap && !e.derived)
      got.insert(row(e.tid, e.origin, e.kind, e.address, e.ts));
  Mismatch m;
  diff(want, got, m);
  return m;
}

Mismatch derived_roundtrip(const Program& executed, const MappingTable& table,
                           const RunArtifacts& run, const DecodeResult& dec) {
  std::set<std::string> derived;
  for (const auto& e : table.entries)
    for (const auto& d : e.derived) derived.insert(d.origin);
  std::multiset<std::string> want, got;
  for (const auto& g : run.ground_truth) {
    if (g.op == Opcode::Ptwrite || !g.access) continue;
    const std::string id = executed.instr_id(g.instr);
    if (!derived.count(id)) continue;
    want.insert(row(g.tid, id, event_kind_of(*g.access), g.address, std::nullopt));
  }
  for (const auto& e : dec.merged)
    if (e.derived) got.insert(row(e.tid, e.origin, e.kind, e.address, std::nullopt));
  Mismatch m;
  diff(want, got, m);
  return m;
}

}  // namespace testing
