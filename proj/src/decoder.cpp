#include "tracerace/decoder.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <tuple>

namespace tracerace {

namespace {
constexpr std::string_view kEventNames[] = {"read", "write", "lock_acq", "lock_rel",
                                            "fork", "join",  "gap"};
}

std::string_view event_kind_name(EventKind k) { return kEventNames[static_cast<int>(k)]; }

EventKind event_kind_of(AccessKind a) {
  switch (a) {
    case AccessKind::Read: return EventKind::Read;
    case AccessKind::Write: return EventKind::Write;
    case AccessKind::LockAcq: return EventKind::LockAcq;
    case AccessKind::LockRel: return EventKind::LockRel;
    case AccessKind::ThreadFork: return EventKind::Fork;
    case AccessKind::ThreadJoin: return EventKind::Join;
  }
  return EventKind::Read;
}

std::vector<TimedPtw> reconstruct_timestamps(const std::vector<Packet>& stream,
                                             std::uint32_t cpu) {
  std::vector<TimedPtw> out;
  if (!stream.empty() && stream.front().kind != Packet::Kind::Tsc)
    throw DecodeError("cpu" + std::to_string(cpu) + " stream does not start with TSC");
  std::uint64_t now = 0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const Packet& p = stream[i];
    switch (p.kind) {
      case Packet::Kind::Tsc:
        now = p.value;
        break;
      case Packet::Kind::Cyc:
        now += p.value;
        break;
      case Packet::Kind::Ptw:
        out.push_back({now, p.value, p.ptw_id, cpu, i, 0});
        break;
    }
  }
  return out;
}

void attribute_threads(std::vector<TimedPtw>& ptws,
                       const std::vector<SidebandRecord>& sideband) {
  std::map<std::uint32_t, std::vector<const SidebandRecord*>> by_cpu;
  for (const auto& r : sideband) {
    auto& v = by_cpu[r.cpu];
    if (!v.empty() && v.back()->ts >= r.ts)
      throw DecodeError("sideband timestamps on cpu" + std::to_string(r.cpu) +
                        " are not increasing");
    v.push_back(&r);
  }
  for (auto& p : ptws) {
    auto it = by_cpu.find(p.cpu);
    if (it == by_cpu.end())
      throw DecodeError("no sideband for cpu" + std::to_string(p.cpu));
    const auto& v = it->second;
    auto after = std::upper_bound(v.begin(), v.end(), p.ts,
                                  [](std::uint64_t t, const SidebandRecord* r) { return t < r->ts; });
    if (after == v.begin())
      throw DecodeError("PTW at " + std::to_string(p.ts) + " on cpu" + std::to_string(p.cpu) +
                        " precedes every known thread interval");
    p.tid = (*std::prev(after))->tid_in;
  }
}

DecodeResult decode(const RunArtifacts& run, const MappingTable& table) {
  DecodeResult res;
  const std::uint64_t cpi = run.config.cycles_per_instr;
  std::vector<TimedPtw> all;
  for (std::uint32_t c = 0; c < run.streams.size(); ++c) {
    auto ptws = reconstruct_timestamps(run.streams[c], c);
    all.insert(all.end(), ptws.begin(), ptws.end());
  }
  attribute_threads(all, run.sideband);

  for (const auto& p : all) {
    const MappingEntry& e = table.at(p.ptw_id);
    MemoryEvent ev;
    ev.tid = p.tid;
    ev.ts = p.ts;
    ev.kind = event_kind_of(e.access);
    ev.origin = e.origin;
    ev.cpu = p.cpu;
    ev.pos = p.pos + 1;
    if (ev.kind == EventKind::Fork || ev.kind == EventKind::Join)
      ev.address = p.payload;
    else if (e.constant)
      ev.address = *e.constant;
    else
      ev.address = p.payload + static_cast<std::uint64_t>(e.disp);
    res.merged.push_back(ev);
    ++res.recorded;
    std::uint32_t sub = 0;
    for (const auto& d : e.derived) {
      MemoryEvent de = ev;
      de.kind = event_kind_of(d.access);
      de.origin = d.origin;
      de.derived = true;
      de.address = p.payload + static_cast<std::uint64_t>(d.delta + d.disp);
      de.ts = p.ts + d.distance * cpi;
      de.sub = ++sub;
      res.merged.push_back(std::move(de));
      ++res.derived;
    }
  }

  // Gap markers for every thread that ran on a CPU during a lossy window.
  std::map<std::uint32_t, std::vector<const SidebandRecord*>> by_cpu;
  for (const auto& r : run.sideband) by_cpu[r.cpu].push_back(&r);
  for (std::uint32_t c = 0; c < run.loss_log.size(); ++c) {
    const auto& recs = by_cpu[c];
    for (const auto& w : run.loss_log[c]) {
      std::set<std::uint32_t> tids;
      for (std::size_t i = 0; i < recs.size(); ++i) {
        const std::uint64_t in = recs[i]->ts;
        const std::uint64_t out = i + 1 < recs.size() ? recs[i + 1]->ts : UINT64_MAX;
        if (in < w.end && w.start < out) tids.insert(recs[i]->tid_in);
      }
      for (auto t : tids) {
        MemoryEvent g;
        g.tid = t;
        g.ts = w.start;
        g.kind = EventKind::Gap;
        g.cpu = c;
        res.merged.push_back(g);
        ++res.gaps;
      }
    }
  }

  std::stable_sort(res.merged.begin(), res.merged.end(),
                   [](const MemoryEvent& a, const MemoryEvent& b) {
                     return std::tie(a.ts, a.cpu, a.pos, a.sub, a.tid) <
                            std::tie(b.ts, b.cpu, b.pos, b.sub, b.tid);
                   });
  for (const auto& e : res.merged) res.per_thread[e.tid].push_back(e);
  return res;
}

nlohmann::json event_to_json(const MemoryEvent& e) {
  return {{"tid", e.tid},         {"ts", e.ts},   {"kind", event_kind_name(e.kind)},
          {"address", e.address}, {"origin", e.origin}, {"derived", e.derived},
          {"cpu", e.cpu},         {"pos", e.pos}, {"sub", e.sub}};
}

MemoryEvent event_from_json(const nlohmann::json& j) {
  MemoryEvent e;
  e.tid = j.at("tid").get<std::uint32_t>();
  e.ts = j.at("ts").get<std::uint64_t>();
  const auto k = j.at("kind").get<std::string>();
  auto it = std::find(std::begin(kEventNames), std::end(kEventNames), k);
  if (it == std::end(kEventNames)) throw DecodeError("unknown event kind '" + k + "'");
  e.kind = static_cast<EventKind>(it - std::begin(kEventNames));
  e.address = j.at("address").get<std::uint64_t>();
  e.origin = j.at("origin").get<std::string>();
  e.derived = j.value("derived", false);
  e.cpu = j.value("cpu", 0u);
  e.pos = j.value("pos", std::uint64_t{0});
  e.sub = j.value("sub", 0u);
  return e;
}

std::string events_to_jsonl(const std::vector<MemoryEvent>& events) {
  std::string out;
  for (const auto& e : events) out += event_to_json(e).dump() + "\n";
  return out;
}

std::vector<MemoryEvent> events_from_jsonl(std::string_view text) {
  std::vector<MemoryEvent> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(event_from_json(nlohmann::json::parse(line)));
  return out;
}

}  // namespace tracerace
