#include "tracerace/instrumenter.hpp"

#include <deque>
#include <map>

namespace tracerace {

namespace {

std::uint32_t path_distance(const Program& p, const Icfg& icfg, InstrRef from,
                            InstrRef to) {
  if (from.func != to.func) throw InstrumentError("derived relation crosses functions");
  std::map<NodeId, std::uint32_t> dist{{icfg.node(from), 0}};
  std::deque<NodeId> q{icfg.node(from)};
  const NodeId goal = icfg.node(to);
  while (!q.empty()) {
    NodeId n = q.front();
    q.pop_front();
    if (n == goal) return dist[n];
    for (NodeId s : icfg.intra_successors(n))
      if (dist.emplace(s, dist[n] + 1).second) q.push_back(s);
  }
  throw InstrumentError("no path from " + p.instr_id(from) + " to " + p.instr_id(to));
}

MappingEntry entry_for(const Program& p, const TracePoint& t) {
  const Instruction& ins = p.at(t.instr);
  MappingEntry e;
  e.origin = p.instr_id(t.instr);
  e.access = t.access;
  e.reg = t.reg;
  switch (t.access) {
    case AccessKind::Read:
    case AccessKind::Write:
    case AccessKind::LockAcq:
    case AccessKind::LockRel: {
      const Operand& o = is_memory_access(t.access) ? *ins.memory_operand() : ins.a;
      if (o.kind == Operand::Kind::Mem) e.disp = o.disp;
      if (o.kind == Operand::Kind::Abs) e.constant = o.addr;
      if (o.kind == Operand::Kind::Imm) e.constant = static_cast<std::uint64_t>(o.imm);
      e.attach = t.access == AccessKind::LockAcq ? PtwAttach::After : PtwAttach::Before;
      break;
    }
    case AccessKind::ThreadFork:
    case AccessKind::ThreadJoin:
      e.attach = PtwAttach::After;
      break;
  }
  return e;
}

}  // namespace

const MappingEntry& MappingTable::at(std::uint32_t ptw_id) const {
  if (ptw_id >= entries.size())
    throw InstrumentError("unknown ptwrite id " + std::to_string(ptw_id));
  return entries[ptw_id];
}

std::size_t MappingTable::derived_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.derived.size();
  return n;
}

Instrumented instrument_points(const Program& p, const std::set<TracePoint>& points,
                               const std::vector<DerivedRelation>& relations) {
  for (const auto& f : p.functions)
    for (const auto& ins : f.body)
      if (ins.op == Opcode::Ptwrite)
        throw InstrumentError("program is already instrumented");

  Instrumented out;
  std::map<InstrRef, std::uint32_t> id_of;
  for (const auto& t : points) {
    if (t.instr.func >= p.functions.size() ||
        t.instr.index >= p.functions[t.instr.func].body.size())
      throw InstrumentError("trace point references a missing instruction");
    auto expected = trace_point_for(p, t.instr);
    if (!expected || expected->access != t.access || expected->reg != t.reg)
      throw InstrumentError("trace point does not match " + p.instr_id(t.instr));
    if (!id_of.emplace(t.instr, static_cast<std::uint32_t>(out.table.entries.size())).second)
      throw InstrumentError("two trace points on " + p.instr_id(t.instr));
    MappingEntry e = entry_for(p, t);
    e.ptw_id = static_cast<std::uint32_t>(out.table.entries.size());
    out.table.entries.push_back(std::move(e));
  }

  const Icfg icfg(p);
  for (const auto& r : relations) {
    auto it = id_of.find(r.source.instr);
    if (it == id_of.end())
      throw InstrumentError("relation source " + p.instr_id(r.source.instr) +
                            " is not recorded");
    DerivedTarget d;
    d.origin = p.instr_id(r.derived.instr);
    d.access = r.derived.access;
    d.delta = r.delta;
    d.disp = p.at(r.derived.instr).memory_operand()->disp;
    d.distance = path_distance(p, icfg, r.source.instr, r.derived.instr);
    out.table.entries[it->second].derived.push_back(std::move(d));
  }

  out.program.entry = p.entry;
  out.program.globals = p.globals;
  for (std::uint32_t fi = 0; fi < p.functions.size(); ++fi) {
    const Function& f = p.functions[fi];
    Function g;
    g.name = f.name;
    for (std::uint32_t i = 0; i < f.body.size(); ++i) {
      auto it = id_of.find(InstrRef{fi, i});
      if (it == id_of.end()) {
        g.body.push_back(f.body[i]);
        continue;
      }
      const MappingEntry& e = out.table.entries[it->second];
      Instruction ptw;
      ptw.op = Opcode::Ptwrite;
      ptw.ptw_id = e.ptw_id;
      ptw.attach = e.attach;
      ptw.has_reg = e.reg.has_value();
      if (e.reg) ptw.reg = *e.reg;
      if (e.attach == PtwAttach::Before) g.body.push_back(ptw);
      g.body.push_back(f.body[i]);
      if (e.attach == PtwAttach::After) g.body.push_back(ptw);
    }
    out.program.functions.push_back(std::move(g));
  }
  out.program.resolve();
  return out;
}

Instrumented instrument(const Program& p, const SelectionReport& sel) {
  return instrument_points(p, sel.t_trace, sel.relations);
}

Instrumented instrument_naive(const Program& p, const VsaResult& res) {
  return instrument_points(p, find_shared_trace_points(res, p, Icfg(p)), {});
}

nlohmann::json mapping_to_json(const MappingTable& t) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& e : t.entries) {
    nlohmann::json j{{"ptw_id", e.ptw_id},
                     {"origin", e.origin},
                     {"reg", e.reg ? nlohmann::json(std::string(reg_name(*e.reg)))
                                   : nlohmann::json()},
                     {"access", access_name(e.access)},
                     {"attach", e.attach == PtwAttach::Before ? "before" : "after"},
                     {"disp", e.disp},
                     {"constant", e.constant ? nlohmann::json(*e.constant) : nlohmann::json()}};
    j["derived"] = nlohmann::json::array();
    for (const auto& d : e.derived)
      j["derived"].push_back({{"origin", d.origin},
                              {"access", access_name(d.access)},
                              {"delta", d.delta},
                              {"disp", d.disp},
                              {"distance", d.distance}});
    a.push_back(std::move(j));
  }
  return {{"entries", std::move(a)}};
}

MappingTable mapping_from_json(const nlohmann::json& j) {
  MappingTable t;
  for (const auto& je : j.at("entries")) {
    MappingEntry e;
    e.ptw_id = je.at("ptw_id").get<std::uint32_t>();
    if (e.ptw_id != t.entries.size()) throw InstrumentError("mapping ids are not dense");
    e.origin = je.at("origin").get<std::string>();
    if (!je.at("reg").is_null()) {
      auto r = parse_reg(je.at("reg").get<std::string>());
      if (!r) throw InstrumentError("bad register in mapping");
      e.reg = *r;
    }
    auto acc = parse_access(je.at("access").get<std::string>());
    if (!acc) throw InstrumentError("bad access kind in mapping");
    e.access = *acc;
    e.attach = je.at("attach").get<std::string>() == "after" ? PtwAttach::After
                                                             : PtwAttach::Before;
    e.disp = je.at("disp").get<std::int64_t>();
    if (!je.at("constant").is_null()) e.constant = je.at("constant").get<std::uint64_t>();
    for (const auto& jd : je.at("derived")) {
      DerivedTarget d;
      d.origin = jd.at("origin").get<std::string>();
      auto da = parse_access(jd.at("access").get<std::string>());
      if (!da) throw InstrumentError("bad access kind in mapping");
      d.access = *da;
      d.delta = jd.at("delta").get<std::int64_t>();
      d.disp = jd.at("disp").get<std::int64_t>();
      d.distance = jd.at("distance").get<std::uint32_t>();
      e.derived.push_back(std::move(d));
    }
    t.entries.push_back(std::move(e));
  }
  return t;
}

}  // namespace tracerace
