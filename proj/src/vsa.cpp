#include "tracerace/vsa.hpp"

#include <deque>
#include <random>
#include <sstream>

namespace tracerace {

ALoc ALoc::of_reg(tracerace::Reg r) {
  ALoc a;
  a.kind = Kind::Reg;
  a.reg = r;
  return a;
}

ALoc ALoc::global(std::uint64_t addr) {
  ALoc a;
  a.kind = Kind::Global;
  a.address = addr;
  return a;
}

ALoc ALoc::stack_slot(std::uint32_t func, std::int64_t offset) {
  ALoc a;
  a.kind = Kind::Stack;
  a.stack = {func, offset};
  return a;
}

ALoc ALoc::heap(std::string site) {
  ALoc a;
  a.kind = Kind::Heap;
  a.site = std::move(site);
  return a;
}

ALoc ALoc::top(Kind k) {
  ALoc a;
  a.kind = k;
  return a;
}

std::string to_string(const Program& p, const ALoc& a) {
  switch (a.kind) {
    case ALoc::Kind::Reg:
      return std::string(reg_name(a.reg));
    case ALoc::Kind::Global:
      return "g" + std::to_string(a.address);
    case ALoc::Kind::Stack:
      return "stack(" + p.functions[a.stack.func].name + "," +
             std::to_string(a.stack.offset) + ")";
    case ALoc::Kind::Heap:
      return "heap(" + a.site + ")";
    case ALoc::Kind::TopGlobal:
      return "top_global";
    case ALoc::Kind::TopStack:
      return "top_stack";
    case ALoc::Kind::TopHeap:
      return "top_heap";
  }
  return "?";
}

ValueSet ValueSet::of_global(std::uint64_t a) {
  ValueSet v;
  v.global.elems.insert(a);
  return v;
}

ValueSet ValueSet::of_stack(std::uint32_t func, std::int64_t off) {
  ValueSet v;
  v.stack.elems.insert({func, off});
  return v;
}

ValueSet ValueSet::of_heap(std::string site) {
  ValueSet v;
  v.heap.elems.insert(std::move(site));
  return v;
}

ValueSet ValueSet::of_const(std::int64_t c) {
  ValueSet v;
  v.consts.elems.insert(c);
  return v;
}

bool ValueSet::join(const ValueSet& o) {
  bool changed = global.join(o.global, kBound);
  changed |= stack.join(o.stack, kBound);
  changed |= heap.join(o.heap, kBound);
  changed |= consts.join(o.consts, kBound);
  return changed;
}

ValueSet ValueSet::shifted(std::int64_t c) const {
  ValueSet r;
  r.heap = heap;  // heap a-locs summarize the whole object
  r.global.top = global.top;
  r.stack.top = stack.top;
  r.consts.top = consts.top;
  for (auto a : global.elems)
    r.global.insert(static_cast<std::uint64_t>(static_cast<std::int64_t>(a) + c), kBound);
  for (auto s : stack.elems) r.stack.insert({s.func, s.offset + c}, kBound);
  for (auto k : consts.elems) r.consts.insert(k + c, kBound);
  return r;
}

std::string to_string(const Program& p, const ValueSet& v) {
  std::ostringstream os;
  auto region = [&](const auto& reg, auto&& fmt) {
    if (reg.top) {
      os << "T";
      return;
    }
    if (reg.elems.empty()) {
      os << "_";
      return;
    }
    os << '{';
    bool first = true;
    for (const auto& e : reg.elems) {
      if (!first) os << ',';
      first = false;
      os << fmt(e);
    }
    os << '}';
  };
  os << '<';
  region(v.global, [](std::uint64_t a) { return "g" + std::to_string(a); });
  os << ',';
  region(v.stack, [&](const StackLoc& s) {
    return p.functions[s.func].name + std::to_string(s.offset);
  });
  os << ',';
  region(v.heap, [](const std::string& s) { return "@" + s; });
  os << ',';
  region(v.consts, [](std::int64_t c) { return std::to_string(c); });
  os << '>';
  return os.str();
}

ValueSet VsaResult::before(NodeId n, Reg r) const {
  auto it = in[n].find(ALoc::of_reg(r));
  return it == in[n].end() ? ValueSet{} : it->second;
}

ValueSet VsaResult::after(NodeId n, Reg r) const {
  auto it = local[n].find(ALoc::of_reg(r));
  return it == local[n].end() ? ValueSet{} : it->second;
}

namespace {

ValueSet get(const std::map<ALoc, ValueSet>& m, const ALoc& k) {
  auto it = m.find(k);
  return it == m.end() ? ValueSet{} : it->second;
}

ValueSet immediate_value(const Program& p, std::int64_t v) {
  if (v > 0 && p.is_global_address(static_cast<std::uint64_t>(v)))
    return ValueSet::of_global(static_cast<std::uint64_t>(v));
  return ValueSet::of_const(v);
}

// Memory is zero-initialized, so every load may also observe 0.
ValueSet load(const ALoc& a, const LocalState& in, const SharedState& shared) {
  ValueSet v = ValueSet::of_const(0);
  auto collect = [&](const std::map<ALoc, ValueSet>& m, ALoc::Kind k, ALoc::Kind top) {
    for (const auto& [key, val] : m)
      if (key.kind == k || key.kind == top) v.join(val);
  };
  switch (a.kind) {
    case ALoc::Kind::Global:
      v.join(get(shared, a));
      v.join(get(shared, ALoc::top(ALoc::Kind::TopGlobal)));
      break;
    case ALoc::Kind::Heap:
      v.join(get(shared, a));
      v.join(get(shared, ALoc::top(ALoc::Kind::TopHeap)));
      break;
    case ALoc::Kind::Stack:
      v.join(get(in, a));
      v.join(get(in, ALoc::top(ALoc::Kind::TopStack)));
      break;
    case ALoc::Kind::TopGlobal:
      collect(shared, ALoc::Kind::Global, ALoc::Kind::TopGlobal);
      break;
    case ALoc::Kind::TopHeap:
      collect(shared, ALoc::Kind::Heap, ALoc::Kind::TopHeap);
      break;
    case ALoc::Kind::TopStack:
      collect(in, ALoc::Kind::Stack, ALoc::Kind::TopStack);
      break;
    case ALoc::Kind::Reg:
      v.join(get(in, a));
      break;
  }
  return v;
}

// Pointer arithmetic: exact shifts when the operand is a known constant set,
// otherwise every region either side touches becomes Top.
ValueSet arith(const ValueSet& d, const ValueSet& s, int sign) {
  if (s.empty()) return d;
  if (!s.has_addresses() && !s.consts.top) {
    ValueSet r;
    for (auto c : s.consts.elems) r.join(d.shifted(sign * c));
    return r;
  }
  ValueSet r;
  if (!d.global.empty() || !s.global.empty()) r.global.set_top();
  if (!d.stack.empty() || !s.stack.empty()) r.stack.set_top();
  if (!d.heap.empty() || !s.heap.empty()) r.heap.set_top();
  r.consts.set_top();
  return r;
}

LocalState fresh_thread_state(std::uint32_t func) {
  LocalState st;
  for (int r = 0; r < kNumGeneralRegs; ++r)
    st[ALoc::of_reg(static_cast<Reg>(r))] = ValueSet::of_const(0);
  st[ALoc::of_reg(Reg::FP)] = ValueSet::of_stack(func, 0);
  st[ALoc::of_reg(Reg::SP)] = ValueSet::of_stack(func, 0);
  return st;
}

bool join_state(LocalState& into, const LocalState& from) {
  bool changed = false;
  for (const auto& [k, v] : from) {
    auto [it, inserted] = into.try_emplace(k, v);
    if (inserted) {
      changed |= !v.empty();
    } else {
      changed |= it->second.join(v);
    }
  }
  return changed;
}

void store(const ALoc& target, const ValueSet& v, bool strong, LocalState& out,
           SharedState& shared) {
  if (target.is_local()) {
    if (strong)
      out[target] = v;
    else
      out[target].join(v);
  } else {
    shared[target].join(v);
  }
}

}  // namespace

std::vector<ALoc> target_alocs(const Program& p, const ValueSet& base,
                               std::int64_t disp) {
  std::vector<ALoc> out;
  if (base.global.top) out.push_back(ALoc::top(ALoc::Kind::TopGlobal));
  for (auto a : base.global.elems)
    out.push_back(ALoc::global(static_cast<std::uint64_t>(static_cast<std::int64_t>(a) + disp)));
  if (base.stack.top) out.push_back(ALoc::top(ALoc::Kind::TopStack));
  for (auto s : base.stack.elems) out.push_back(ALoc::stack_slot(s.func, s.offset + disp));
  if (base.heap.top) out.push_back(ALoc::top(ALoc::Kind::TopHeap));
  for (const auto& h : base.heap.elems) out.push_back(ALoc::heap(h));
  // A plain constant used as a base only names memory when it lands inside a
  // declared global.
  for (auto c : base.consts.elems) {
    std::int64_t a = c + disp;
    if (a > 0 && p.is_global_address(static_cast<std::uint64_t>(a)))
      out.push_back(ALoc::global(static_cast<std::uint64_t>(a)));
  }
  return out;
}

std::vector<ALoc> operand_targets(const Program& p, const Operand& o,
                                  const LocalState& in) {
  switch (o.kind) {
    case Operand::Kind::Abs:
      return {ALoc::global(o.addr)};
    case Operand::Kind::Mem:
      return target_alocs(p, get(in, ALoc::of_reg(o.reg)), o.disp);
    case Operand::Kind::Reg:
      return target_alocs(p, get(in, ALoc::of_reg(o.reg)), 0);
    case Operand::Kind::Imm:
      return target_alocs(p, immediate_value(p, o.imm), 0);
  }
  return {};
}

bool covers(const std::vector<ALoc>& targets, const ALoc& concrete) {
  for (const auto& t : targets) {
    if (t == concrete) return true;
    if (t.kind == ALoc::Kind::TopGlobal && concrete.kind == ALoc::Kind::Global) return true;
    if (t.kind == ALoc::Kind::TopStack && concrete.kind == ALoc::Kind::Stack) return true;
    if (t.kind == ALoc::Kind::TopHeap && concrete.kind == ALoc::Kind::Heap) return true;
  }
  return false;
}

ValueSet eval_operand(const Program& p, const Operand& o, const LocalState& in,
                      const SharedState& shared) {
  switch (o.kind) {
    case Operand::Kind::Imm:
      return immediate_value(p, o.imm);
    case Operand::Kind::Reg:
      return get(in, ALoc::of_reg(o.reg));
    case Operand::Kind::Mem:
    case Operand::Kind::Abs: {
      ValueSet v;
      for (const auto& t : operand_targets(p, o, in)) v.join(load(t, in, shared));
      if (v.empty()) v = ValueSet::of_const(0);
      return v;
    }
  }
  return {};
}

LocalState transfer(const Program& p, InstrRef at, const LocalState& in,
                    SharedState& shared) {
  const Instruction& ins = p.at(at);
  LocalState out = in;
  switch (ins.op) {
    case Opcode::Mov: {
      ValueSet src = eval_operand(p, ins.b, in, shared);
      if (ins.a.kind == Operand::Kind::Reg) {
        out[ALoc::of_reg(ins.a.reg)] = src;
        break;
      }
      auto targets = operand_targets(p, ins.a, in);
      // A single exact slot of the current frame is overwritten; everything
      // else accumulates.
      const bool strong = ins.a.kind == Operand::Kind::Mem &&
                          ins.a.reg == Reg::FP && targets.size() == 1 &&
                          targets[0].kind == ALoc::Kind::Stack;
      for (const auto& t : targets) store(t, src, strong, out, shared);
      break;
    }
    case Opcode::Add:
    case Opcode::Sub: {
      // An immediate operand of add/sub is an offset, never an address.
      ValueSet src = ins.b.kind == Operand::Kind::Imm ? ValueSet::of_const(ins.b.imm)
                                                      : eval_operand(p, ins.b, in, shared);
      ALoc dst = ALoc::of_reg(ins.a.reg);
      out[dst] = arith(get(in, dst), src, ins.op == Opcode::Add ? 1 : -1);
      break;
    }
    case Opcode::Alloc:
      out[ALoc::of_reg(ins.reg)] = ValueSet::of_heap(ins.site);
      break;
    case Opcode::Spawn: {
      ValueSet handle;
      handle.consts.set_top();
      out[ALoc::of_reg(ins.reg)] = handle;
      break;
    }
    default:
      break;
  }
  return out;
}

VsaResult analyze(const Icfg& icfg, const Program& p, const VsaOptions& opts) {
  const std::size_t n = icfg.size();
  VsaResult res;
  res.in.assign(n, {});
  res.local.assign(n, {});
  res.reached.assign(n, false);
  if (n == 0) return res;

  std::deque<NodeId> work;
  std::vector<bool> queued(n, false);
  std::vector<bool> processed(n, false);
  auto push = [&](NodeId id) {
    if (!queued[id]) {
      queued[id] = true;
      work.push_back(id);
    }
  };
  std::mt19937_64 rng(opts.order_seed.value_or(0));
  auto pop = [&]() {
    std::size_t k = 0;
    if (opts.order_seed && work.size() > 1) k = rng() % work.size();
    NodeId id = work[k];
    work.erase(work.begin() + static_cast<std::ptrdiff_t>(k));
    queued[id] = false;
    return id;
  };

  const std::uint32_t entry = *p.function_index(p.entry);
  const NodeId entry_node = icfg.entry_of(entry);
  join_state(res.in[entry_node], fresh_thread_state(entry));
  res.reached[entry_node] = true;
  push(entry_node);

  auto propagate = [&](NodeId from) {
    const LocalState& out = res.local[from];
    for (const auto& e : icfg.successors(from)) {
      LocalState msg;
      switch (e.kind) {
        case EdgeKind::Fallthrough:
        case EdgeKind::Branch:
          msg = out;
          break;
        case EdgeKind::Call: {
          msg = out;
          const auto callee = icfg.ref(e.to).func;
          msg[ALoc::of_reg(Reg::FP)] = ValueSet::of_stack(callee, 0);
          msg[ALoc::of_reg(Reg::SP)] = ValueSet::of_stack(callee, 0);
          break;
        }
        case EdgeKind::Return:
          // The caller's frame registers arrive over the call's fallthrough.
          msg = out;
          msg.erase(ALoc::of_reg(Reg::FP));
          msg.erase(ALoc::of_reg(Reg::SP));
          break;
        case EdgeKind::Spawn:
          msg = fresh_thread_state(icfg.ref(e.to).func);
          break;
      }
      bool changed = join_state(res.in[e.to], msg);
      if (changed || !res.reached[e.to]) {
        res.reached[e.to] = true;
        push(e.to);
      }
    }
  };

  // Rounds repeat until the flow-insensitive shared summary is stable, since
  // loads processed early may have read a smaller summary.
  for (;;) {
    ++res.rounds;
    const SharedState shared_before = res.shared;
    while (!work.empty()) {
      NodeId id = pop();
      ++res.iterations;
      LocalState out = transfer(p, icfg.ref(id), res.in[id], res.shared);
      if (!processed[id] || out != res.local[id]) {
        processed[id] = true;
        res.local[id] = std::move(out);
        propagate(id);
      }
    }
    if (res.shared == shared_before) break;
    for (NodeId id = 0; id < n; ++id)
      if (res.reached[id]) push(id);
  }
  return res;
}

std::set<TracePoint> find_shared_trace_points(const VsaResult& res,
                                              const Program& p,
                                              const Icfg& icfg) {
  std::set<TracePoint> out;
  for (NodeId id = 0; id < icfg.size(); ++id) {
    const InstrRef r = icfg.ref(id);
    auto tp = trace_point_for(p, r);
    if (!tp) continue;
    if (!is_memory_access(tp->access)) {
      out.insert(*tp);
      continue;
    }
    if (!res.reached[id]) continue;
    const Operand* m = p.at(r).memory_operand();
    if (m->kind == Operand::Kind::Abs) {
      out.insert(*tp);
      continue;
    }
    // Only the global/heap reach of the base matters; stack-only bases are
    // thread-private.
    for (const auto& t : target_alocs(p, res.before(id, m->reg), m->disp)) {
      if (t.is_shared()) {
        out.insert(*tp);
        break;
      }
    }
  }
  return out;
}

nlohmann::json vsa_to_json(const VsaResult& res, const Program& p,
                           const Icfg& icfg) {
  nlohmann::json j;
  auto dump_state = [&](const std::map<ALoc, ValueSet>& st) {
    nlohmann::json o = nlohmann::json::object();
    for (const auto& [k, v] : st) o[to_string(p, k)] = to_string(p, v);
    return o;
  };
  j["local"] = nlohmann::json::object();
  for (NodeId id = 0; id < icfg.size(); ++id)
    if (res.reached[id]) j["local"][p.instr_id(icfg.ref(id))] = dump_state(res.local[id]);
  j["shared"] = dump_state(res.shared);
  j["iterations"] = res.iterations;
  return j;
}

}  // namespace tracerace
