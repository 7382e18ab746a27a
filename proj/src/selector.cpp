#include "tracerace/selector.hpp"

#include <algorithm>
#include <deque>
#include <functional>

namespace tracerace {

namespace {

std::vector<ALoc> lock_targets(const Program& p, const Icfg& icfg,
                               const VsaResult& res, NodeId n) {
  return operand_targets(p, p.at(icfg.ref(n)).a, res.in[n]);
}

// Global lock addresses a call may release, including through nested calls.
struct ReleaseSummary {
  std::set<std::uint64_t> globals;
  bool any = false;
};

std::vector<ReleaseSummary> release_summaries(const Program& p, const Icfg& icfg,
                                              const VsaResult& res) {
  const std::size_t nf = p.functions.size();
  std::vector<ReleaseSummary> sum(nf);
  std::vector<std::set<std::uint32_t>> callees(nf);
  for (NodeId n = 0; n < icfg.size(); ++n) {
    const InstrRef r = icfg.ref(n);
    const Instruction& ins = p.at(r);
    if (ins.op == Opcode::Call) callees[r.func].insert(*p.function_index(ins.target));
    if (ins.op != Opcode::Unlock) continue;
    for (const auto& t : lock_targets(p, icfg, res, n)) {
      if (t.kind == ALoc::Kind::Global)
        sum[r.func].globals.insert(t.address);
      else if (t.kind == ALoc::Kind::TopGlobal)
        sum[r.func].any = true;
    }
  }
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t f = 0; f < nf; ++f) {
      for (auto c : callees[f]) {
        if (sum[c].any && !sum[f].any) {
          sum[f].any = true;
          changed = true;
        }
        for (auto a : sum[c].globals) changed |= sum[f].globals.insert(a).second;
      }
    }
  }
  return sum;
}

// Per-function CFG facts used by the redundancy pass. Indices are local to
// the function.
struct LocalCfg {
  std::size_t size = 0;
  std::vector<std::vector<std::size_t>> succ, pred;
  std::set<std::pair<std::size_t, std::size_t>> back_edges;
  std::vector<std::size_t> rpo_index;
  std::vector<std::vector<char>> dom;      // dom[n][m]: m dominates n
  std::vector<std::vector<char>> postdom;  // postdom[n][m]: m post-dominates n
  std::vector<bool> reachable;

  bool is_back(std::size_t from, std::size_t to) const {
    return back_edges.count({from, to}) != 0;
  }
};

LocalCfg build_local_cfg(const Program& p, const Icfg& icfg, std::uint32_t f) {
  LocalCfg g;
  const NodeId base = icfg.entry_of(f);
  g.size = p.functions[f].body.size();
  g.succ.resize(g.size);
  g.pred.resize(g.size);
  for (std::size_t i = 0; i < g.size; ++i) {
    for (NodeId s : icfg.intra_successors(base + static_cast<NodeId>(i))) {
      g.succ[i].push_back(s - base);
      g.pred[s - base].push_back(i);
    }
  }

  // DFS for retreating edges and reverse postorder.
  g.reachable.assign(g.size, false);
  std::vector<int> state(g.size, 0);  // 0 new, 1 on stack, 2 done
  std::vector<std::size_t> post;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  state[0] = 1;
  g.reachable[0] = true;
  while (!stack.empty()) {
    auto& [n, k] = stack.back();
    if (k < g.succ[n].size()) {
      std::size_t s = g.succ[n][k++];
      if (state[s] == 1) {
        g.back_edges.insert({n, s});
      } else if (state[s] == 0) {
        state[s] = 1;
        g.reachable[s] = true;
        stack.push_back({s, 0});
      }
    } else {
      state[n] = 2;
      post.push_back(n);
      stack.pop_back();
    }
  }
  g.rpo_index.assign(g.size, g.size);
  for (std::size_t i = 0; i < post.size(); ++i)
    g.rpo_index[post[post.size() - 1 - i]] = i;

  // Dominators.
  g.dom.assign(g.size, std::vector<char>(g.size, 1));
  g.dom[0].assign(g.size, 0);
  g.dom[0][0] = 1;
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t n = 1; n < g.size; ++n) {
      if (!g.reachable[n]) continue;
      std::vector<char> d(g.size, 1);
      for (auto q : g.pred[n]) {
        if (!g.reachable[q]) continue;
        for (std::size_t m = 0; m < g.size; ++m) d[m] = d[m] && g.dom[q][m];
      }
      d[n] = 1;
      if (d != g.dom[n]) {
        g.dom[n] = std::move(d);
        changed = true;
      }
    }
  }

  // Post-dominators against a virtual exit fed by ret/halt.
  const std::size_t exit = g.size;
  std::vector<std::vector<std::size_t>> psucc(g.size);
  for (std::size_t n = 0; n < g.size; ++n) {
    psucc[n] = g.succ[n];
    const auto op = p.functions[f].body[n].op;
    if (op == Opcode::Ret || op == Opcode::Halt) psucc[n].push_back(exit);
  }
  g.postdom.assign(g.size + 1, std::vector<char>(g.size + 1, 1));
  g.postdom[exit].assign(g.size + 1, 0);
  g.postdom[exit][exit] = 1;
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t n = 0; n < g.size; ++n) {
      std::vector<char> d(g.size + 1, 1);
      for (auto s : psucc[n])
        for (std::size_t m = 0; m <= g.size; ++m) d[m] = d[m] && g.postdom[s][m];
      d[n] = 1;
      if (d != g.postdom[n]) {
        g.postdom[n] = std::move(d);
        changed = true;
      }
    }
  }
  return g;
}

// Symbolic value of a register at a program point: base symbol + offset.
struct Symbol {
  enum class Kind : std::uint8_t { Const, EntryReg, EntrySlot, Def };
  Kind kind = Kind::Const;
  std::int64_t key = 0;  // register, slot offset, or defining local index
  auto operator<=>(const Symbol&) const = default;
};

struct SymValue {
  Symbol sym;
  std::int64_t offset = 0;
  bool operator==(const SymValue&) const = default;
};

struct Tracked {
  bool slot = false;
  Reg reg = Reg::R0;
  std::int64_t slot_offset = 0;
  auto operator<=>(const Tracked&) const = default;
};

class SymbolicWalker {
 public:
  SymbolicWalker(const Program& p, const Icfg& icfg, const VsaResult& res,
                 const LocalCfg& g, std::uint32_t func)
      : p_(p), icfg_(icfg), res_(res), g_(g), func_(func) {}

  // Value of `r` just before local instruction `at`, or nullopt if the
  // backward walk hits a loop, a call, an ambiguous store or the step cap.
  std::optional<SymValue> value_before(std::size_t at, Reg r) {
    memo_.clear();
    steps_ = 0;
    return resolve(at, Tracked{false, r, 0});
  }

 private:
  enum class EffectKind { Pass, Continue, Final, Opaque };
  struct Effect {
    EffectKind kind = EffectKind::Pass;
    Tracked next;
    std::int64_t add = 0;
    SymValue final;
  };

  Effect effect(std::size_t q, const Tracked& t) const {
    const Instruction& ins = p_.functions[func_].body[q];
    Effect e;
    if (ins.op == Opcode::Call) return {EffectKind::Opaque, {}, 0, {}};
    auto def_here = [&]() {
      Effect d;
      d.kind = EffectKind::Final;
      d.final = {{Symbol::Kind::Def, static_cast<std::int64_t>(q)}, 0};
      return d;
    };
    auto const_value = [&](std::int64_t v) {
      Effect d;
      d.kind = EffectKind::Final;
      d.final = {{Symbol::Kind::Const, 0}, v};
      return d;
    };
    if (!t.slot) {
      switch (ins.op) {
        case Opcode::Mov:
          if (ins.a.kind != Operand::Kind::Reg || ins.a.reg != t.reg) return e;
          if (ins.b.kind == Operand::Kind::Reg)
            return {EffectKind::Continue, Tracked{false, ins.b.reg, 0}, 0, {}};
          if (ins.b.kind == Operand::Kind::Imm) return const_value(ins.b.imm);
          if (ins.b.kind == Operand::Kind::Mem && ins.b.reg == Reg::FP)
            return {EffectKind::Continue, Tracked{true, Reg::R0, ins.b.disp}, 0, {}};
          return def_here();
        case Opcode::Add:
        case Opcode::Sub:
          if (ins.a.reg != t.reg) return e;
          if (ins.b.kind == Operand::Kind::Imm)
            return {EffectKind::Continue, t,
                    ins.op == Opcode::Add ? ins.b.imm : -ins.b.imm, {}};
          return def_here();
        case Opcode::Alloc:
        case Opcode::Spawn:
          if (ins.reg != t.reg) return e;
          return def_here();
        default:
          return e;
      }
    }
    if (ins.op != Opcode::Mov || !ins.a.is_memory()) return e;
    if (ins.a.kind == Operand::Kind::Mem && ins.a.reg == Reg::FP) {
      if (ins.a.disp != t.slot_offset) return e;
      if (ins.b.kind == Operand::Kind::Reg)
        return {EffectKind::Continue, Tracked{false, ins.b.reg, 0}, 0, {}};
      if (ins.b.kind == Operand::Kind::Imm) return const_value(ins.b.imm);
      return {EffectKind::Opaque, {}, 0, {}};
    }
    const NodeId n = icfg_.entry_of(func_) + static_cast<NodeId>(q);
    const ALoc slot = ALoc::stack_slot(func_, t.slot_offset);
    if (covers(operand_targets(p_, ins.a, res_.in[n]), slot))
      return {EffectKind::Opaque, {}, 0, {}};
    return e;
  }

  std::optional<SymValue> resolve(std::size_t at, const Tracked& t) {
    if (auto it = memo_.find({at, t}); it != memo_.end()) return it->second;
    if (++steps_ > kMaxPropagationSteps) return std::nullopt;
    std::optional<SymValue> result;
    const auto& preds = g_.pred[at];
    if (preds.empty()) {
      if (at == 0) {
        result = t.slot ? SymValue{{Symbol::Kind::EntrySlot, t.slot_offset}, 0}
                        : SymValue{{Symbol::Kind::EntryReg, static_cast<std::int64_t>(t.reg)}, 0};
      }
    } else if (at != 0) {
      bool ok = true;
      for (auto q : preds) {
        if (!g_.reachable[q]) continue;
        if (g_.is_back(q, at)) {
          ok = false;
          break;
        }
        Effect e = effect(q, t);
        std::optional<SymValue> v;
        switch (e.kind) {
          case EffectKind::Opaque:
            break;
          case EffectKind::Final:
            v = e.final;
            break;
          case EffectKind::Pass:
            v = resolve(q, t);
            break;
          case EffectKind::Continue:
            v = resolve(q, e.next);
            if (v) v->offset += e.add;
            break;
        }
        if (!v || (result && !(*result == *v))) {
          ok = false;
          break;
        }
        result = v;
      }
      if (!ok) result.reset();
    }
    memo_[{at, t}] = result;
    return result;
  }

  const Program& p_;
  const Icfg& icfg_;
  const VsaResult& res_;
  const LocalCfg& g_;
  std::uint32_t func_;
  std::map<std::pair<std::size_t, Tracked>, std::optional<SymValue>> memo_;
  int steps_ = 0;
};

// True if x can run again without passing through y.
bool repeats_without(const LocalCfg& g, std::size_t x, std::size_t y) {
  std::vector<bool> seen(g.size, false);
  std::deque<std::size_t> q{x};
  while (!q.empty()) {
    const std::size_t n = q.front();
    q.pop_front();
    for (auto m : g.succ[n]) {
      if (m == x) return true;
      if (m == y || seen[m]) continue;
      seen[m] = true;
      q.push_back(m);
    }
  }
  return false;
}

// Nodes strictly between s and d contain no synchronization, call, loop or
// redefinition of the shared symbol, and s and d run equally often.
bool clean_region(const Program& p, const LocalCfg& g, std::uint32_t func,
                  std::size_t s, std::size_t d, const Symbol& sym) {
  if (!g.dom[d][s] || !g.postdom[s][d]) return false;
  if (repeats_without(g, s, d) || repeats_without(g, d, s)) return false;
  std::vector<bool> seen(g.size, false);
  std::deque<std::size_t> q{s};
  while (!q.empty()) {
    std::size_t n = q.front();
    q.pop_front();
    for (auto m : g.succ[n]) {
      if (g.is_back(n, m)) return false;
      if (m == d || m == s || seen[m]) continue;
      seen[m] = true;
      const Instruction& ins = p.functions[func].body[m];
      if (ins.is_sync() || ins.op == Opcode::Call || ins.op == Opcode::Ret ||
          ins.op == Opcode::Halt)
        return false;
      if (sym.kind == Symbol::Kind::Def && static_cast<std::int64_t>(m) == sym.key)
        return false;
      q.push_back(m);
    }
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------

LockSetResult compute_locksets(const Program& p, const Icfg& icfg,
                               const VsaResult& res) {
  LockSetResult out;
  out.held.assign(icfg.size(), {});
  const auto releases = release_summaries(p, icfg, res);

  for (std::uint32_t f = 0; f < p.functions.size(); ++f) {
    const NodeId base = icfg.entry_of(f);
    const std::size_t m = p.functions[f].body.size();
    // nullopt = not yet reached (the universal set of the must lattice)
    std::vector<std::optional<std::set<std::uint64_t>>> in(m), outs(m);
    in[0] = std::set<std::uint64_t>{};
    std::deque<std::size_t> work{0};
    std::vector<bool> queued(m, false);
    queued[0] = true;
    while (!work.empty()) {
      std::size_t i = work.front();
      work.pop_front();
      queued[i] = false;
      const NodeId n = base + static_cast<NodeId>(i);
      std::set<std::uint64_t> st = *in[i];
      const Instruction& ins = p.functions[f].body[i];
      if (ins.op == Opcode::Lock) {
        auto t = lock_targets(p, icfg, res, n);
        if (t.size() == 1 && t[0].kind == ALoc::Kind::Global) st.insert(t[0].address);
      } else if (ins.op == Opcode::Unlock) {
        for (const auto& t : lock_targets(p, icfg, res, n)) {
          if (t.kind == ALoc::Kind::TopGlobal) st.clear();
          if (t.kind == ALoc::Kind::Global) st.erase(t.address);
        }
      } else if (ins.op == Opcode::Call) {
        const auto& r = releases[*p.function_index(ins.target)];
        if (r.any) {
          st.clear();
        } else {
          for (auto a : r.globals) st.erase(a);
        }
      }
      if (outs[i] == st) continue;
      outs[i] = st;
      for (NodeId sn : icfg.intra_successors(n)) {
        std::size_t s = sn - base;
        std::set<std::uint64_t> next;
        if (s == 0) {
          next = {};
        } else if (!in[s]) {
          next = st;
        } else {
          std::set_intersection(in[s]->begin(), in[s]->end(), st.begin(), st.end(),
                                std::inserter(next, next.begin()));
        }
        if (in[s] != next || !outs[s]) {
          in[s] = std::move(next);
          if (!queued[s]) {
            queued[s] = true;
            work.push_back(s);
          }
        }
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      if (in[i]) out.held[base + i] = *in[i];
      const Instruction& ins = p.functions[f].body[i];
      if (ins.op != Opcode::Unlock || !in[i]) continue;
      auto t = lock_targets(p, icfg, res, base + static_cast<NodeId>(i));
      if (t.size() == 1 && t[0].kind == ALoc::Kind::Global && !in[i]->count(t[0].address))
        out.warnings.push_back(p.instr_id(icfg.ref(base + static_cast<NodeId>(i))) +
                               ": unlock of g" + std::to_string(t[0].address) +
                               " not held on every path");
    }
  }
  return out;
}

RaceFreeChecker::RaceFreeChecker(const Program& p, const Icfg& icfg,
                                 const VsaResult& res, const LockSetResult& locks)
    : p_(p), icfg_(icfg), res_(res), locks_(locks) {}

std::vector<ALoc> RaceFreeChecker::shared_targets(const TracePoint& x) const {
  const NodeId n = icfg_.node(x.instr);
  const Operand* m = p_.at(x.instr).memory_operand();
  std::vector<ALoc> out;
  if (!m) return out;
  for (auto& t : operand_targets(p_, *m, res_.in[n]))
    if (t.is_shared()) out.push_back(std::move(t));
  return out;
}

bool RaceFreeChecker::not_alias(const TracePoint& x, const TracePoint& y) const {
  const auto tx = shared_targets(x);
  const auto ty = shared_targets(y);
  for (const auto& a : tx) {
    if (covers(ty, a)) return false;
    for (const auto& b : ty)
      if (covers({a}, b)) return false;
  }
  return true;
}

bool RaceFreeChecker::not_write(const TracePoint& x, const TracePoint& y) {
  return x.access != AccessKind::Write && y.access != AccessKind::Write;
}

bool RaceFreeChecker::escapes(const std::string& site, std::uint32_t func) const {
  auto mentions = [&](const ValueSet& v) {
    return v.heap.top || v.heap.elems.count(site) != 0;
  };
  // Escape to memory.
  for (const auto& [k, v] : res_.shared)
    if (mentions(v)) return true;
  // Escape to another function through call arguments (any register, or a
  // stack slot reachable through a register-held stack address).
  const NodeId base = icfg_.entry_of(func);
  for (std::uint32_t i = 0; i < p_.functions[func].body.size(); ++i) {
    const auto op = p_.functions[func].body[i].op;
    if (op != Opcode::Call && op != Opcode::Spawn) continue;
    const LocalState& st = res_.in[base + i];
    bool passes_stack = false;
    for (int r = 0; r < kNumGeneralRegs; ++r) {
      auto it = st.find(ALoc::of_reg(static_cast<Reg>(r)));
      if (it == st.end()) continue;
      if (mentions(it->second)) return true;
      passes_stack |= !it->second.stack.empty();
    }
    if (passes_stack)
      for (const auto& [k, v] : st)
        if (!k.is_local() || k.kind != ALoc::Kind::Reg)
          if (mentions(v)) return true;
  }
  return false;
}

bool RaceFreeChecker::is_owned(const TracePoint& x) const {
  const NodeId n = icfg_.node(x.instr);
  const Operand* m = p_.at(x.instr).memory_operand();
  if (!m || m->kind != Operand::Kind::Mem) return false;
  const auto targets = operand_targets(p_, *m, res_.in[n]);
  if (targets.empty()) return false;
  for (const auto& t : targets) {
    if (t.kind != ALoc::Kind::Heap) return false;
    bool local_site = false;
    for (const auto& ins : p_.functions[x.instr.func].body)
      if (ins.op == Opcode::Alloc && ins.site == t.site) local_site = true;
    if (!local_site) return false;
    if (escapes(t.site, x.instr.func)) return false;
  }
  return true;
}

bool RaceFreeChecker::not_concurrent(const TracePoint& x, const TracePoint& y) const {
  if (is_owned(x) || is_owned(y)) return true;
  const auto& lx = locks_.at(icfg_.node(x.instr));
  const auto& ly = locks_.at(icfg_.node(y.instr));
  for (auto a : lx)
    if (ly.count(a)) return true;
  return false;
}

RaceFreePartition must_race_free(const std::set<TracePoint>& t_shared,
                                 const RaceFreeChecker& checker) {
  RaceFreePartition out;
  std::vector<TracePoint> mem;
  for (const auto& t : t_shared) {
    if (is_memory_access(t.access))
      mem.push_back(t);
    else
      out.may_race.insert(t);  // sync points always stay
  }
  std::set<TracePoint> may_race_mem;
  for (const auto& x : mem) {
    if (may_race_mem.count(x)) continue;
    bool race_free = true;
    for (const auto& y : mem) {
      if (checker.not_alias(x, y) || checker.not_concurrent(x, y) ||
          RaceFreeChecker::not_write(x, y))
        continue;
      race_free = false;
      may_race_mem.insert(y);
      break;
    }
    if (race_free)
      out.race_free.insert(x);
    else
      may_race_mem.insert(x);
  }
  out.may_race.insert(may_race_mem.begin(), may_race_mem.end());
  return out;
}

RedundancyResult redundant_elimination(const std::set<TracePoint>& points,
                                       const Program& p, const Icfg& icfg,
                                       const VsaResult& res) {
  RedundancyResult out;
  std::map<std::uint32_t, std::vector<TracePoint>> by_func;
  for (const auto& t : points) {
    if (is_memory_access(t.access) && t.reg)
      by_func[t.instr.func].push_back(t);
    else
      out.kept.insert(t);
  }
  for (auto& [f, pts] : by_func) {
    const LocalCfg g = build_local_cfg(p, icfg, f);
    SymbolicWalker walker(p, icfg, res, g, f);
    std::sort(pts.begin(), pts.end(), [&](const TracePoint& a, const TracePoint& b) {
      const auto ra = g.rpo_index[a.instr.index];
      const auto rb = g.rpo_index[b.instr.index];
      if (ra != rb) return ra < rb;
      return p.instr_id(a.instr) < p.instr_id(b.instr);
    });
    std::vector<std::pair<TracePoint, SymValue>> kept_sym;
    for (const auto& d : pts) {
      std::optional<SymValue> v;
      if (g.reachable[d.instr.index]) v = walker.value_before(d.instr.index, *d.reg);
      if (!v) {
        out.kept.insert(d);
        continue;
      }
      bool derived = false;
      for (const auto& [s, sv] : kept_sym) {
        if (!(sv.sym == v->sym)) continue;
        if (!clean_region(p, g, f, s.instr.index, d.instr.index, v->sym)) continue;
        out.relations.push_back({d, s, v->offset - sv.offset});
        derived = true;
        break;
      }
      if (!derived) {
        out.kept.insert(d);
        kept_sym.emplace_back(d, *v);
      }
    }
  }
  std::sort(out.relations.begin(), out.relations.end());
  return out;
}

SelectionReport select(const Program& p, const Icfg& icfg, const VsaResult& res) {
  SelectionReport rep;
  rep.t_shared = find_shared_trace_points(res, p, icfg);
  const LockSetResult locks = compute_locksets(p, icfg, res);
  const RaceFreeChecker checker(p, icfg, res, locks);
  auto part = must_race_free(rep.t_shared, checker);
  rep.t_race_free = std::move(part.race_free);
  rep.t_may_race = std::move(part.may_race);
  auto red = redundant_elimination(rep.t_may_race, p, icfg, res);
  rep.relations = std::move(red.relations);
  for (const auto& r : rep.relations) rep.t_redundant.insert(r.derived);
  for (const auto& t : rep.t_shared)
    if (!rep.t_race_free.count(t) && !rep.t_redundant.count(t)) rep.t_trace.insert(t);
  return rep;
}

nlohmann::json trace_point_to_json(const Program& p, const TracePoint& t) {
  return {{"instr", p.instr_id(t.instr)},
          {"reg", t.reg ? nlohmann::json(std::string(reg_name(*t.reg))) : nlohmann::json()},
          {"access", access_name(t.access)}};
}

TracePoint trace_point_from_json(const Program& p, const nlohmann::json& j) {
  TracePoint t;
  auto r = p.find_instr(j.at("instr").get<std::string>());
  if (!r) throw ProgramError("unknown instruction " + j.at("instr").dump());
  t.instr = *r;
  if (!j.at("reg").is_null()) t.reg = parse_reg(j.at("reg").get<std::string>());
  t.access = *parse_access(j.at("access").get<std::string>());
  return t;
}

nlohmann::json selection_to_json(const Program& p, const SelectionReport& s) {
  auto set_json = [&](const std::set<TracePoint>& ts) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& t : ts) a.push_back(trace_point_to_json(p, t));
    return a;
  };
  nlohmann::json j;
  j["t_shared"] = set_json(s.t_shared);
  j["t_race_free"] = set_json(s.t_race_free);
  j["t_may_race"] = set_json(s.t_may_race);
  j["t_redundant"] = set_json(s.t_redundant);
  j["t_trace"] = set_json(s.t_trace);
  j["relations"] = nlohmann::json::array();
  for (const auto& r : s.relations)
    j["relations"].push_back({{"derived", trace_point_to_json(p, r.derived)},
                              {"source", trace_point_to_json(p, r.source)},
                              {"delta", r.delta}});
  j["counts"] = {{"shared", s.t_shared.size()},
                 {"race_free", s.t_race_free.size()},
                 {"redundant", s.t_redundant.size()},
                 {"trace", s.t_trace.size()}};
  return j;
}

}  // namespace tracerace
