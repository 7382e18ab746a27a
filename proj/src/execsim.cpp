#include "tracerace/execsim.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <random>
#include <unordered_map>

namespace tracerace {

namespace {

constexpr std::uint64_t kHeapBase = kGlobalLimit;
constexpr std::uint64_t kStackBase = 0x40000000;
constexpr std::uint64_t kStackSpan = 0x100000;
constexpr std::uint64_t kFrameSize = 4096;
constexpr std::uint64_t kMaxFrames = kStackSpan / kFrameSize;

struct Frame {
  std::uint32_t func = 0;
  std::uint32_t ret_index = 0;
  std::int64_t saved_fp = 0;
  std::int64_t saved_sp = 0;
};

struct Thread {
  std::uint32_t tid = 0;
  std::uint32_t cpu = 0;
  std::uint32_t func = 0;
  std::uint32_t pc = 0;
  std::array<std::int64_t, kNumRegs> regs{};
  bool zf = false;
  bool done = false;
  std::vector<Frame> frames;

  std::int64_t& reg(Reg r) { return regs[static_cast<int>(r)]; }
};

std::int64_t frame_pointer(std::uint32_t tid, std::size_t depth) {
  return static_cast<std::int64_t>(kStackBase + tid * kStackSpan + depth * kFrameSize +
                                   kFrameSize / 2);
}

struct CpuState {
  std::vector<std::uint32_t> threads;  // affinitized, in spawn order
  std::optional<std::uint32_t> current;
  std::uint32_t remaining = 0;
  std::uint32_t last_tid = kNoThread;
  // packet state
  bool started = false;
  std::uint64_t last_time = 0;
  std::uint64_t tsc_window = 0;
  std::uint64_t token_window = 0;
  std::uint64_t tokens = 0;
};

class Machine {
 public:
  Machine(const Program& p, const SimConfig& cfg) : p_(p), cfg_(cfg), rng_(cfg.seed) {
    cpus_.resize(cfg.cpus);
    art_.config = cfg;
    art_.streams.resize(cfg.cpus);
    art_.loss_log.resize(cfg.cpus);
    auto entry = p.function_index(p.entry);
    if (!entry) throw SimError("entry function '" + p.entry + "' not found");
    spawn_thread(*entry);
  }

  RunArtifacts run() {
    while (true) {
      std::vector<std::uint32_t> cands;
      bool alive = false;
      for (std::uint32_t c = 0; c < cpus_.size(); ++c) {
        bool any = false;
        for (auto t : cpus_[c].threads) {
          alive |= !threads_[t].done;
          any |= runnable(threads_[t]);
        }
        if (any) cands.push_back(c);
      }
      if (cands.empty()) {
        if (alive) throw SimError(deadlock_message());
        break;
      }
      if (art_.steps >= cfg_.max_steps)
        throw SimError("step limit of " + std::to_string(cfg_.max_steps) + " reached");
      const std::uint32_t c = cands[rng_() % cands.size()];
      const std::uint32_t tid = pick_thread(c);
      CpuState& cs = cpus_[c];
      if (cs.last_tid != tid) {
        art_.sideband.push_back({clock_, c, cs.last_tid, tid});
        cs.last_tid = tid;
      }
      step(threads_[tid]);
      clock_ += cfg_.cycles_per_instr;
      ++art_.steps;
    }
    for (const auto& [a, v] : memory_)
      if (v != 0) art_.final_memory.emplace_back(a, v);
    std::sort(art_.final_memory.begin(), art_.final_memory.end());
    art_.threads = static_cast<std::uint32_t>(threads_.size());
    return std::move(art_);
  }

 private:
  std::uint32_t spawn_thread(std::uint32_t func) {
    Thread t;
    t.tid = static_cast<std::uint32_t>(threads_.size());
    t.cpu = t.tid % cfg_.cpus;
    t.func = func;
    t.frames.push_back(Frame{func, 0, 0, 0});
    t.reg(Reg::FP) = t.reg(Reg::SP) = frame_pointer(t.tid, 0);
    cpus_[t.cpu].threads.push_back(t.tid);
    threads_.push_back(t);
    return threads_.back().tid;
  }

  const Instruction& ins_at(const Thread& t, std::uint32_t i) const {
    return p_.functions[t.func].body[i];
  }

  // Index of the instruction a step of `t` executes, skipping its Before
  // ptwrite prefix.
  std::uint32_t core_index(const Thread& t) const {
    std::uint32_t i = t.pc;
    while (ins_at(t, i).op == Opcode::Ptwrite && ins_at(t, i).attach == PtwAttach::Before)
      ++i;
    return i;
  }

  std::uint64_t lock_address(Thread& t, const Operand& o) {
    switch (o.kind) {
      case Operand::Kind::Imm: return static_cast<std::uint64_t>(o.imm);
      case Operand::Kind::Reg: return static_cast<std::uint64_t>(t.reg(o.reg));
      case Operand::Kind::Mem: return static_cast<std::uint64_t>(t.reg(o.reg) + o.disp);
      case Operand::Kind::Abs: return o.addr;
    }
    return 0;
  }

  bool runnable(Thread& t) {
    if (t.done) return false;
    const Instruction& ins = ins_at(t, core_index(t));
    if (ins.op == Opcode::Lock) {
      auto it = locks_.find(lock_address(t, ins.a));
      return it == locks_.end() || it->second == t.tid;  // relock fails in step
    }
    if (ins.op == Opcode::Join) {
      auto child = static_cast<std::uint64_t>(t.reg(ins.a.reg));
      return child >= threads_.size() || threads_[child].done;  // bad tid fails in step
    }
    return true;
  }

  std::uint32_t pick_thread(std::uint32_t c) {
    CpuState& cs = cpus_[c];
    if (cs.current && cs.remaining > 0 && runnable(threads_[*cs.current])) {
      --cs.remaining;
      return *cs.current;
    }
    // Round robin starting after the current thread, with a seeded skip.
    const auto& ts = cs.threads;
    std::size_t start = 0;
    if (cs.current) {
      auto it = std::find(ts.begin(), ts.end(), *cs.current);
      start = static_cast<std::size_t>(it - ts.begin()) + 1;
    }
    std::vector<std::uint32_t> order;
    for (std::size_t k = 0; k < ts.size(); ++k) {
      auto tid = ts[(start + k) % ts.size()];
      if (runnable(threads_[tid])) order.push_back(tid);
    }
    std::size_t pick = 0;
    if (order.size() > 1 && rng_() % 4 == 0) pick = 1;
    cs.current = order[pick];
    cs.remaining = cfg_.quantum - 1;
    return *cs.current;
  }

  std::string deadlock_message() const {
    std::string m = "deadlock: blocked threads";
    for (const auto& t : threads_)
      if (!t.done)
        m += " t" + std::to_string(t.tid) + "@" +
             p_.instr_id(InstrRef{t.func, t.pc});
    return m;
  }

  ALoc classify(std::uint64_t addr) const {
    if (addr < kGlobalLimit) return ALoc::global(addr);
    if (addr >= kHeapBase && addr < heap_top_) {
      auto it = std::prev(objects_.upper_bound(addr));
      return ALoc::heap(it->second);
    }
    if (addr >= kStackBase) {
      const std::uint64_t tid = (addr - kStackBase) / kStackSpan;
      const std::uint64_t depth = (addr - kStackBase - tid * kStackSpan) / kFrameSize;
      if (tid < threads_.size() && depth < threads_[tid].frames.size()) {
        const auto fp = frame_pointer(static_cast<std::uint32_t>(tid), depth);
        return ALoc::stack_slot(threads_[tid].frames[depth].func,
                                static_cast<std::int64_t>(addr) - fp);
      }
      throw SimError("access to a dead stack frame at " + std::to_string(addr));
    }
    throw SimError("access to unmapped address " + std::to_string(addr));
  }

  std::int64_t load(std::uint64_t a) const {
    auto it = memory_.find(a);
    return it == memory_.end() ? 0 : it->second;
  }

  void emit_ptw(Thread& t, std::uint32_t index) {
    const Instruction& ptw = ins_at(t, index);
    const std::int64_t payload = ptw.has_reg ? t.reg(ptw.reg) : 0;
    GroundTruth g;
    g.ts = clock_;
    g.tid = t.tid;
    g.cpu = t.cpu;
    g.instr = InstrRef{t.func, index};
    g.op = Opcode::Ptwrite;
    g.value = payload;
    g.address = ptw.ptw_id;
    art_.ground_truth.push_back(g);

    CpuState& cs = cpus_[t.cpu];
    const std::uint64_t window = clock_ / cfg_.window_cycles();
    if (cfg_.buffer_capacity) {
      if (!cs.started || cs.token_window != window) {
        cs.token_window = window;
        cs.tokens = *cfg_.buffer_capacity;
        cs.started = true;
      }
      if (cs.tokens == 0) {
        auto& log = art_.loss_log[t.cpu];
        const std::uint64_t start = window * cfg_.window_cycles();
        if (log.empty() || log.back().start != start)
          log.push_back({start, start + cfg_.window_cycles(), 0});
        ++log.back().dropped;
        return;
      }
      --cs.tokens;
    }
    auto& s = art_.streams[t.cpu];
    if (s.empty() || cs.tsc_window != window) {
      s.push_back(Packet::tsc(clock_));
      cs.tsc_window = window;
    } else if (clock_ > cs.last_time) {
      s.push_back(Packet::cyc(clock_ - cs.last_time));
    }
    cs.last_time = clock_;
    s.push_back(Packet::ptw(static_cast<std::uint64_t>(payload), ptw.ptw_id));
    ++art_.emitted_ptw;
  }

  void record(Thread& t, std::uint32_t index, std::optional<AccessKind> access,
              std::uint64_t address, std::int64_t value, bool memory) {
    GroundTruth g;
    g.ts = clock_;
    g.tid = t.tid;
    g.cpu = t.cpu;
    g.instr = InstrRef{t.func, index};
    g.op = ins_at(t, index).op;
    g.access = access;
    g.address = address;
    g.value = value;
    if (memory) g.aloc = classify(address);
    art_.ground_truth.push_back(std::move(g));
  }

  std::uint64_t effective(Thread& t, const Operand& o) {
    if (o.kind == Operand::Kind::Abs) return o.addr;
    return static_cast<std::uint64_t>(t.reg(o.reg) + o.disp);
  }

  std::int64_t read_operand(Thread& t, std::uint32_t index, const Operand& o) {
    switch (o.kind) {
      case Operand::Kind::Imm: return o.imm;
      case Operand::Kind::Reg: return t.reg(o.reg);
      default: {
        const std::uint64_t a = effective(t, o);
        const std::int64_t v = load(a);
        record(t, index, AccessKind::Read, a, v, true);
        return v;
      }
    }
  }

  void step(Thread& t);

  const Program& p_;
  const SimConfig& cfg_;
  std::mt19937_64 rng_;
  std::vector<Thread> threads_;
  std::vector<CpuState> cpus_;
  std::unordered_map<std::uint64_t, std::int64_t> memory_;
  std::map<std::uint64_t, std::string> objects_;
  std::uint64_t heap_top_ = kHeapBase;
  std::map<std::uint64_t, std::uint32_t> locks_;
  std::uint64_t clock_ = 0;
  RunArtifacts art_;
};

}  // namespace

void Machine::step(Thread& t) {
  const std::uint32_t core = core_index(t);
  const std::uint32_t cpu_tid = t.tid;
  if (ins_at(t, t.pc).op == Opcode::Ptwrite && ins_at(t, t.pc).attach == PtwAttach::After) {
    // Only reachable when control lands on a trailing record directly.
    emit_ptw(t, t.pc);
    ++t.pc;
    return;
  }
  for (std::uint32_t i = t.pc; i < core; ++i) emit_ptw(t, i);

  const Instruction& ins = ins_at(t, core);
  const std::size_t recorded = art_.ground_truth.size();
  std::uint32_t next = core + 1;
  bool trailing = true;  // run After ptwrites that follow `core`
  switch (ins.op) {
    case Opcode::Mov: {
      const std::int64_t v = read_operand(t, core, ins.b);
      if (ins.a.kind == Operand::Kind::Reg) {
        t.reg(ins.a.reg) = v;
      } else {
        const std::uint64_t a = effective(t, ins.a);
        record(t, core, AccessKind::Write, a, v, true);
        memory_[a] = v;
      }
      break;
    }
    case Opcode::Add:
    case Opcode::Sub: {
      const std::int64_t v = read_operand(t, core, ins.b);
      auto& d = t.reg(ins.a.reg);
      d = static_cast<std::int64_t>(ins.op == Opcode::Add
                                        ? static_cast<std::uint64_t>(d) + static_cast<std::uint64_t>(v)
                                        : static_cast<std::uint64_t>(d) - static_cast<std::uint64_t>(v));
      break;
    }
    case Opcode::Cmp: {
      const std::int64_t x = read_operand(t, core, ins.a);
      const std::int64_t y = read_operand(t, core, ins.b);
      t.zf = x == y;
      break;
    }
    case Opcode::Jmp:
      next = static_cast<std::uint32_t>(ins.resolved);
      trailing = false;
      break;
    case Opcode::Je:
    case Opcode::Jne:
      if (t.zf == (ins.op == Opcode::Je)) {
        next = static_cast<std::uint32_t>(ins.resolved);
        trailing = false;
      }
      break;
    case Opcode::Call: {
      if (t.frames.size() >= kMaxFrames) throw SimError("stack overflow in t" + std::to_string(t.tid));
      const std::uint32_t callee = *p_.function_index(ins.target);
      t.frames.push_back(Frame{callee, core + 1, t.reg(Reg::FP), t.reg(Reg::SP)});
      t.reg(Reg::FP) = t.reg(Reg::SP) = frame_pointer(t.tid, t.frames.size() - 1);
      // A fresh frame starts zeroed.
      const auto lo = static_cast<std::uint64_t>(t.reg(Reg::FP)) - kFrameSize / 2;
      for (auto it = memory_.begin(); it != memory_.end();)
        it = (it->first >= lo && it->first < lo + kFrameSize) ? memory_.erase(it) : std::next(it);
      record(t, core, std::nullopt, 0, 0, false);
      t.func = callee;
      t.pc = 0;
      return;
    }
    case Opcode::Ret: {
      record(t, core, std::nullopt, 0, 0, false);
      const Frame f = t.frames.back();
      t.frames.pop_back();
      if (t.frames.empty()) {
        t.done = true;
        return;
      }
      t.reg(Reg::FP) = f.saved_fp;
      t.reg(Reg::SP) = f.saved_sp;
      t.func = t.frames.back().func;
      t.pc = f.ret_index;
      return;
    }
    case Opcode::Halt:
      record(t, core, std::nullopt, 0, 0, false);
      t.done = true;
      return;
    case Opcode::Alloc: {
      const std::uint64_t size = (ins.alloc_size + 7) / 8 * 8;
      objects_[heap_top_] = ins.site;
      t.reg(ins.reg) = static_cast<std::int64_t>(heap_top_);
      heap_top_ += size;
      if (heap_top_ >= kStackBase) throw SimError("heap exhausted");
      break;
    }
    case Opcode::Lock: {
      const std::uint64_t a = lock_address(t, ins.a);
      if (locks_.count(a))
        throw SimError("t" + std::to_string(t.tid) + " relocks " + std::to_string(a));
      locks_[a] = t.tid;
      record(t, core, AccessKind::LockAcq, a, 0, true);
      break;
    }
    case Opcode::Unlock: {
      const std::uint64_t a = lock_address(t, ins.a);
      auto it = locks_.find(a);
      if (it == locks_.end() || it->second != t.tid)
        throw SimError("t" + std::to_string(t.tid) + " unlocks " + std::to_string(a) +
                       " without holding it");
      locks_.erase(it);
      record(t, core, AccessKind::LockRel, a, 0, true);
      break;
    }
    case Opcode::Spawn: {
      const std::uint32_t callee = *p_.function_index(ins.target);
      const std::uint32_t child = spawn_thread(callee);
      Thread& self = threads_[cpu_tid];  // spawn_thread may reallocate
      self.reg(ins.reg) = child;
      record(self, core, AccessKind::ThreadFork, child, child, false);
      for (next = core + 1; ins_at(self, next).op == Opcode::Ptwrite &&
                            ins_at(self, next).attach == PtwAttach::After;
           ++next)
        emit_ptw(self, next);
      self.pc = next;
      return;
    }
    case Opcode::Join: {
      const auto child = static_cast<std::uint64_t>(t.reg(ins.a.reg));
      if (child >= threads_.size() || child == t.tid)
        throw SimError("t" + std::to_string(t.tid) + " joins unknown thread " +
                       std::to_string(t.reg(ins.a.reg)));
      record(t, core, AccessKind::ThreadJoin, child, static_cast<std::int64_t>(child), false);
      break;
    }
    case Opcode::Ptwrite:
      break;  // unreachable: core_index skips Before records
  }
  if (art_.ground_truth.size() == recorded) record(t, core, std::nullopt, 0, 0, false);
  if (trailing) {
    while (next < p_.functions[t.func].body.size() && ins_at(t, next).op == Opcode::Ptwrite &&
           ins_at(t, next).attach == PtwAttach::After)
      emit_ptw(t, next++);
  }
  t.pc = next;
}

RunArtifacts run(const Program& p, const SimConfig& cfg) {
  cfg.validate();
  Machine m(p, cfg);
  return m.run();
}

void SimConfig::validate() const {
  if (cpus == 0) throw SimError("cpus must be at least 1");
  if (quantum == 0) throw SimError("quantum must be at least 1");
  if (cycles_per_instr == 0) throw SimError("cycles_per_instr must be at least 1");
  if (tsc_interval == 0) throw SimError("tsc_interval must be at least 1");
  if (max_steps == 0) throw SimError("max_steps must be at least 1");
}

LossStats loss_stats(const RunArtifacts& a) {
  LossStats s;
  for (const auto& stream : a.streams)
    for (const auto& pk : stream)
      if (pk.kind == Packet::Kind::Ptw) ++s.emitted;
  for (const auto& log : a.loss_log) {
    s.loss_times += log.size();
    for (const auto& w : log) s.dropped += w.dropped;
  }
  if (s.dropped + s.emitted > 0)
    s.loss_percent = 100.0 * static_cast<double>(s.dropped) /
                     static_cast<double>(s.dropped + s.emitted);
  return s;
}

}  // namespace tracerace
