#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tracerace/ir.hpp"
#include "tracerace/trace_point.hpp"

namespace tracerace {

struct StackLoc {
  std::uint32_t func = 0;
  std::int64_t offset = 0;
  auto operator<=>(const StackLoc&) const = default;
};

// Abstract location. The Top* kinds stand for "some location in that region"
// and are used as keys for stores through unknown pointers.
struct ALoc {
  enum class Kind : std::uint8_t {
    Reg, Global, Stack, Heap, TopGlobal, TopStack, TopHeap
  };

  Kind kind = Kind::Reg;
  tracerace::Reg reg = tracerace::Reg::R0;
  std::uint64_t address = 0;
  StackLoc stack;
  std::string site;

  static ALoc of_reg(tracerace::Reg r);
  static ALoc global(std::uint64_t a);
  static ALoc stack_slot(std::uint32_t func, std::int64_t offset);
  static ALoc heap(std::string site);
  static ALoc top(Kind k);

  bool is_local() const {
    return kind == Kind::Reg || kind == Kind::Stack || kind == Kind::TopStack;
  }
  bool is_shared() const { return !is_local(); }

  auto operator<=>(const ALoc&) const = default;
};

std::string to_string(const Program& p, const ALoc& a);

// A finite set of T, or Top once it would exceed the bound.
template <class T>
struct Region {
  std::set<T> elems;
  bool top = false;

  bool empty() const { return !top && elems.empty(); }
  bool contains(const T& v) const { return top || elems.count(v) != 0; }
  void set_top() {
    top = true;
    elems.clear();
  }
  bool insert(const T& v, std::size_t bound) {
    if (top) return false;
    if (!elems.insert(v).second) return false;
    if (elems.size() > bound) set_top();
    return true;
  }
  bool join(const Region& o, std::size_t bound) {
    if (top) return false;
    if (o.top) {
      set_top();
      return true;
    }
    bool changed = false;
    for (const auto& v : o.elems) changed |= insert(v, bound);
    return changed;
  }
  bool operator==(const Region&) const = default;
};

// Tripartite value set plus a bounded set of plain constants. The empty value
// set is the lattice bottom.
struct ValueSet {
  static constexpr std::size_t kBound = 16;

  Region<std::uint64_t> global;
  Region<StackLoc> stack;
  Region<std::string> heap;
  Region<std::int64_t> consts;

  static ValueSet of_global(std::uint64_t a);
  static ValueSet of_stack(std::uint32_t func, std::int64_t off);
  static ValueSet of_heap(std::string site);
  static ValueSet of_const(std::int64_t c);

  bool empty() const {
    return global.empty() && stack.empty() && heap.empty() && consts.empty();
  }
  bool has_addresses() const {
    return !global.empty() || !stack.empty() || !heap.empty();
  }
  bool touches_shared() const { return !global.empty() || !heap.empty(); }
  bool join(const ValueSet& o);
  ValueSet shifted(std::int64_t c) const;

  bool operator==(const ValueSet&) const = default;
};

std::string to_string(const Program& p, const ValueSet& v);

using LocalState = std::map<ALoc, ValueSet>;
using SharedState = std::map<ALoc, ValueSet>;

struct VsaResult {
  // State before each ICFG node and after it (the latter is the per-
  // instruction localValueSet). Keys are Reg/Stack a-locs only.
  std::vector<LocalState> in;
  std::vector<LocalState> local;
  // Program-wide flow-insensitive summary for Global/Heap a-locs.
  SharedState shared;
  std::vector<bool> reached;
  std::size_t iterations = 0;
  std::size_t rounds = 0;

  ValueSet before(NodeId n, Reg r) const;
  ValueSet after(NodeId n, Reg r) const;
};

struct VsaOptions {
  // When set, the worklist pops in a seeded random order instead of FIFO.
  std::optional<std::uint64_t> order_seed;
};

// Least fixpoint of the value-set transfer system over the ICFG.
VsaResult analyze(const Icfg& icfg, const Program& p, const VsaOptions& opts = {});

// One transfer step: computes the state after `at` from the state before it,
// updating the shared summary in place.
LocalState transfer(const Program& p, InstrRef at, const LocalState& in,
                    SharedState& shared);

// Value of an operand read in `in` (loads consult the shared summary).
ValueSet eval_operand(const Program& p, const Operand& o, const LocalState& in,
                      const SharedState& shared);

// A-locs an access through `base + disp` may touch.
std::vector<ALoc> target_alocs(const Program& p, const ValueSet& base,
                               std::int64_t disp);

// A-locs a memory (or lock) operand may address, evaluated in `in`.
std::vector<ALoc> operand_targets(const Program& p, const Operand& o,
                                  const LocalState& in);

// True if `concrete` (a Global/Stack/Heap a-loc) is covered by `targets`.
bool covers(const std::vector<ALoc>& targets, const ALoc& concrete);

// Every memory access whose base value set reaches a global or heap a-loc,
// plus every synchronization instruction.
std::set<TracePoint> find_shared_trace_points(const VsaResult& res,
                                              const Program& p,
                                              const Icfg& icfg);

nlohmann::json vsa_to_json(const VsaResult& res, const Program& p,
                           const Icfg& icfg);

}  // namespace tracerace
