#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace tracerace {

// r0..r7 are general purpose; fp and sp address the current stack frame.
enum class Reg : std::uint8_t { R0, R1, R2, R3, R4, R5, R6, R7, FP, SP };
inline constexpr int kNumRegs = 10;
inline constexpr int kNumGeneralRegs = 8;

std::string_view reg_name(Reg r);
std::optional<Reg> parse_reg(std::string_view s);
inline bool is_reserved(Reg r) { return r == Reg::FP || r == Reg::SP; }

struct Operand {
  enum class Kind : std::uint8_t { Imm, Reg, Mem, Abs };

  Kind kind = Kind::Imm;
  std::int64_t imm = 0;   // Imm
  tracerace::Reg reg = tracerace::Reg::R0;  // Reg, Mem base
  std::int64_t disp = 0;  // Mem
  std::uint64_t addr = 0; // Abs

  static Operand immediate(std::int64_t v);
  static Operand of_reg(tracerace::Reg r);
  static Operand mem(tracerace::Reg base, std::int64_t disp = 0);
  static Operand absolute(std::uint64_t addr);

  bool is_memory() const { return kind == Kind::Mem || kind == Kind::Abs; }
  bool operator==(const Operand&) const = default;
};

enum class Opcode : std::uint8_t {
  Mov, Add, Sub, Cmp, Jmp, Je, Jne, Call, Ret, Alloc,
  Lock, Unlock, Spawn, Join, Ptwrite, Halt
};

std::string_view opcode_name(Opcode op);

// A Before ptwrite is a prefix of the next instruction: branches to that
// instruction's label land on the ptwrite. An After ptwrite trails the
// previous instruction and is only reached by fallthrough from it.
enum class PtwAttach : std::uint8_t { Before, After };

struct Instruction {
  std::string label;  // empty only for ptwrite
  Opcode op = Opcode::Halt;
  Operand a;          // Mov/Add/Sub dst, Cmp lhs, Lock/Unlock/Join operand
  Operand b;          // Mov/Add/Sub src, Cmp rhs
  std::string target; // jump label, call/spawn callee
  Reg reg = Reg::R0;  // Alloc/Spawn destination, Ptwrite source
  bool has_reg = false;
  std::string site;   // Alloc site tag
  std::uint64_t alloc_size = 64;
  std::uint32_t ptw_id = 0;
  PtwAttach attach = PtwAttach::Before;

  // Index of the resolved jump target within the function (filled by
  // Program::resolve).
  std::size_t resolved = 0;

  bool is_terminator() const {
    return op == Opcode::Jmp || op == Opcode::Ret || op == Opcode::Halt;
  }
  bool is_branch() const {
    return op == Opcode::Jmp || op == Opcode::Je || op == Opcode::Jne;
  }
  bool is_sync() const {
    return op == Opcode::Lock || op == Opcode::Unlock || op == Opcode::Spawn ||
           op == Opcode::Join;
  }
  // The single memory operand, if any.
  const Operand* memory_operand() const;
  bool writes_memory() const;

  bool same_structure(const Instruction& o) const;
};

struct Function {
  std::string name;
  std::vector<Instruction> body;
  std::map<std::string, std::size_t> labels;
};

struct Global {
  std::uint64_t address = 0;
  std::uint64_t size = 0;
  bool operator==(const Global&) const = default;
};

// Addresses below this bound are reserved for globals.
inline constexpr std::uint64_t kGlobalLimit = 0x100000;

struct InstrRef {
  std::uint32_t func = 0;
  std::uint32_t index = 0;
  auto operator<=>(const InstrRef&) const = default;
};

class Program {
 public:
  std::vector<Function> functions;
  std::string entry;
  std::vector<Global> globals;

  // Validates the program and fills label maps and resolved jump targets.
  // Throws ProgramError on any violation.
  void resolve();

  std::optional<std::uint32_t> function_index(std::string_view name) const;
  const Function& function(std::string_view name) const;
  const Instruction& at(InstrRef r) const {
    return functions[r.func].body[r.index];
  }
  // "fn.label", or "fn.ptwN" for unlabeled ptwrites.
  std::string instr_id(InstrRef r) const;
  std::optional<InstrRef> find_instr(std::string_view id) const;

  const Global* global_containing(std::uint64_t addr) const;
  bool is_global_address(std::uint64_t addr) const {
    return global_containing(addr) != nullptr;
  }

  std::size_t instruction_count() const;
  bool same_structure(const Program& o) const;
};

class ProgramError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int line, int column);
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

Program parse_program(std::string_view text);
std::string print_program(const Program& p);
std::string print_instruction(const Instruction& ins);

nlohmann::json program_to_json(const Program& p);

// ---------------------------------------------------------------------------
// Interprocedural CFG

using NodeId = std::uint32_t;

enum class EdgeKind : std::uint8_t { Fallthrough, Branch, Call, Return, Spawn };

struct Edge {
  NodeId from = 0;
  NodeId to = 0;
  EdgeKind kind = EdgeKind::Fallthrough;
  bool operator==(const Edge&) const = default;
};

class Icfg {
 public:
  explicit Icfg(const Program& p);

  std::size_t size() const { return refs_.size(); }
  NodeId node(InstrRef r) const { return offsets_[r.func] + r.index; }
  InstrRef ref(NodeId n) const { return refs_[n]; }
  NodeId entry_of(std::uint32_t func) const { return offsets_[func]; }

  const std::vector<Edge>& successors(NodeId n) const { return succ_[n]; }
  const std::vector<Edge>& predecessors(NodeId n) const { return pred_[n]; }

  // Fallthrough and Branch successors only.
  std::vector<NodeId> intra_successors(NodeId n) const;
  std::vector<NodeId> intra_predecessors(NodeId n) const;

  // Call sites (Call nodes) targeting each function.
  const std::vector<NodeId>& call_sites(std::uint32_t func) const {
    return call_sites_[func];
  }

 private:
  std::vector<std::uint32_t> offsets_;
  std::vector<InstrRef> refs_;
  std::vector<std::vector<Edge>> succ_;
  std::vector<std::vector<Edge>> pred_;
  std::vector<std::vector<NodeId>> call_sites_;
};

Icfg build_icfg(const Program& p);

}  // namespace tracerace
