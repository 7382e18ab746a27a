#include "tracerace/ir.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>
#include <sstream>

namespace tracerace {

namespace {

constexpr std::string_view kRegNames[kNumRegs] = {
    "r0", "r1", "r2", "r3", "r4", "r5", "r6", "r7", "fp", "sp"};

constexpr std::string_view kOpNames[] = {
    "mov",  "add",    "sub",   "cmp",  "jmp",     "je",  "jne", "call",
    "ret",  "alloc",  "lock",  "unlock", "spawn", "join", "ptwrite", "halt"};

}  // namespace

std::string_view reg_name(Reg r) { return kRegNames[static_cast<int>(r)]; }

std::optional<Reg> parse_reg(std::string_view s) {
  for (int i = 0; i < kNumRegs; ++i)
    if (kRegNames[i] == s) return static_cast<Reg>(i);
  return std::nullopt;
}

std::string_view opcode_name(Opcode op) {
  return kOpNames[static_cast<int>(op)];
}

Operand Operand::immediate(std::int64_t v) {
  Operand o;
  o.kind = Kind::Imm;
  o.imm = v;
  return o;
}

Operand Operand::of_reg(tracerace::Reg r) {
  Operand o;
  o.kind = Kind::Reg;
  o.reg = r;
  return o;
}

Operand Operand::mem(tracerace::Reg base, std::int64_t disp) {
  Operand o;
  o.kind = Kind::Mem;
  o.reg = base;
  o.disp = disp;
  return o;
}

Operand Operand::absolute(std::uint64_t addr) {
  Operand o;
  o.kind = Kind::Abs;
  o.addr = addr;
  return o;
}

const Operand* Instruction::memory_operand() const {
  switch (op) {
    case Opcode::Mov:
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::Cmp:
      if (a.is_memory()) return &a;
      if (b.is_memory()) return &b;
      return nullptr;
    default:
      return nullptr;
  }
}

bool Instruction::writes_memory() const {
  return op == Opcode::Mov && a.is_memory();
}

bool Instruction::same_structure(const Instruction& o) const {
  if (label != o.label || op != o.op) return false;
  switch (op) {
    case Opcode::Mov:
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::Cmp:
      return a == o.a && b == o.b;
    case Opcode::Jmp:
    case Opcode::Je:
    case Opcode::Jne:
    case Opcode::Call:
      return target == o.target;
    case Opcode::Alloc:
      return reg == o.reg && site == o.site && alloc_size == o.alloc_size;
    case Opcode::Lock:
    case Opcode::Unlock:
    case Opcode::Join:
      return a == o.a;
    case Opcode::Spawn:
      return reg == o.reg && target == o.target;
    case Opcode::Ptwrite:
      return has_reg == o.has_reg && (!has_reg || reg == o.reg) &&
             ptw_id == o.ptw_id && attach == o.attach;
    case Opcode::Ret:
    case Opcode::Halt:
      return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Program

std::optional<std::uint32_t> Program::function_index(
    std::string_view name) const {
  for (std::uint32_t i = 0; i < functions.size(); ++i)
    if (functions[i].name == name) return i;
  return std::nullopt;
}

const Function& Program::function(std::string_view name) const {
  auto idx = function_index(name);
  if (!idx) throw ProgramError("unknown function '" + std::string(name) + "'");
  return functions[*idx];
}

std::string Program::instr_id(InstrRef r) const {
  const auto& f = functions[r.func];
  const auto& ins = f.body[r.index];
  if (!ins.label.empty()) return f.name + "." + ins.label;
  return f.name + ".ptw" + std::to_string(ins.ptw_id);
}

std::optional<InstrRef> Program::find_instr(std::string_view id) const {
  auto dot = id.find('.');
  if (dot == std::string_view::npos) return std::nullopt;
  auto fidx = function_index(id.substr(0, dot));
  if (!fidx) return std::nullopt;
  const auto& f = functions[*fidx];
  auto rest = std::string(id.substr(dot + 1));
  if (auto it = f.labels.find(rest); it != f.labels.end())
    return InstrRef{*fidx, static_cast<std::uint32_t>(it->second)};
  for (std::uint32_t i = 0; i < f.body.size(); ++i)
    if (instr_id({*fidx, i}) == id) return InstrRef{*fidx, i};
  return std::nullopt;
}

const Global* Program::global_containing(std::uint64_t addr) const {
  for (const auto& g : globals)
    if (addr >= g.address && addr < g.address + g.size) return &g;
  return nullptr;
}

std::size_t Program::instruction_count() const {
  std::size_t n = 0;
  for (const auto& f : functions) n += f.body.size();
  return n;
}

bool Program::same_structure(const Program& o) const {
  if (entry != o.entry || globals != o.globals ||
      functions.size() != o.functions.size())
    return false;
  for (std::size_t i = 0; i < functions.size(); ++i) {
    const auto& f = functions[i];
    const auto& g = o.functions[i];
    if (f.name != g.name || f.body.size() != g.body.size()) return false;
    for (std::size_t j = 0; j < f.body.size(); ++j)
      if (!f.body[j].same_structure(g.body[j])) return false;
  }
  return true;
}

namespace {

void check_operand_global(const Operand& o,
                          const std::string& where) {
  if (o.kind == Operand::Kind::Abs && (o.addr == 0 || o.addr >= kGlobalLimit))
    throw ProgramError(where + ": absolute address " + std::to_string(o.addr) +
                       " is outside the global region");
}

void check_writable_reg(Reg r, const std::string& where, bool allow_sp) {
  if (r == Reg::FP || (r == Reg::SP && !allow_sp))
    throw ProgramError(where + ": reserved register '" +
                       std::string(reg_name(r)) + "' cannot be written");
}

}  // namespace

void Program::resolve() {
  if (functions.empty()) throw ProgramError("no entry function");
  if (entry.empty()) entry = functions.front().name;
  if (!function_index(entry))
    throw ProgramError("entry function '" + entry + "' does not exist");

  std::set<std::string> names;
  for (const auto& f : functions)
    if (!names.insert(f.name).second)
      throw ProgramError("duplicate function '" + f.name + "'");

  for (std::size_t i = 0; i < globals.size(); ++i) {
    const auto& g = globals[i];
    if (g.address == 0 || g.size == 0 || g.address + g.size > kGlobalLimit)
      throw ProgramError("global g" + std::to_string(g.address) +
                         " has an invalid address range");
    for (std::size_t j = 0; j < i; ++j) {
      const auto& h = globals[j];
      if (g.address < h.address + h.size && h.address < g.address + g.size)
        throw ProgramError("global g" + std::to_string(g.address) +
                           " overlaps g" + std::to_string(h.address));
    }
  }

  std::set<std::uint32_t> ptw_ids;
  std::set<std::string> sites;
  for (auto& f : functions) {
    if (f.body.empty())
      throw ProgramError("function '" + f.name + "' is empty");
    f.labels.clear();
    for (std::size_t i = 0; i < f.body.size(); ++i) {
      const auto& ins = f.body[i];
      if (ins.label.empty()) {
        if (ins.op != Opcode::Ptwrite)
          throw ProgramError("unlabeled instruction in '" + f.name + "'");
        continue;
      }
      if (!f.labels.emplace(ins.label, i).second)
        throw ProgramError("duplicate label '" + ins.label + "' in '" +
                           f.name + "'");
    }
    if (!f.body.back().is_terminator())
      throw ProgramError("function '" + f.name +
                         "' does not end in jmp/ret/halt");

    for (auto& ins : f.body) {
      const std::string where = f.name + "." +
                                (ins.label.empty() ? "ptwrite" : ins.label);
      switch (ins.op) {
        case Opcode::Mov:
          if (ins.a.kind == Operand::Kind::Imm)
            throw ProgramError(where + ": immediate destination");
          if (ins.a.is_memory() && ins.b.is_memory())
            throw ProgramError(where + ": memory-to-memory mov");
          if (ins.a.kind == Operand::Kind::Reg)
            check_writable_reg(ins.a.reg, where, false);
          check_operand_global(ins.a, where);
          check_operand_global(ins.b, where);
          break;
        case Opcode::Add:
        case Opcode::Sub:
          if (ins.a.kind != Operand::Kind::Reg)
            throw ProgramError(where + ": destination must be a register");
          check_writable_reg(ins.a.reg, where, true);
          check_operand_global(ins.b, where);
          break;
        case Opcode::Cmp:
          if (ins.a.is_memory() && ins.b.is_memory())
            throw ProgramError(where + ": memory-to-memory cmp");
          check_operand_global(ins.a, where);
          check_operand_global(ins.b, where);
          break;
        case Opcode::Jmp:
        case Opcode::Je:
        case Opcode::Jne: {
          auto it = f.labels.find(ins.target);
          if (it == f.labels.end())
            throw ProgramError(where + ": unresolved label '" + ins.target +
                               "'");
          // Land on the Before-ptwrite prefix of the target, if any.
          std::size_t t = it->second;
          while (t > 0 && f.body[t - 1].op == Opcode::Ptwrite &&
                 f.body[t - 1].attach == PtwAttach::Before)
            --t;
          ins.resolved = t;
          break;
        }
        case Opcode::Call:
        case Opcode::Spawn:
          if (!function_index(ins.target))
            throw ProgramError(where + ": unresolved function '" +
                               ins.target + "'");
          if (ins.op == Opcode::Spawn) check_writable_reg(ins.reg, where, false);
          break;
        case Opcode::Alloc:
          check_writable_reg(ins.reg, where, false);
          if (ins.alloc_size == 0)
            throw ProgramError(where + ": zero-sized allocation");
          if (ins.site.empty() || !sites.insert(ins.site).second)
            throw ProgramError(where + ": allocation site '" + ins.site +
                               "' missing or reused");
          break;
        case Opcode::Lock:
        case Opcode::Unlock:
          check_operand_global(ins.a, where);
          break;
        case Opcode::Join:
          if (ins.a.kind != Operand::Kind::Reg)
            throw ProgramError(where + ": join operand must be a register");
          break;
        case Opcode::Ptwrite:
          if (!ptw_ids.insert(ins.ptw_id).second)
            throw ProgramError(where + ": duplicate ptwrite id " +
                               std::to_string(ins.ptw_id));
          break;
        case Opcode::Ret:
        case Opcode::Halt:
          break;
      }
    }
  }
}

ParseError::ParseError(const std::string& msg, int line, int column)
    : std::runtime_error(std::to_string(line) + ":" + std::to_string(column) +
                         ": " + msg),
      line_(line),
      column_(column) {}

// ---------------------------------------------------------------------------
// Parser

namespace {

enum class Tok : std::uint8_t { Ident, Number, Punct, Newline, End };

struct Token {
  Tok kind;
  std::string text;
  std::int64_t value = 0;
  int line = 1;
  int column = 1;
};

std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  int line = 1;
  int col = 1;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    i += n;
    col += static_cast<int>(n);
  };
  while (i < src.size()) {
    char c = src[i];
    if (c == '\n') {
      out.push_back({Tok::Newline, "\n", 0, line, col});
      ++i;
      ++line;
      col = 1;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    if (c == '/' && i + 1 < src.size() && src[i + 1] == '/') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    const int start_col = col;
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      int base = 10;
      if (c == '0' && j + 1 < src.size() && (src[j + 1] == 'x' || src[j + 1] == 'X')) {
        base = 16;
        j += 2;
      }
      std::size_t digits = j;
      while (j < src.size() && std::isalnum(static_cast<unsigned char>(src[j])))
        ++j;
      std::uint64_t v = 0;
      auto [ptr, ec] = std::from_chars(src.data() + digits, src.data() + j, v, base);
      if (ec != std::errc() || ptr != src.data() + j || digits == j)
        throw ParseError("malformed number '" + std::string(src.substr(i, j - i)) + "'",
                         line, start_col);
      out.push_back({Tok::Number, std::string(src.substr(i, j - i)),
                     static_cast<std::int64_t>(v), line, start_col});
      advance(j - i);
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '@' ||
        c == '.') {
      std::size_t j = i + 1;
      while (j < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_' ||
              src[j] == '.'))
        ++j;
      out.push_back({Tok::Ident, std::string(src.substr(i, j - i)), 0, line,
                     start_col});
      advance(j - i);
      continue;
    }
    if (std::string_view("{}[]:,+-#;").find(c) != std::string_view::npos) {
      out.push_back({Tok::Punct, std::string(1, c), 0, line, start_col});
      advance(1);
      continue;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", line, col);
  }
  out.push_back({Tok::End, "", 0, line, col});
  return out;
}

// "g100" -> 100
std::optional<std::uint64_t> global_name_value(std::string_view s) {
  if (s.size() < 2 || s[0] != 'g') return std::nullopt;
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), v, 10);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  Program parse() {
    Program p;
    skip_newlines();
    while (peek().kind != Tok::End) {
      const Token& t = peek();
      if (t.kind == Tok::Ident && t.text == "global") {
        next();
        const Token& name = expect_ident("global name");
        auto addr = global_name_value(name.text);
        if (!addr) fail("global name must look like gADDR", name);
        const Token& kw = expect_ident("'size'");
        if (kw.text != "size") fail("expected 'size'", kw);
        const Token& sz = next();
        if (sz.kind != Tok::Number || sz.value <= 0) fail("expected global size", sz);
        p.globals.push_back({*addr, static_cast<std::uint64_t>(sz.value)});
      } else if (t.kind == Tok::Ident && t.text == "fn") {
        next();
        p.functions.push_back(parse_function());
      } else if (t.kind == Tok::Ident && t.text == "entry") {
        next();
        p.entry = expect_ident("entry function").text;
      } else {
        fail("expected 'fn', 'global' or 'entry'", t);
      }
      skip_newlines();
    }
    if (p.functions.empty()) {
      const Token& e = peek();
      throw ParseError("no entry function", e.line, e.column);
    }
    if (p.entry.empty()) {
      p.entry = p.function_index("main") ? "main" : p.functions.front().name;
    }
    try {
      p.resolve();
    } catch (const ProgramError& e) {
      throw ParseError(e.what(), last_line_, 1);
    }
    return p;
  }

 private:
  const Token& peek(std::size_t k = 0) const {
    return toks_[std::min(pos_ + k, toks_.size() - 1)];
  }
  const Token& next() {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    last_line_ = t.line;
    return t;
  }
  [[noreturn]] void fail(const std::string& msg, const Token& at) const {
    throw ParseError(msg, at.line, at.column);
  }
  const Token& expect_ident(const char* what) {
    const Token& t = next();
    if (t.kind != Tok::Ident) fail(std::string("expected ") + what, t);
    return t;
  }
  void expect_punct(char c) {
    const Token& t = next();
    if (t.kind != Tok::Punct || t.text[0] != c)
      fail(std::string("expected '") + c + "'", t);
  }
  bool accept_punct(char c) {
    if (peek().kind == Tok::Punct && peek().text[0] == c) {
      next();
      return true;
    }
    return false;
  }
  void skip_newlines() {
    while (peek().kind == Tok::Newline ||
           (peek().kind == Tok::Punct && peek().text == ";"))
      next();
  }

  Function parse_function() {
    Function f;
    f.name = expect_ident("function name").text;
    skip_newlines();
    expect_punct('{');
    skip_newlines();
    while (!(peek().kind == Tok::Punct && peek().text == "}")) {
      if (peek().kind == Tok::End) fail("unterminated function body", peek());
      f.body.push_back(parse_instruction());
      // Instructions end at a newline, ';' or the closing brace.
      if (!(peek().kind == Tok::Punct && peek().text == "}")) {
        if (peek().kind != Tok::Newline &&
            !(peek().kind == Tok::Punct && peek().text == ";"))
          fail("expected end of instruction", peek());
      }
      skip_newlines();
    }
    expect_punct('}');
    return f;
  }

  Reg expect_reg() {
    const Token& t = next();
    auto r = t.kind == Tok::Ident ? parse_reg(t.text) : std::nullopt;
    if (!r) fail("expected register", t);
    return *r;
  }

  std::int64_t parse_signed_number() {
    bool neg = accept_punct('-');
    if (!neg) accept_punct('+');
    const Token& t = next();
    if (t.kind != Tok::Number) fail("expected number", t);
    return neg ? -t.value : t.value;
  }

  Operand parse_operand() {
    const Token& t = peek();
    if (t.kind == Tok::Punct && t.text == "[") {
      next();
      const Token& base = next();
      Operand o;
      if (base.kind == Tok::Ident) {
        if (auto r = parse_reg(base.text)) {
          o = Operand::mem(*r, 0);
        } else if (auto g = global_name_value(base.text)) {
          o = Operand::absolute(*g);
        } else {
          fail("malformed memory operand", base);
        }
      } else if (base.kind == Tok::Number) {
        o = Operand::absolute(static_cast<std::uint64_t>(base.value));
      } else {
        fail("malformed memory operand", base);
      }
      if (peek().kind == Tok::Punct && (peek().text == "+" || peek().text == "-")) {
        bool neg = next().text == "-";
        const Token& d = next();
        if (d.kind != Tok::Number) fail("malformed displacement", d);
        std::int64_t disp = neg ? -d.value : d.value;
        if (o.kind == Operand::Kind::Mem)
          o.disp = disp;
        else
          o.addr = static_cast<std::uint64_t>(static_cast<std::int64_t>(o.addr) + disp);
      }
      expect_punct(']');
      return o;
    }
    if (t.kind == Tok::Ident) {
      if (auto r = parse_reg(t.text)) {
        next();
        return Operand::of_reg(*r);
      }
      if (auto g = global_name_value(t.text)) {
        next();
        return Operand::immediate(static_cast<std::int64_t>(*g));
      }
      fail("malformed operand '" + t.text + "'", t);
    }
    if (t.kind == Tok::Number || (t.kind == Tok::Punct && (t.text == "-" || t.text == "+")))
      return Operand::immediate(parse_signed_number());
    fail("malformed operand", t);
  }

  Instruction parse_instruction() {
    Instruction ins;
    if (peek().kind == Tok::Ident && peek(1).kind == Tok::Punct &&
        peek(1).text == ":") {
      ins.label = next().text;
      next();
    }
    const Token& m = expect_ident("mnemonic");
    std::string mn = m.text;
    if (mn == "mov" || mn == "add" || mn == "sub" || mn == "cmp") {
      ins.op = mn == "mov" ? Opcode::Mov
               : mn == "add" ? Opcode::Add
               : mn == "sub" ? Opcode::Sub
                             : Opcode::Cmp;
      ins.a = parse_operand();
      expect_punct(',');
      ins.b = parse_operand();
    } else if (mn == "jmp" || mn == "je" || mn == "jne") {
      ins.op = mn == "jmp" ? Opcode::Jmp : mn == "je" ? Opcode::Je : Opcode::Jne;
      ins.target = expect_ident("label").text;
    } else if (mn == "call") {
      ins.op = Opcode::Call;
      ins.target = expect_ident("function").text;
    } else if (mn == "ret") {
      ins.op = Opcode::Ret;
    } else if (mn == "halt") {
      ins.op = Opcode::Halt;
    } else if (mn == "alloc") {
      ins.op = Opcode::Alloc;
      ins.reg = expect_reg();
      ins.has_reg = true;
      expect_punct(',');
      const Token& s = expect_ident("allocation site");
      if (s.text.size() < 2 || s.text[0] != '@') fail("allocation site must look like @name", s);
      ins.site = s.text.substr(1);
      if (accept_punct(',')) {
        const Token& sz = next();
        if (sz.kind != Tok::Number || sz.value <= 0) fail("expected allocation size", sz);
        ins.alloc_size = static_cast<std::uint64_t>(sz.value);
      }
    } else if (mn == "lock" || mn == "unlock") {
      ins.op = mn == "lock" ? Opcode::Lock : Opcode::Unlock;
      ins.a = parse_operand();
    } else if (mn == "spawn") {
      ins.op = Opcode::Spawn;
      ins.reg = expect_reg();
      ins.has_reg = true;
      expect_punct(',');
      ins.target = expect_ident("function").text;
    } else if (mn == "join") {
      ins.op = Opcode::Join;
      ins.a = parse_operand();
    } else if (mn == "ptwrite" || mn == "ptwrite.after") {
      ins.op = Opcode::Ptwrite;
      ins.attach = mn == "ptwrite" ? PtwAttach::Before : PtwAttach::After;
      if (peek().kind == Tok::Ident) {
        ins.reg = expect_reg();
        ins.has_reg = true;
        expect_punct(',');
      }
      expect_punct('#');
      const Token& id = next();
      if (id.kind != Tok::Number || id.value < 0) fail("expected ptwrite id", id);
      ins.ptw_id = static_cast<std::uint32_t>(id.value);
      if (!ins.label.empty()) fail("ptwrite cannot carry a label", m);
    } else {
      fail("unknown mnemonic '" + mn + "'", m);
    }
    if (ins.label.empty() && ins.op != Opcode::Ptwrite)
      fail("instruction requires a label", m);
    return ins;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int last_line_ = 1;
};

std::string operand_text(const Operand& o) {
  std::ostringstream os;
  switch (o.kind) {
    case Operand::Kind::Imm:
      os << o.imm;
      break;
    case Operand::Kind::Reg:
      os << reg_name(o.reg);
      break;
    case Operand::Kind::Mem:
      os << '[' << reg_name(o.reg);
      if (o.disp > 0) os << '+' << o.disp;
      if (o.disp < 0) os << '-' << -o.disp;
      os << ']';
      break;
    case Operand::Kind::Abs:
      os << "[g" << o.addr << ']';
      break;
  }
  return os.str();
}

}  // namespace

Program parse_program(std::string_view text) {
  return Parser(tokenize(text)).parse();
}

std::string print_instruction(const Instruction& ins) {
  std::ostringstream os;
  if (!ins.label.empty()) os << ins.label << ": ";
  switch (ins.op) {
    case Opcode::Mov:
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::Cmp:
      os << opcode_name(ins.op) << ' ' << operand_text(ins.a) << ", "
         << operand_text(ins.b);
      break;
    case Opcode::Jmp:
    case Opcode::Je:
    case Opcode::Jne:
    case Opcode::Call:
      os << opcode_name(ins.op) << ' ' << ins.target;
      break;
    case Opcode::Ret:
    case Opcode::Halt:
      os << opcode_name(ins.op);
      break;
    case Opcode::Alloc:
      os << "alloc " << reg_name(ins.reg) << ", @" << ins.site << ", "
         << ins.alloc_size;
      break;
    case Opcode::Lock:
    case Opcode::Unlock:
    case Opcode::Join:
      os << opcode_name(ins.op) << ' ' << operand_text(ins.a);
      break;
    case Opcode::Spawn:
      os << "spawn " << reg_name(ins.reg) << ", " << ins.target;
      break;
    case Opcode::Ptwrite:
      os << (ins.attach == PtwAttach::Before ? "ptwrite " : "ptwrite.after ");
      if (ins.has_reg) os << reg_name(ins.reg) << ", ";
      os << '#' << ins.ptw_id;
      break;
  }
  return os.str();
}

std::string print_program(const Program& p) {
  std::ostringstream os;
  for (const auto& g : p.globals)
    os << "global g" << g.address << " size " << g.size << '\n';
  os << "entry " << p.entry << '\n';
  for (const auto& f : p.functions) {
    os << "\nfn " << f.name << " {\n";
    for (const auto& ins : f.body) os << "  " << print_instruction(ins) << '\n';
    os << "}\n";
  }
  return os.str();
}

nlohmann::json program_to_json(const Program& p) {
  nlohmann::json j;
  j["entry"] = p.entry;
  j["globals"] = nlohmann::json::array();
  for (const auto& g : p.globals)
    j["globals"].push_back({{"address", g.address}, {"size", g.size}});
  j["instructions"] = nlohmann::json::array();
  for (std::uint32_t f = 0; f < p.functions.size(); ++f) {
    for (std::uint32_t i = 0; i < p.functions[f].body.size(); ++i) {
      const auto& ins = p.functions[f].body[i];
      j["instructions"].push_back({{"id", p.instr_id({f, i})},
                                   {"function", p.functions[f].name},
                                   {"index", i},
                                   {"op", opcode_name(ins.op)},
                                   {"text", print_instruction(ins)}});
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// ICFG

Icfg::Icfg(const Program& p) {
  offsets_.resize(p.functions.size());
  call_sites_.resize(p.functions.size());
  std::uint32_t n = 0;
  for (std::uint32_t f = 0; f < p.functions.size(); ++f) {
    offsets_[f] = n;
    for (std::uint32_t i = 0; i < p.functions[f].body.size(); ++i)
      refs_.push_back({f, i});
    n += static_cast<std::uint32_t>(p.functions[f].body.size());
  }
  succ_.resize(n);
  pred_.resize(n);

  auto add = [&](NodeId from, NodeId to, EdgeKind k) {
    succ_[from].push_back({from, to, k});
    pred_[to].push_back({from, to, k});
  };

  // Return edges need every call site, so collect those first.
  for (NodeId id = 0; id < n; ++id) {
    const auto& ins = p.at(refs_[id]);
    if (ins.op == Opcode::Call)
      call_sites_[*p.function_index(ins.target)].push_back(id);
  }

  for (NodeId id = 0; id < n; ++id) {
    const InstrRef r = refs_[id];
    const auto& ins = p.at(r);
    const NodeId next = id + 1;
    switch (ins.op) {
      case Opcode::Jmp:
        add(id, offsets_[r.func] + static_cast<NodeId>(ins.resolved), EdgeKind::Branch);
        break;
      case Opcode::Je:
      case Opcode::Jne:
        add(id, next, EdgeKind::Fallthrough);
        add(id, offsets_[r.func] + static_cast<NodeId>(ins.resolved), EdgeKind::Branch);
        break;
      case Opcode::Ret:
        for (NodeId site : call_sites_[r.func]) add(id, site + 1, EdgeKind::Return);
        break;
      case Opcode::Halt:
        break;
      case Opcode::Call:
        add(id, next, EdgeKind::Fallthrough);
        add(id, offsets_[*p.function_index(ins.target)], EdgeKind::Call);
        break;
      case Opcode::Spawn:
        add(id, next, EdgeKind::Fallthrough);
        add(id, offsets_[*p.function_index(ins.target)], EdgeKind::Spawn);
        break;
      default:
        add(id, next, EdgeKind::Fallthrough);
        break;
    }
  }
}

std::vector<NodeId> Icfg::intra_successors(NodeId n) const {
  std::vector<NodeId> out;
  for (const auto& e : succ_[n])
    if (e.kind == EdgeKind::Fallthrough || e.kind == EdgeKind::Branch)
      out.push_back(e.to);
  return out;
}

std::vector<NodeId> Icfg::intra_predecessors(NodeId n) const {
  std::vector<NodeId> out;
  for (const auto& e : pred_[n])
    if (e.kind == EdgeKind::Fallthrough || e.kind == EdgeKind::Branch)
      out.push_back(e.from);
  return out;
}

Icfg build_icfg(const Program& p) { return Icfg(p); }

}  // namespace tracerace
