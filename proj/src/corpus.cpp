#include "tracerace/corpus.hpp"

#include <algorithm>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>

namespace tracerace {

namespace {

constexpr std::uint64_t kLocks[] = {4096, 4160};
constexpr std::uint64_t kData[] = {8192, 8256, 8320, 8384};
constexpr std::uint64_t kReadOnly = 12288;
constexpr std::uint64_t kPointer = 12352;
constexpr int kPatternCount = 7;

std::string g(std::uint64_t a) { return "g" + std::to_string(a); }

class Builder {
 public:
  Builder(std::mt19937_64& rng, int& site_counter) : rng_(rng), sites_(site_counter) {}

  void begin(const std::string& fn, const std::string& prefix) {
    out_ << "fn " << fn << " {\n";
    prefix_ = prefix;
    n_ = 0;
  }
  void end(const std::string& last) {
    emit(last);
    out_ << "}\n\n";
  }
  std::string emit(const std::string& ins) {
    std::string l = prefix_ + std::to_string(n_++);
    out_ << "  " << l << ": " << ins << "\n";
    return l;
  }
  std::string next_label() const { return prefix_ + std::to_string(n_); }
  std::uint64_t pick(std::uint64_t n) { return rng_() % n; }

  void block(Pattern p) {
    const std::uint64_t data = kData[pick(4)];
    const std::int64_t off = static_cast<std::int64_t>(8 * pick(4));
    switch (p) {
      case Pattern::LockGuarded: {
        const std::uint64_t lock = kLocks[data == kData[0] || data == kData[1] ? 0 : 1];
        if (pick(2)) {
          emit("mov r2, " + g(data));
          emit("lock " + g(lock));
          emit("mov r1, [r2+" + std::to_string(off) + "]");
          emit("add r1, 1");
          emit("mov [r2+" + std::to_string(off) + "], r1");
        } else {
          emit("lock " + g(lock));
          emit("mov r1, [" + g(data) + "+" + std::to_string(off) + "]");
          emit("add r1, 1");
          emit("mov [" + g(data) + "+" + std::to_string(off) + "], r1");
        }
        emit("unlock " + g(lock));
        break;
      }
      case Pattern::Unguarded:
        emit("mov r2, " + g(data));
        emit("mov r1, [r2+" + std::to_string(off) + "]");
        if (pick(2)) {
          emit("add r1, 2");
          emit("mov [r2+" + std::to_string(off) + "], r1");
        }
        break;
      case Pattern::ReadOnly:
        if (pick(2)) {
          emit("mov r1, [" + g(kReadOnly) + "]");
        } else {
          emit("mov r2, " + g(kReadOnly));
          emit("cmp [r2+0], 0");
        }
        break;
      case Pattern::OwnedHeap:
        emit("alloc r2, @s" + std::to_string(sites_++) + ", 64");
        emit("mov [r2+0], r1");
        emit("mov r3, [r2+8]");
        emit("add r3, r1");
        emit("mov [r2+16], r3");
        break;
      case Pattern::StackOnly:
        emit("mov [fp-8], r1");
        emit("mov r3, [fp-8]");
        emit("add r3, 3");
        emit("mov [fp-16], r3");
        emit("mov r1, [fp-16]");
        break;
      case Pattern::Derived: {
        const bool guarded = pick(2) == 0;
        if (guarded) emit("lock " + g(kLocks[1]));
        emit("mov r2, [" + g(kPointer) + "]");
        emit("mov r1, [r2+0]");
        emit("add r1, 1");
        emit("mov [r2+8], r1");
        emit("add r2, 16");
        emit("mov r3, [r2+0]");
        emit("mov [r2+24], r3");
        if (guarded) emit("unlock " + g(kLocks[1]));
        break;
      }
      case Pattern::Helper:
        emit("mov r2, [" + g(kPointer) + "]");
        emit("call helper");
        break;
    }
  }

  std::string take() { return out_.str(); }

 private:
  std::mt19937_64& rng_;
  int& sites_;
  std::ostringstream out_;
  std::string prefix_;
  int n_ = 0;
};

// Worker body: blocks, some wrapped in a counted loop on r6.
std::vector<Pattern> worker_body(Builder& b, std::optional<Pattern> forced) {
  std::vector<Pattern> used;
  const int blocks = 2 + static_cast<int>(b.pick(4));
  for (int i = 0; i < blocks; ++i) {
    Pattern p = static_cast<Pattern>(b.pick(kPatternCount));
    if (i == 0 && forced) p = *forced;
    used.push_back(p);
    if (b.pick(3) == 0) {
      b.emit("mov r6, 0");
      const std::string head = b.next_label();
      b.block(p);
      b.emit("add r6, 1");
      b.emit("cmp r6, " + std::to_string(2 + b.pick(3)));
      b.emit("jne " + head);
    } else {
      b.block(p);
    }
  }
  return used;
}

std::string header() {
  std::ostringstream os;
  for (auto l : kLocks) os << "global " << g(l) << " size 8\n";
  for (auto d : kData) os << "global " << g(d) << " size 64\n";
  os << "global " << g(kReadOnly) << " size 8\n";
  os << "global " << g(kPointer) << " size 8\n\n";
  return os.str();
}

GeneratedProgram generate(std::uint64_t seed, std::optional<Pattern> forced) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 17);
  int sites = 0;
  GeneratedProgram gp;
  gp.name = "gen" + std::to_string(seed);
  const int workers = 2 + static_cast<int>(rng() % 2);
  std::string body;
  bool helper = false;
  const char* tid_regs[] = {"r4", "r5", "r7"};
  for (int w = 0; w < workers; ++w) {
    Builder b(rng, sites);
    b.begin("w" + std::to_string(w), "w" + std::to_string(w) + "_");
    auto used = worker_body(b, w == 0 ? forced : std::nullopt);
    b.end("ret");
    body += b.take();
    for (auto p : used) helper |= p == Pattern::Helper;
    gp.patterns.insert(gp.patterns.end(), used.begin(), used.end());
  }
  if (helper) {
    body +=
        "fn helper {\n"
        "  h0: mov r1, [r2+32]\n"
        "  h1: add r1, 1\n"
        "  h2: mov [r2+32], r1\n"
        "  h3: ret\n"
        "}\n\n";
  }
  Builder m(rng, sites);
  m.begin("main", "m");
  m.emit("alloc r3, @buf, 128");
  m.emit("mov [" + g(kPointer) + "], r3");
  for (int w = 0; w < workers; ++w)
    m.emit(std::string("spawn ") + tid_regs[w] + ", w" + std::to_string(w));
  if (rng() % 2) {
    Pattern p = static_cast<Pattern>(rng() % kPatternCount);
    if (p == Pattern::Helper && !helper) p = Pattern::Unguarded;
    m.block(p);
    gp.patterns.push_back(p);
  }
  for (int w = 0; w < workers; ++w) m.emit(std::string("join ") + tid_regs[w]);
  m.end("halt");
  gp.text = header() + body + m.take();
  std::sort(gp.patterns.begin(), gp.patterns.end());
  gp.patterns.erase(std::unique(gp.patterns.begin(), gp.patterns.end()), gp.patterns.end());
  return gp;
}

}  // namespace

GeneratedProgram generate_program(std::uint64_t seed) {
  return generate(seed, static_cast<Pattern>(seed % kPatternCount));
}

std::vector<GeneratedProgram> generate_corpus(std::size_t count, std::uint64_t first) {
  std::vector<GeneratedProgram> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_program(first + i));
  return out;
}

namespace {

const char* kSpawnTwo =
    "fn main {\n"
    "  m0: spawn r4, w\n"
    "  m1: spawn r5, w\n"
    "  m2: join r4\n"
    "  m3: join r5\n"
    "  m4: halt\n"
    "}\n";

std::vector<Fixture> make_fixtures() {
  std::vector<Fixture> f;
  f.push_back({"two_writers",
               "global g8 size 8\n\n"
               "fn w {\n"
               "  a0: mov r1, 1\n"
               "  a1: mov [g8], r1\n"
               "  a2: ret\n"
               "}\n\n" +
                   std::string(kSpawnTwo)});
  f.push_back({"lock_guarded",
               "global g4096 size 8\n"
               "global g8192 size 64\n\n"
               "fn w {\n"
               "  a0: mov r6, 0\n"
               "  a1: lock g4096\n"
               "  a2: mov r1, [g8192]\n"
               "  a3: add r1, 1\n"
               "  a4: mov [g8192], r1\n"
               "  a5: mov r2, g8192\n"
               "  a6: mov r3, [r2+8]\n"
               "  a7: mov [r2+8], r1\n"
               "  a8: unlock g4096\n"
               "  a9: add r6, 1\n"
               "  a10: cmp r6, 3\n"
               "  a11: jne a1\n"
               "  a12: ret\n"
               "}\n\n" +
                   std::string(kSpawnTwo)});
  f.push_back({"owned_heap",
               "global g8192 size 64\n\n"
               "fn w {\n"
               "  a0: alloc r2, @obj, 32\n"
               "  a1: mov r1, 5\n"
               "  a2: mov [r2+0], r1\n"
               "  a3: mov r3, [r2+0]\n"
               "  a4: add r3, 1\n"
               "  a5: mov [r2+8], r3\n"
               "  a6: mov [g8192], r3\n"
               "  a7: ret\n"
               "}\n\n" +
                   std::string(kSpawnTwo)});
  f.push_back({"stack_only",
               "global g8192 size 64\n\n"
               "fn w {\n"
               "  a0: mov r1, 7\n"
               "  a1: mov [fp-8], r1\n"
               "  a2: mov r3, [fp-8]\n"
               "  a3: add r3, 1\n"
               "  a4: mov [fp-16], r3\n"
               "  a5: mov r2, fp\n"
               "  a6: mov r1, [r2-16]\n"
               "  a7: mov [g8192], r1\n"
               "  a8: ret\n"
               "}\n\n" +
                   std::string(kSpawnTwo)});
  f.push_back({"unguarded",
               "global g8192 size 64\n\n"
               "fn w {\n"
               "  a0: mov r1, [g8192]\n"
               "  a1: add r1, 1\n"
               "  a2: mov [g8192], r1\n"
               "  a3: ret\n"
               "}\n\n" +
                   std::string(kSpawnTwo)});
  f.push_back({"derived",
               "global g12352 size 8\n\n"
               "fn w {\n"
               "  a0: mov r2, [g12352]\n"
               "  a1: mov r1, [r2+8]\n"
               "  a2: mov r3, [r2+12]\n"
               "  a3: add r1, r3\n"
               "  a4: mov [r2+16], r1\n"
               "  a5: ret\n"
               "}\n\n"
               "fn main {\n"
               "  m0: alloc r3, @buf, 64\n"
               "  m1: mov [g12352], r3\n"
               "  m2: spawn r4, w\n"
               "  m3: spawn r5, w\n"
               "  m4: join r4\n"
               "  m5: join r5\n"
               "  m6: halt\n"
               "}\n"});
  // Dense inner loop whose accesses are all lock-guarded or thread-owned.
  f.push_back({"stress",
               "global g4096 size 8\n"
               "global g8192 size 64\n\n"
               "fn w {\n"
               "  a0: alloc r3, @scratch, 64\n"
               "  a1: mov r6, 0\n"
               "  a2: lock g4096\n"
               "  a3: mov r1, [g8192]\n"
               "  a4: add r1, 1\n"
               "  a5: mov [g8192], r1\n"
               "  a6: mov r2, [r3+0]\n"
               "  a7: mov [r3+8], r2\n"
               "  a8: mov r2, [r3+16]\n"
               "  a9: mov [r3+24], r2\n"
               "  a10: unlock g4096\n"
               "  a11: add r6, 1\n"
               "  a12: cmp r6, 40\n"
               "  a13: jne a2\n"
               "  a14: ret\n"
               "}\n\n" +
                   std::string(kSpawnTwo)});
  return f;
}

}  // namespace

const std::vector<Fixture>& fixtures() {
  static const std::vector<Fixture> f = make_fixtures();
  return f;
}

const Fixture& fixture(const std::string& name) {
  for (const auto& f : fixtures())
    if (f.name == name) return f;
  throw std::out_of_range("unknown fixture '" + name + "'");
}

}  // namespace tracerace
