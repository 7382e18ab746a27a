#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tracerace {

// Access patterns a generated program mixes.
enum class Pattern : std::uint8_t {
  LockGuarded, OwnedHeap, StackOnly, Derived, Unguarded, ReadOnly, Helper
};

struct GeneratedProgram {
  std::string name;
  std::string text;
  std::vector<Pattern> patterns;
};

// Deterministic random multithreaded program for `seed`.
GeneratedProgram generate_program(std::uint64_t seed);

// generate_program(first) .. generate_program(first + count - 1), with
// every pattern present somewhere in the batch.
std::vector<GeneratedProgram> generate_corpus(std::size_t count, std::uint64_t first = 0);

struct Fixture {
  std::string name;
  std::string text;
};

// Hand-written programs: two_writers, lock_guarded, owned_heap, stack_only,
// unguarded, derived, stress.
const std::vector<Fixture>& fixtures();
const Fixture& fixture(const std::string& name);

}  // namespace tracerace
