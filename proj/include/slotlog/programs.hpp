#pragma once

// Generators for the program families used by the experiments. All of them
// bind the perception heads through the same interface: `object/i` for the
// objectness of slot i and `class/i` (members `class/i/k`) for its class
// distribution.

#include <string>

namespace slotlog {

enum class AdditionEncoding {
  /// digit(ID, V) defaults absent slots to 0; add(Z) sums all slots at once.
  DefaultZero,
  /// Objectness-conditioned digits and a per-slot accumulator chain; the query
  /// is addition(input, Z).
  AccumulatorChain,
};

std::string addition_program(int slots, int classes, AdditionEncoding encoding = AdditionEncoding::DefaultZero);
/// Query pattern of the addition family for an encoding.
std::string addition_query(AdditionEncoding encoding);

/// pair_label(1) iff two objects share a class, else pair_label(0).
std::string pair_program(int slots, int classes);

/// count(Z) with Z the number of objects.
std::string count_program(int slots, int classes);

}  // namespace slotlog
