#include "slotlog/programs.hpp"

#include <sstream>

namespace slotlog {

namespace {

void head_interface(std::ostringstream& os, int slots, int classes, const char* obj_atom, const char* class_atom) {
  os << "@external(";
  for (int i = 0; i < slots; ++i) os << (i ? ", " : "") << "object/" << i << ", class/" << i;
  os << ").\n";
  for (int i = 0; i < slots; ++i) {
    os << "object/" << i << "::" << obj_atom << i << ").\n";
    for (int k = 0; k < classes; ++k)
      os << "@group(slot" << i << ") class/" << i << "/" << k << "::" << class_atom << i << ", " << k << ").\n";
  }
}

void basic_interface(std::ostringstream& os, int slots, int classes) {
  head_interface(os, slots, classes, "object(", "class(");
}

std::string ids(int n, const char* prefix = "ID") {
  std::string s;
  for (int i = 0; i < n; ++i) s += (i ? ", " : "") + std::string(prefix) + std::to_string(i);
  return s;
}

}  // namespace

std::string addition_program(int slots, int classes, AdditionEncoding encoding) {
  std::ostringstream os;
  if (encoding == AdditionEncoding::DefaultZero) {
    basic_interface(os, slots, classes);
    os << "digit(ID, V) :- object(ID), class(ID, V).\n";
    os << "digit(ID, 0) :- \\+ object(ID).\n";
    os << "add(Z) :- ";
    for (int i = 0; i < slots; ++i) os << "digit(" << i << ", Y" << i << "), ";
    os << "Z is ";
    if (slots == 0) os << "0";
    for (int i = 0; i < slots; ++i) os << (i ? " + " : "") << "Y" << i;
    os << ".\n?- add(Z).\n";
    return os.str();
  }
  head_interface(os, slots, classes, "isobj_tmp(input, ", "digit_tmp(input, ");
  os << "digit(X, ID, Y) :- isobj_tmp(X, ID), digit_tmp(X, ID, Y).\n";
  for (int m = 1; m <= slots; ++m) {
    const std::string last = "ID" + std::to_string(m - 1);
    const std::string args = ids(m);
    if (m == 1) {
      os << "addit(X, ID0, SumIn, SumOut) :- isobj_tmp(X, ID0), digit(X, ID0, C), SumOut is SumIn + C.\n";
      os << "addit(X, ID0, SumIn, SumIn) :- not(isobj_tmp(X, ID0)).\n";
      continue;
    }
    const std::string rest = ids(m - 1);
    os << "addit(X, " << args << ", SumIn, SumOut) :- isobj_tmp(X, " << last << "), digit(X, " << last
       << ", C), Y is SumIn + C, addit(X, " << rest << ", Y, SumOut).\n";
    os << "addit(X, " << args << ", SumIn, SumOut) :- not(isobj_tmp(X, " << last << ")), addit(X, " << rest
       << ", SumIn, SumOut).\n";
  }
  os << "addition(X, Z) :- addit(X, ";
  for (int i = 0; i < slots; ++i) os << i << ", ";
  os << "0, Z).\n?- addition(input, Z).\n";
  return os.str();
}

std::string addition_query(AdditionEncoding encoding) {
  return encoding == AdditionEncoding::DefaultZero ? "add(Z)" : "addition(input, Z)";
}

std::string pair_program(int slots, int classes) {
  std::ostringstream os;
  basic_interface(os, slots, classes);
  os << "pair :- object(I), object(J), I < J, class(I, C), class(J, C).\n";
  os << "pair_label(1) :- pair.\n";
  os << "pair_label(0) :- \\+ pair.\n";
  os << "?- pair_label(L).\n";
  return os.str();
}

std::string count_program(int slots, int classes) {
  std::ostringstream os;
  basic_interface(os, slots, classes);
  os << "present(ID, 1) :- object(ID).\n";
  os << "present(ID, 0) :- \\+ object(ID).\n";
  os << "count(Z) :- ";
  for (int i = 0; i < slots; ++i) os << "present(" << i << ", N" << i << "), ";
  os << "Z is ";
  if (slots == 0) os << "0";
  for (int i = 0; i < slots; ++i) os << (i ? " + " : "") << "N" << i;
  os << ".\n?- count(Z).\n";
  return os.str();
}

}  // namespace slotlog
