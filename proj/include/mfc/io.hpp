#pragma once

#include <string>

#include "mfc/fbsde.hpp"
#include "mfc/format.hpp"

namespace mfc {

// One row per (knot, particle): Y, P, Q (column j*n + a is component a of
// Q^j), v. The control is empty on the terminal knot.
std::string solution_to_csv(const FbsdeSolution& sol, int n, int d);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace mfc
