#pragma once

#include <string>
#include <vector>

namespace mfc {

// Shortest representation that round-trips to the same double.
std::string format_double(double x);

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace mfc
