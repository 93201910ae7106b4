#include "mfc/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace mfc {

std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

std::string solution_to_csv(const FbsdeSolution& sol, int n, int d) {
    std::ostringstream os;
    os << "knot,t,particle";
    for (int a = 0; a < n; ++a) os << ",Y" << a + 1;
    for (int a = 0; a < n; ++a) os << ",P" << a + 1;
    for (int j = 0; j < n; ++j)
        for (int a = 0; a < n; ++a) os << ",Q" << j + 1 << '_' << a + 1;
    for (int a = 0; a < d; ++a) os << ",v" << a + 1;
    os << '\n';
    for (int k = 0; k <= sol.grid.K; ++k)
        for (int i = 0; i < sol.particles(); ++i) {
            os << k << ',' << format_double(sol.grid.time(k)) << ',' << i;
            for (int a = 0; a < n; ++a) os << ',' << format_double(sol.Y[k](i, a));
            for (int a = 0; a < n; ++a) os << ',' << format_double(sol.P[k](i, a));
            for (int c = 0; c < n * n; ++c) os << ',' << format_double(sol.Q[k](i, c));
            for (int a = 0; a < d; ++a) os << ',' << (k < sol.grid.K ? format_double(sol.v[k](i, a)) : "");
            os << '\n';
        }
    return os.str();
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "io", "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io", "io", "cannot write '" + path + "'");
    out << text;
}

}  // namespace mfc
