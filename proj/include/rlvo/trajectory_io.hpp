#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "rlvo/geometry.hpp"

namespace rlvo {

// TUM trajectory text format: "timestamp tx ty tz qx qy qz qw" per line,
// whitespace separated, '#' starts a comment line. Throws ParseError with the
// 1-based line number.
Trajectory read_tum(std::istream& in);
Trajectory read_tum(const std::filesystem::path& path);

// Values are written with 17 significant digits so a write/read cycle is exact.
// `comments` are emitted as leading '#' lines.
void write_tum(std::ostream& out, const Trajectory& trajectory,
               const std::vector<std::string>& comments = {});
void write_tum(const std::filesystem::path& path, const Trajectory& trajectory,
               const std::vector<std::string>& comments = {});

// "%.9g" formatting used by every CSV output.
std::string format_csv_number(double value);

}  // namespace rlvo
