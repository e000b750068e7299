#include "rlvo/trajectory_io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "rlvo/errors.hpp"

namespace rlvo {

namespace {

std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

Trajectory parse(std::istream& in, const std::string& source) {
  Trajectory trajectory;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;

    std::istringstream fields(line);
    std::vector<double> values;
    std::string token;
    while (fields >> token) {
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(token.c_str(), &end);
      if (end == token.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
        throw ParseError(where(source, line_no) + "invalid number '" + token + "'");
      }
      values.push_back(v);
    }
    if (values.size() != 8) {
      throw ParseError(where(source, line_no) + "expected 8 fields, got " +
                       std::to_string(values.size()));
    }
    const Quat q(values[7], values[4], values[5], values[6]);
    if (q.norm() < 1e-12) throw ParseError(where(source, line_no) + "zero quaternion");
    try {
      trajectory.push_back(Pose(values[0], Vec3(values[1], values[2], values[3]), q));
    } catch (const InvalidTrajectory& e) {
      throw ParseError(where(source, line_no) + e.what());
    }
  }
  return trajectory;
}

}  // namespace

Trajectory read_tum(std::istream& in) { return parse(in, "<stream>"); }

Trajectory read_tum(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trajectory file " + path.string());
  return parse(in, path.string());
}

void write_tum(std::ostream& out, const Trajectory& trajectory,
               const std::vector<std::string>& comments) {
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "# timestamp tx ty tz qx qy qz qw\n";
  char buf[512];
  for (const auto& p : trajectory) {
    const Vec3& t = p.translation();
    const Quat& q = p.rotation();
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  p.timestamp(), t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
    out << buf;
  }
}

void write_tum(const std::filesystem::path& path, const Trajectory& trajectory,
               const std::vector<std::string>& comments) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write trajectory file " + path.string());
  write_tum(out, trajectory, comments);
}

std::string format_csv_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return buf;
}

}  // namespace rlvo
