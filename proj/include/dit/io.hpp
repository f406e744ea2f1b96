#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ios>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dit/geometry.hpp"
#include "dit/sampling.hpp"

namespace dit::io {

namespace fs = std::filesystem;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One point per line, three whitespace-separated numbers; '#' lines and
/// blank lines are skipped.
inline PointCloud parse_xyz(std::istream& in, const std::string& origin = "<stream>") {
  std::vector<Vec3> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x() >> p.y() >> p.z()))
      throw FormatError(origin + ":" + std::to_string(lineno) + ": expected three numbers");
    std::string extra;
    if (ls >> extra) throw FormatError(origin + ":" + std::to_string(lineno) + ": trailing data '" + extra + "'");
    if (!p.allFinite()) throw FormatError(origin + ":" + std::to_string(lineno) + ": non-finite coordinate");
    pts.push_back(p);
  }
  Points out(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return PointCloud(std::move(out));
}

inline PointCloud read_xyz(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_xyz(in, path.string());
}

inline void write_xyz(std::ostream& out, const PointCloud& cloud) {
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i)
    out << cloud.points(i, 0) << ' ' << cloud.points(i, 1) << ' ' << cloud.points(i, 2) << '\n';
}

inline void write_xyz(const fs::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_xyz(out, cloud);
}

/// 4x4 row-major homogeneous matrix, 17 significant digits.
inline void write_transform(std::ostream& out, const RigidTransform& t) {
  const Mat4 m = t.matrix();
  out << std::setprecision(17);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) out << (c ? " " : "") << m(r, c);
    out << '\n';
  }
}

inline std::string format_transform(const RigidTransform& t) {
  std::ostringstream s;
  write_transform(s, t);
  return s.str();
}

inline RigidTransform parse_transform(std::istream& in, const std::string& origin = "<stream>") {
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      if (!(in >> m(r, c))) throw FormatError(origin + ": expected a 4x4 matrix");
  return RigidTransform::from_matrix(m);
}

inline RigidTransform read_transform(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_transform(in, path.string());
}

inline void write_transform(const fs::path& path, const RigidTransform& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_transform(out, t);
}

/// Pair directory: src.xyz, tgt.xyz, gt.txt. Optional extras written by
/// `gen`: corr.txt (target index per source point, -1 when removed) and
/// src_clean.xyz / tgt_clean.xyz for noisy modes.
inline void write_pair(const fs::path& dir, const PairSample& s) {
  fs::create_directories(dir);
  write_xyz(dir / "src.xyz", s.src);
  write_xyz(dir / "tgt.xyz", s.tgt);
  write_transform(dir / "gt.txt", s.ground_truth);
  std::ofstream corr(dir / "corr.txt");
  for (const auto& c : s.gt_correspondence) corr << (c ? static_cast<long long>(*c) : -1LL) << '\n';
  const bool noisy = s.src_clean.points != s.src.points || s.tgt_clean.points != s.tgt.points;
  if (noisy) {
    write_xyz(dir / "src_clean.xyz", s.src_clean);
    write_xyz(dir / "tgt_clean.xyz", s.tgt_clean);
  }
}

inline PairSample read_pair(const fs::path& dir) {
  PairSample s;
  s.src = read_xyz(dir / "src.xyz");
  s.tgt = read_xyz(dir / "tgt.xyz");
  s.ground_truth = read_transform(dir / "gt.txt");
  s.src_clean = fs::exists(dir / "src_clean.xyz") ? read_xyz(dir / "src_clean.xyz") : s.src;
  s.tgt_clean = fs::exists(dir / "tgt_clean.xyz") ? read_xyz(dir / "tgt_clean.xyz") : s.tgt;
  if (fs::exists(dir / "corr.txt")) {
    std::ifstream in(dir / "corr.txt");
    long long v;
    while (in >> v) {
      if (v >= 0) {
        if (static_cast<std::size_t>(v) >= s.tgt.size()) throw FormatError((dir / "corr.txt").string() + ": index out of range");
        s.gt_correspondence.emplace_back(static_cast<std::size_t>(v));
      } else {
        s.gt_correspondence.emplace_back(std::nullopt);
      }
    }
    if (s.gt_correspondence.size() != s.src.size()) throw FormatError((dir / "corr.txt").string() + ": length mismatch");
  }
  return s;
}

/// Sorted list of pair directories (those containing src.xyz) under `root`.
inline std::vector<fs::path> list_pairs(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "src.xyz")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace dit::io
