#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mib/errors.hpp"
#include "mib/motion.hpp"
#include "mib/rotations.hpp"

// CSV ingestion/export. Pose files carry the root position and per-joint
// local quaternions; position files carry global joint positions. Row
// numbers in error messages are 1-based file line numbers (header = row 1).

namespace mib {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim surrounding whitespace
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_cell(const std::string& cell, int row, const std::string& col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing junk");
    if (std::isnan(v))
      throw DataError("csv: NaN value in column '" + col + "' at row " +
                      std::to_string(row));
    return v;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception&) {
    throw DataError("csv: cannot parse '" + cell + "' in column '" + col +
                    "' at row " + std::to_string(row));
  }
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;  // parsed values
  std::vector<int> line_numbers;          // file line per data row

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw DataError("csv: missing column '" + name + "'");
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("csv: cannot open " + path.string());
  CsvTable t;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (line_no == 1 || t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw DataError("csv: row " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(t.header.size()));
    std::vector<double> vals(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c)
      vals[c] = parse_cell(cells[c], line_no, t.header[c]);
    t.rows.push_back(std::move(vals));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw DataError("csv: " + path.string() + " is empty");
  return t;
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Pose CSV schema: frame, root_px, root_py, root_pz, then per joint i the
// quaternion columns j{i}_qw, j{i}_qx, j{i}_qy, j{i}_qz.
inline void save_csv(const std::filesystem::path& path, const MotionSequence& seq) {
  std::ofstream out(path);
  if (!out) throw DataError("csv: cannot write " + path.string());
  out << "frame,root_px,root_py,root_pz";
  for (int k = 0; k < seq.joint_count(); ++k)
    out << ",j" << k << "_qw,j" << k << "_qx,j" << k << "_qy,j" << k << "_qz";
  out << "\n";
  for (int f = 0; f < seq.frame_count(); ++f) {
    const auto& pose = seq.frames[f];
    out << f << ',' << detail::fmt_double(pose.root_pos.x()) << ','
        << detail::fmt_double(pose.root_pos.y()) << ','
        << detail::fmt_double(pose.root_pos.z());
    for (int k = 0; k < seq.joint_count(); ++k) {
      const Quatd q = matrix_to_quaternion(rot6_to_matrix(pose.rot[k]));
      out << ',' << detail::fmt_double(q.w) << ',' << detail::fmt_double(q.x) << ','
          << detail::fmt_double(q.y) << ',' << detail::fmt_double(q.z);
    }
    out << "\n";
  }
}

inline MotionSequence load_csv(const std::filesystem::path& path,
                               const Skeleton& skeleton, double frame_rate = 30.0) {
  skeleton.validate();
  const auto table = detail::read_csv(path);
  const int j = skeleton.joint_count();
  const int c_frame = table.column("frame");
  const int c_px = table.column("root_px");
  const int c_py = table.column("root_py");
  const int c_pz = table.column("root_pz");
  std::vector<std::array<int, 4>> c_q(j);
  for (int k = 0; k < j; ++k) {
    const std::string base = "j" + std::to_string(k);
    c_q[k] = {table.column(base + "_qw"), table.column(base + "_qx"),
              table.column(base + "_qy"), table.column(base + "_qz")};
  }

  MotionSequence seq;
  seq.skeleton = skeleton;
  seq.frame_rate = frame_rate;
  std::vector<std::vector<Quatd>> tracks(j);
  double prev_frame = -1;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const int line = table.line_numbers[r];
    if (row[c_frame] <= prev_frame)
      throw DataError("csv: frame indices must increase at row " + std::to_string(line));
    prev_frame = row[c_frame];
    Pose pose;
    pose.root_pos = {row[c_px], row[c_py], row[c_pz]};
    for (int k = 0; k < j; ++k) {
      Quatd q{row[c_q[k][0]], row[c_q[k][1]], row[c_q[k][2]], row[c_q[k][3]]};
      if (std::abs(q.norm() - 1.0) > 1e-3)
        throw DataError("csv: non-unit quaternion for joint " + std::to_string(k) +
                        " at row " + std::to_string(line));
      tracks[k].push_back(q.normalized());
    }
    pose.rot.resize(j);
    seq.frames.push_back(std::move(pose));
  }
  // sign-continuity fix per joint track, then convert to ortho6D
  for (int k = 0; k < j; ++k) {
    fix_quaternion_signs(tracks[k]);
    for (std::size_t f = 0; f < tracks[k].size(); ++f)
      seq.frames[f].rot[k] = matrix_to_rot6(quaternion_to_matrix(tracks[k][f]));
  }
  seq.validate();
  return seq;
}

// Position CSV schema: frame, then per joint i the columns j{i}_px/_py/_pz.
inline void save_position_csv(const std::filesystem::path& path,
                              const PositionSequence& seq) {
  std::ofstream out(path);
  if (!out) throw DataError("csv: cannot write " + path.string());
  out << "frame";
  for (int k = 0; k < seq.joints; ++k)
    out << ",j" << k << "_px,j" << k << "_py,j" << k << "_pz";
  out << "\n";
  for (int f = 0; f < seq.frame_count(); ++f) {
    out << f;
    for (int k = 0; k < seq.joints; ++k)
      out << ',' << detail::fmt_double(seq.frames[f][k].x()) << ','
          << detail::fmt_double(seq.frames[f][k].y()) << ','
          << detail::fmt_double(seq.frames[f][k].z());
    out << "\n";
  }
}

inline PositionSequence load_position_csv(const std::filesystem::path& path,
                                          double frame_rate = 30.0) {
  const auto table = detail::read_csv(path);
  // infer joint count from the header
  int j = 0;
  while (true) {
    const std::string base = "j" + std::to_string(j);
    bool found = false;
    for (const auto& h : table.header)
      if (h == base + "_px") found = true;
    if (!found) break;
    ++j;
  }
  if (j == 0) throw DataError("csv: no j{i}_px columns in " + path.string());
  std::vector<std::array<int, 3>> cols(j);
  for (int k = 0; k < j; ++k) {
    const std::string base = "j" + std::to_string(k);
    cols[k] = {table.column(base + "_px"), table.column(base + "_py"),
               table.column(base + "_pz")};
  }
  PositionSequence seq;
  seq.frame_rate = frame_rate;
  seq.joints = j;
  for (const auto& row : table.rows) {
    std::vector<Vec3d> frame(j);
    for (int k = 0; k < j; ++k)
      frame[k] = {row[cols[k][0]], row[cols[k][1]], row[cols[k][2]]};
    seq.frames.push_back(std::move(frame));
  }
  seq.validate();
  return seq;
}

// --- gapped input: empty pose cells mark frames to synthesize ---------------

struct GappedMotion {
  MotionSequence seq;  // missing frames hold identity placeholder poses
  std::vector<int> in_indices;
  std::vector<int> out_indices;
};

// Same schema as save_csv, but a row whose pose cells are ALL empty is a
// missing frame. Mixed rows (some cells empty) are rejected with the row
// number. Key-frame quaternions are validated exactly like load_csv.
inline GappedMotion load_csv_gaps(const std::filesystem::path& path,
                                  const Skeleton& skeleton, double frame_rate = 30.0) {
  skeleton.validate();
  std::ifstream in(path);
  if (!in) throw DataError("csv: cannot open " + path.string());
  const int j = skeleton.joint_count();

  std::vector<std::string> header;
  GappedMotion out;
  out.seq.skeleton = skeleton;
  out.seq.frame_rate = frame_rate;

  std::vector<int> col_of;  // pose columns in schema order
  int c_frame = -1;
  std::vector<std::vector<Quatd>> key_tracks(j);
  std::vector<int> key_rows;
  double prev_frame = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_line(line);
    if (header.empty()) {
      header = std::move(cells);
      auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
          if (header[i] == name) return static_cast<int>(i);
        throw DataError("csv: missing column '" + name + "'");
      };
      c_frame = col("frame");
      col_of = {col("root_px"), col("root_py"), col("root_pz")};
      for (int k = 0; k < j; ++k) {
        const std::string base = "j" + std::to_string(k);
        for (const char* suffix : {"_qw", "_qx", "_qy", "_qz"})
          col_of.push_back(col(base + suffix));
      }
      continue;
    }
    if (cells.size() != header.size())
      throw DataError("csv: row " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(header.size()));
    const double frame = detail::parse_cell(cells[c_frame], line_no, "frame");
    if (frame <= prev_frame)
      throw DataError("csv: frame indices must increase at row " + std::to_string(line_no));
    prev_frame = frame;

    int empty = 0;
    for (int c : col_of) empty += cells[c].empty() ? 1 : 0;
    const int idx = out.seq.frame_count();
    Pose pose;
    pose.rot.assign(j, (Rot6d() << 1, 0, 0, 0, 1, 0).finished());
    if (empty == static_cast<int>(col_of.size())) {
      out.out_indices.push_back(idx);
    } else if (empty == 0) {
      pose.root_pos = {detail::parse_cell(cells[col_of[0]], line_no, "root_px"),
                       detail::parse_cell(cells[col_of[1]], line_no, "root_py"),
                       detail::parse_cell(cells[col_of[2]], line_no, "root_pz")};
      for (int k = 0; k < j; ++k) {
        const int base = 3 + 4 * k;
        Quatd q{detail::parse_cell(cells[col_of[base + 0]], line_no, "qw"),
                detail::parse_cell(cells[col_of[base + 1]], line_no, "qx"),
                detail::parse_cell(cells[col_of[base + 2]], line_no, "qy"),
                detail::parse_cell(cells[col_of[base + 3]], line_no, "qz")};
        if (std::abs(q.norm() - 1.0) > 1e-3)
          throw DataError("csv: non-unit quaternion for joint " + std::to_string(k) +
                          " at row " + std::to_string(line_no));
        key_tracks[k].push_back(q.normalized());
      }
      key_rows.push_back(idx);
      out.in_indices.push_back(idx);
    } else {
      throw DataError("csv: row " + std::to_string(line_no) +
                      " mixes empty and filled pose cells; a frame must be fully "
                      "specified or fully missing");
    }
    out.seq.frames.push_back(std::move(pose));
  }
  if (header.empty()) throw DataError("csv: " + path.string() + " is empty");
  if (out.in_indices.empty()) throw DataError("csv: no key-frames in " + path.string());
  for (int k = 0; k < j; ++k) {
    fix_quaternion_signs(key_tracks[k]);
    for (std::size_t f = 0; f < key_rows.size(); ++f)
      out.seq.frames[key_rows[f]].rot[k] =
          matrix_to_rot6(quaternion_to_matrix(key_tracks[k][f]));
  }
  out.seq.validate();
  return out;
}

// Writes the save_csv schema with empty pose cells on the given rows.
inline void save_csv_gaps(const std::filesystem::path& path, const MotionSequence& seq,
                          const std::vector<int>& missing) {
  std::ofstream out(path);
  if (!out) throw DataError("csv: cannot write " + path.string());
  std::vector<bool> gap(seq.frame_count(), false);
  for (int i : missing) {
    if (i < 0 || i >= seq.frame_count())
      throw ContractError("save_csv_gaps: index out of range");
    gap[i] = true;
  }
  out << "frame,root_px,root_py,root_pz";
  for (int k = 0; k < seq.joint_count(); ++k)
    out << ",j" << k << "_qw,j" << k << "_qx,j" << k << "_qy,j" << k << "_qz";
  out << "\n";
  for (int f = 0; f < seq.frame_count(); ++f) {
    out << f;
    if (gap[f]) {
      for (int c = 0; c < 3 + 4 * seq.joint_count(); ++c) out << ',';
    } else {
      const auto& pose = seq.frames[f];
      out << ',' << detail::fmt_double(pose.root_pos.x()) << ','
          << detail::fmt_double(pose.root_pos.y()) << ','
          << detail::fmt_double(pose.root_pos.z());
      for (int k = 0; k < seq.joint_count(); ++k) {
        const Quatd q = matrix_to_quaternion(rot6_to_matrix(pose.rot[k]));
        out << ',' << detail::fmt_double(q.w) << ',' << detail::fmt_double(q.x) << ','
            << detail::fmt_double(q.y) << ',' << detail::fmt_double(q.z);
      }
    }
    out << "\n";
  }
}

}  // namespace mib
