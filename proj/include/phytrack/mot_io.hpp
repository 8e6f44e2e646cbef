#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace phytrack {

// One MOTChallenge text row:
// frame,id,left,top,width,height,conf,class,visibility
struct MotRow {
  int frame = 0;  // 1-based
  int id = 0;
  double left = 0, top = 0, width = 0, height = 0;
  double conf = 1.0;
  int class_id = 0;
  double visibility = 1.0;

  bool operator==(const MotRow&) const = default;
};

inline std::string format_mot_row(const MotRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%d,%.2f,%.2f,%.2f,%.2f,%.2f,%d,%.2f",
                r.frame, r.id, r.left, r.top, r.width, r.height, r.conf,
                r.class_id, r.visibility);
  return buf;
}

inline void write_mot(const std::vector<MotRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write MOT file: " + path);
  for (const auto& r : rows) f << format_mot_row(r) << "\n";
  if (!f) throw std::runtime_error("short write on MOT file: " + path);
}

// Parses a MOT file. Malformed lines raise with the 1-based line number;
// non-monotone frame indices are legal but reported through `warnings`.
inline std::vector<MotRow> read_mot(const std::string& path,
                                    std::vector<std::string>* warnings = nullptr) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open MOT file: " + path);
  std::vector<MotRow> rows;
  std::string line;
  int lineno = 0;
  int prev_frame = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    MotRow r;
    char extra;
    const int n = std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf,%lf,%lf,%d,%lf %c",
                              &r.frame, &r.id, &r.left, &r.top, &r.width,
                              &r.height, &r.conf, &r.class_id, &r.visibility,
                              &extra);
    if (n != 9)
      throw std::runtime_error(path + ": malformed MOT row at line " +
                               std::to_string(lineno));
    if (r.frame < prev_frame && warnings)
      warnings->push_back(path + ": non-monotone frame index at line " +
                          std::to_string(lineno));
    prev_frame = r.frame;
    rows.push_back(r);
  }
  return rows;
}

// seqinfo.txt: flat key=value lines (width, height, length, framerate).
struct SeqInfo {
  int width = 0, height = 0, length = 0;
  double framerate = 30.0;
};

inline void write_seqinfo(const SeqInfo& info, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write seqinfo: " + path);
  f << "width=" << info.width << "\n"
    << "height=" << info.height << "\n"
    << "length=" << info.length << "\n"
    << "framerate=" << info.framerate << "\n";
}

inline SeqInfo read_seqinfo(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open seqinfo: " + path);
  SeqInfo info;
  std::string line;
  while (std::getline(f, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "width") info.width = std::stoi(val);
    else if (key == "height") info.height = std::stoi(val);
    else if (key == "length") info.length = std::stoi(val);
    else if (key == "framerate") info.framerate = std::stod(val);
  }
  return info;
}

// img1/NNNNNN.png, 6-digit 1-based frame numbers.
inline std::string frame_filename(int frame_index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", frame_index);
  return buf;
}

// Sorted list of img1/*.png paths for a sequence directory.
inline std::vector<std::string> list_sequence_frames(const std::string& seq_dir) {
  namespace fs = std::filesystem;
  const fs::path img_dir = fs::path(seq_dir) / "img1";
  std::vector<std::string> frames;
  if (fs::is_directory(img_dir))
    for (const auto& e : fs::directory_iterator(img_dir))
      if (e.path().extension() == ".png") frames.push_back(e.path().string());
  std::sort(frames.begin(), frames.end());
  return frames;
}

}  // namespace phytrack
