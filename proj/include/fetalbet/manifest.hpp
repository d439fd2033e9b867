#pragma once

// Dataset manifest: a CSV with header
//   subject_id,stack_path,mask_path,sequence,split
// Relative paths resolve against the manifest's directory.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fetalbet/error.hpp"

namespace fetalbet {

enum class Sequence { T2W, DWI, fMRI };
enum class Split { train, val, test };

inline std::string_view to_string(Sequence s) {
  switch (s) {
    case Sequence::T2W: return "T2W";
    case Sequence::DWI: return "DWI";
    case Sequence::fMRI: return "fMRI";
  }
  return "T2W";
}

inline std::optional<Sequence> try_parse_sequence(std::string_view s) {
  if (s == "T2W") return Sequence::T2W;
  if (s == "DWI") return Sequence::DWI;
  if (s == "fMRI") return Sequence::fMRI;
  return std::nullopt;
}

inline Sequence parse_sequence(std::string_view s) {
  if (auto seq = try_parse_sequence(s)) return *seq;
  throw ValidationError("unknown sequence '" + std::string(s) + "' (expected T2W, DWI or fMRI)");
}

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "' (expected train, val or test)");
}

struct ManifestRow {
  std::string subject_id;
  std::string stack_path;
  std::optional<std::string> mask_path;
  Sequence sequence = Sequence::T2W;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;
  std::filesystem::path base_dir;

  std::string resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path.string() : (base_dir / path).string();
  }
};

inline constexpr std::string_view kManifestHeader = "subject_id,stack_path,mask_path,sequence,split";

namespace detail {

// RFC 4180 subset: quoted fields with doubled quotes, no embedded newlines.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  s.erase(s.find_last_not_of(ws) + 1);
  return s;
}

}  // namespace detail

inline DatasetManifest parse_manifest(std::istream& in, std::filesystem::path base_dir = {}) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("manifest is empty");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  std::vector<std::string> header;
  for (auto& f : detail::split_csv_line(line)) header.push_back(detail::trim(f));
  const std::vector<std::string> expected{"subject_id", "stack_path", "mask_path", "sequence", "split"};
  if (header != expected)
    throw ValidationError("manifest header must be exactly '" + std::string(kManifestHeader) + "'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != expected.size())
      throw ValidationError("manifest line " + std::to_string(lineno) + ": expected 5 columns, got " +
                            std::to_string(fields.size()));
    for (auto& f : fields) f = detail::trim(f);
    if (fields[0].empty()) throw ValidationError("manifest line " + std::to_string(lineno) + ": empty subject_id");
    if (fields[1].empty()) throw ValidationError("manifest line " + std::to_string(lineno) + ": empty stack_path");
    ManifestRow row;
    row.subject_id = fields[0];
    row.stack_path = fields[1];
    if (!fields[2].empty()) row.mask_path = fields[2];
    row.sequence = parse_sequence(fields[3]);
    row.split = parse_split(fields[4]);
    m.rows.push_back(std::move(row));
  }
  return m;
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest '" + path + "'");
  return parse_manifest(in, std::filesystem::path(path).parent_path());
}

// Subject-wise partitioning: a subject may appear in one split only.
inline void check_subject_disjointness(const DatasetManifest& m) {
  std::map<std::string, Split> seen;
  for (const auto& row : m.rows) {
    auto [it, inserted] = seen.emplace(row.subject_id, row.split);
    if (!inserted && it->second != row.split)
      throw ValidationError("subject '" + row.subject_id + "' appears in both the " +
                            std::string(to_string(it->second)) + " and " +
                            std::string(to_string(row.split)) + " splits");
  }
}

inline void validate_manifest(const DatasetManifest& m, bool check_files = true) {
  check_subject_disjointness(m);
  if (!check_files) return;
  for (const auto& row : m.rows) {
    const auto stack = m.resolve(row.stack_path);
    if (!std::ifstream(stack))
      throw ValidationError("subject '" + row.subject_id + "': cannot read stack '" + stack + "'");
    if (row.mask_path) {
      const auto mask = m.resolve(*row.mask_path);
      if (!std::ifstream(mask))
        throw ValidationError("subject '" + row.subject_id + "': cannot read mask '" + mask + "'");
    }
  }
}

inline void write_manifest(const DatasetManifest& m, std::ostream& out) {
  out << kManifestHeader << '\n';
  for (const auto& row : m.rows)
    out << row.subject_id << ',' << row.stack_path << ',' << row.mask_path.value_or("") << ','
        << to_string(row.sequence) << ',' << to_string(row.split) << '\n';
}

}  // namespace fetalbet
