#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pcqa/errors.hpp"
#include "pcqa/ply.hpp"

namespace pcqa {

struct ManifestEntry {
  std::string path;
  double mos = 0.0;
  std::string reference;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Parses a `path,mos,reference` CSV. Rows keep file order; blank lines are skipped.
inline DatasetManifest load_manifest(std::string_view csv) {
  if (csv.size() >= 3 && csv.substr(0, 3) == "\xEF\xBB\xBF") csv.remove_prefix(3);
  DatasetManifest m;
  std::set<std::string, std::less<>> seen;
  std::size_t pos = 0;
  bool header_done = false;
  std::size_t line_no = 0;
  while (pos < csv.size()) {
    std::size_t end = csv.find('\n', pos);
    if (end == std::string_view::npos) end = csv.size();
    std::string_view line = detail::trim(csv.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    auto fields = detail::split_commas(line);
    if (!header_done) {
      if (fields.size() != 3 || detail::trim(fields[0]) != "path" || detail::trim(fields[1]) != "mos" ||
          detail::trim(fields[2]) != "reference")
        throw ManifestError("schema", "header must be exactly 'path,mos,reference'");
      header_done = true;
      continue;
    }
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() != 3) throw ManifestError("schema", where + ": expected 3 columns");
    ManifestEntry e;
    e.path = std::string(detail::trim(fields[0]));
    e.reference = std::string(detail::trim(fields[2]));
    if (e.path.empty()) throw ManifestError("schema", where + ": empty path");
    if (e.reference.empty()) throw ManifestError("schema", where + ": empty reference");
    const std::string_view mos = detail::trim(fields[1]);
    auto [ptr, ec] = std::from_chars(mos.data(), mos.data() + mos.size(), e.mos);
    if (mos.empty() || ec != std::errc() || ptr != mos.data() + mos.size() || !std::isfinite(e.mos))
      throw ManifestError("bad-mos", where + ": '" + std::string(mos) + "'");
    if (!seen.insert(e.path).second) throw ManifestError("duplicate", e.path);
    m.entries.push_back(std::move(e));
  }
  if (!header_done) throw ManifestError("schema", "empty manifest");
  return m;
}

/// Loads a manifest file. Relative paths are resolved against the manifest's
/// directory and every file must exist.
inline DatasetManifest load_manifest_file(const std::string& path) {
  std::string text;
  try {
    text = ply::read_file(path);
  } catch (const ParseError&) {
    throw ManifestError("io", "cannot open '" + path + "'");
  }
  DatasetManifest m = load_manifest(text);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  for (auto& e : m.entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) throw ManifestError("missing-file", p.string());
    e.path = p.lexically_normal().string();
  }
  return m;
}

/// Entry indices grouped by reference-content id, ordered by id.
inline std::map<std::string, std::vector<std::size_t>> group_by_reference(const DatasetManifest& m) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < m.entries.size(); ++i) groups[m.entries[i].reference].push_back(i);
  return groups;
}

}  // namespace pcqa
