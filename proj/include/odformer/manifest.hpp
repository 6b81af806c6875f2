/**
 * @file manifest.hpp
 * @brief Newline-delimited JSON dataset manifests.
 *
 * One object per line with string fields image, mask, split ("train" or
 * "val"), id and an optional participant. Relative paths resolve against the
 * manifest's directory. Blank lines are skipped.
 */
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odformer/netpbm.hpp"
#include "odformer/sample.hpp"

namespace odf {

struct ManifestRecord {
  std::string image;
  std::string mask;
  Split split = Split::train;
  std::string id;
  std::string participant;
};

inline Split parse_split(const std::string& s, const std::string& where) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw FormatError(where + ": split must be \"train\" or \"val\", got \"" + s + "\"");
}

/// Parses manifest text without touching the referenced files.
inline std::vector<ManifestRecord> parse_manifest(const std::string& text, const std::string& what = "manifest") {
  std::vector<ManifestRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = what + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError(where + ": record must be an object");
    auto field = [&](const char* key, bool required) -> std::string {
      auto it = j.find(key);
      if (it == j.end()) {
        if (required) throw FormatError(where + ": missing field \"" + key + "\"");
        return {};
      }
      if (!it->is_string()) throw FormatError(where + ": field \"" + key + "\" must be a string");
      return it->get<std::string>();
    };
    ManifestRecord r;
    r.image = field("image", true);
    r.mask = field("mask", true);
    r.split = parse_split(field("split", true), where);
    r.id = field("id", true);
    r.participant = field("participant", false);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string format_manifest_line(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["image"] = r.image;
  j["mask"] = r.mask;
  j["split"] = to_string(r.split);
  j["id"] = r.id;
  if (!r.participant.empty()) j["participant"] = r.participant;
  return j.dump();
}

/// Reads every record's image and mask; extents must agree exactly.
inline std::vector<FundusSample> load_manifest(const std::string& path) {
  const auto records = parse_manifest(detail::read_file(path), path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  std::vector<FundusSample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path fp(p);
      return (fp.is_absolute() ? fp : base / fp).string();
    };
    FundusSample s;
    s.image = read_image(resolve(r.image));
    s.mask = read_mask(resolve(r.mask));
    s.id = r.id;
    s.split = r.split;
    s.participant = r.participant;
    if (s.mask.height != s.height() || s.mask.width != s.width())
      throw FormatError(path + ": sample " + r.id + " image " + std::to_string(s.height()) + "x" +
                        std::to_string(s.width()) + " vs mask " + std::to_string(s.mask.height) + "x" +
                        std::to_string(s.mask.width));
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<FundusSample> select_split(const std::vector<FundusSample>& samples, Split split) {
  std::vector<FundusSample> out;
  for (const auto& s : samples)
    if (s.split == split) out.push_back(s);
  return out;
}

/// Participants present in both splits. Records without a participant are
/// ignored.
inline std::vector<std::string> split_leaks(const std::vector<ManifestRecord>& records) {
  std::map<std::string, std::set<Split>> seen;
  for (const auto& r : records)
    if (!r.participant.empty()) seen[r.participant].insert(r.split);
  std::vector<std::string> out;
  for (const auto& [who, splits] : seen)
    if (splits.size() > 1) out.push_back(who);
  return out;
}

}  // namespace odf
