#pragma once

// Subject manifests. A cohort is loaded from a CSV with header
// `id,image,label,domain`; the label column may be empty; paths are resolved
// relative to the manifest location.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "darca/core.hpp"

namespace darca {

enum class Domain { source, target };

inline std::string to_string(Domain d) {
  return d == Domain::source ? "source" : "target";
}

inline Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw std::runtime_error("unknown domain tag '" + s + "'");
}

struct SubjectRecord {
  std::string id;
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> label_path;
  Domain domain = Domain::source;
};

struct Cohort {
  std::string name;
  std::vector<SubjectRecord> subjects;

  const SubjectRecord& by_id(const std::string& id) const {
    for (const auto& s : subjects)
      if (s.id == id) return s;
    throw std::runtime_error("cohort '" + name + "' has no subject '" + id + "'");
  }

  void validate() const {
    if (subjects.empty()) throw std::runtime_error("cohort '" + name + "' is empty");
    std::set<std::string> ids;
    for (const auto& s : subjects)
      if (!ids.insert(s.id).second)
        throw std::runtime_error("duplicate subject id '" + s.id + "'");
  }
};

namespace detail {

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline Cohort load_cohort(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error(manifest_path.string() + ": cannot open manifest");
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(manifest_path.string() + ": empty manifest");
  const auto header = detail::split_csv_row(line);
  if (header != std::vector<std::string>{"id", "image", "label", "domain"})
    throw std::runtime_error(manifest_path.string() +
                             ": missing required column, header must be id,image,label,domain");

  const auto base = manifest_path.parent_path();
  Cohort cohort;
  cohort.name = manifest_path.stem().string();
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_row(line);
    if (cells.size() != 4)
      throw std::runtime_error(manifest_path.string() + ": row with " +
                               std::to_string(cells.size()) + " columns, expected 4");
    SubjectRecord rec;
    rec.id = cells[0];
    if (rec.id.empty())
      throw std::runtime_error(manifest_path.string() + ": row with empty id");
    rec.image_path = base / cells[1];
    if (!cells[2].empty()) rec.label_path = base / cells[2];
    rec.domain = parse_domain(cells[3]);
    cohort.subjects.push_back(std::move(rec));
  }
  cohort.validate();
  return cohort;
}

}  // namespace darca
