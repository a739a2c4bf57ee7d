#include <fstream>
#include <sstream>

#include "scz/dataset.hpp"
#include "scz/error.hpp"

namespace scz {

void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write manifest " + path.string());
  out << "# source_id\tlabel\tprovenance\tsplit\tpath\n";
  for (const auto& r : records) {
    out << r.source_id << '\t' << to_string(r.label) << '\t' << to_string(r.provenance) << '\t' << r.split << '\t'
        << r.path << '\n';
  }
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::unreadable_file, "cannot open manifest " + path.string());
  std::vector<ManifestRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 5) {
      throw Error(Errc::bad_config, path.string() + ":" + std::to_string(line_no) + ": expected 5 tab-separated fields");
    }
    const std::string& split = fields[3];
    if (split != "train" && split != "validation" && split != "test" && split != "none") {
      throw Error(Errc::bad_config, path.string() + ":" + std::to_string(line_no) + ": unknown split '" + split + "'");
    }
    records.push_back({fields[0], parse_label(fields[1]), parse_provenance(fields[2]), split, fields[4]});
  }
  return records;
}

}  // namespace scz
