#include "merob/annotations.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "merob/errors.hpp"

namespace merob {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    std::size_t start = field.find_first_not_of(' ');
    out.push_back(start == std::string::npos ? std::string{} : field.substr(start));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

const AnnotationRow* AnnotationTable::find(std::string_view clip_id) const {
  for (const auto& r : rows) {
    if (r.clip_id == clip_id) return &r;
  }
  return nullptr;
}

AnnotationTable read_annotation_csv(const std::filesystem::path& path,
                                    std::span<const std::string_view> columns, RatingRange range) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open annotation file " + path.string());
  AnnotationTable table;
  table.range = range;
  table.columns.assign(columns.begin(), columns.end());

  std::string line;
  if (!std::getline(in, line)) throw IngestionError(path.string() + ": empty annotation file");
  const auto header = split_csv_line(line);
  bool ok = header.size() == columns.size() + 1 && header[0] == "clip_id";
  for (std::size_t i = 0; ok && i < columns.size(); ++i) ok = header[i + 1] == columns[i];
  if (!ok) {
    std::string expected = "clip_id";
    for (auto c : columns) expected += "," + std::string(c);
    throw IngestionError(path.string() + ": header must be '" + expected + "'");
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != columns.size() + 1) {
      throw IngestionError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                           std::to_string(columns.size() + 1) + " fields");
    }
    AnnotationRow row{fields[0], {}};
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double v = 0.0;
      const auto* b = fields[i].data();
      const auto res = std::from_chars(b, b + fields[i].size(), v);
      if (res.ec != std::errc{} || res.ptr != b + fields[i].size()) {
        throw IngestionError(path.string() + ":" + std::to_string(line_no) + ": bad number '" +
                             fields[i] + "'");
      }
      row.values.push_back(v);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_annotation_csv(const std::filesystem::path& path, const AnnotationTable& table) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << "clip_id";
  for (const auto& c : table.columns) out << ',' << c;
  out << '\n';
  out.precision(17);
  for (const auto& r : table.rows) {
    out << r.clip_id;
    for (double v : r.values) out << ',' << v;
    out << '\n';
  }
}

AnnotationTable normalize_targets(const AnnotationTable& table) {
  if (table.normalized) return table;
  if (!(table.range.hi > table.range.lo)) throw ConfigError("rating range is empty");
  std::vector<std::string> offenders;
  for (const auto& r : table.rows) {
    for (double v : r.values) {
      if (!(v >= table.range.lo && v <= table.range.hi)) {
        offenders.push_back(r.clip_id);
        break;
      }
    }
  }
  if (!offenders.empty()) {
    std::string msg = "ratings outside [" + std::to_string(table.range.lo) + ", " +
                      std::to_string(table.range.hi) + "] for clips:";
    for (const auto& id : offenders) msg += " " + id;
    throw ValidationError(msg);
  }
  AnnotationTable out = table;
  out.normalized = true;
  for (auto& r : out.rows) {
    for (auto& v : r.values) v = normalize_rating(v, table.range);
  }
  return out;
}

AnnotationTable denormalize_targets(const AnnotationTable& table) {
  if (!table.normalized) return table;
  AnnotationTable out = table;
  out.normalized = false;
  for (auto& r : out.rows) {
    for (auto& v : r.values) v = denormalize_rating(v, table.range);
  }
  return out;
}

}  // namespace merob
