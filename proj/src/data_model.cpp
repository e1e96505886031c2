#include "strata/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

namespace strata {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint32_t intern(std::unordered_map<std::string, std::uint32_t>& index,
                     std::vector<std::string>& names, const std::string& key) {
  auto [it, inserted] =
      index.emplace(key, static_cast<std::uint32_t>(names.size()));
  if (inserted) names.push_back(key);
  return it->second;
}

}  // namespace

Sample::Sample(std::string label, std::vector<UnitRecord> units)
    : label_(std::move(label)) {
  auto meta = std::make_shared<Meta>();
  std::unordered_map<std::string, std::uint32_t> cluster_index;
  std::unordered_map<std::string, std::uint32_t> block_index;
  std::set<std::string> aux_names;
  for (const auto& u : units) {
    for (const auto& [name, value] : u.aux) aux_names.insert(name);
  }
  for (const auto& name : aux_names) {
    meta->aux.emplace(name, std::vector<double>(units.size(), kNaN));
  }

  const std::size_t n = units.size();
  z_.reserve(n);
  d_.reserve(n);
  y_.reserve(n);
  weight_.reserve(n);
  block_.reserve(n);
  cluster_.reserve(n);
  source_row_.reserve(n);
  meta->unit_ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& u = units[i];
    const std::size_t row = i + 1;
    if (u.z != 0 && u.z != 1) {
      throw Error(ErrorKind::DomainViolation,
                  "row " + std::to_string(row) + ": assignment z must be 0 or 1",
                  row);
    }
    if (u.d < 0 || u.d > 2) {
      throw Error(ErrorKind::DomainViolation,
                  "row " + std::to_string(row) + ": take-up d must be 0, 1 or 2",
                  row);
    }
    if (!std::isfinite(u.y)) {
      throw Error(ErrorKind::MalformedRow,
                  "row " + std::to_string(row) + ": outcome is not finite", row);
    }
    if (!(u.weight > 0.0) || !std::isfinite(u.weight)) {
      throw Error(ErrorKind::DomainViolation,
                  "row " + std::to_string(row) + ": weight must be positive",
                  row);
    }
    if (u.cluster_id.empty()) {
      throw Error(ErrorKind::MalformedRow,
                  "row " + std::to_string(row) + ": empty cluster id", row);
    }
    if (u.block_id.empty()) u.block_id = std::string(kDefaultBlock);
    z_.push_back(static_cast<std::uint8_t>(u.z));
    d_.push_back(static_cast<std::uint8_t>(u.d));
    y_.push_back(u.y);
    weight_.push_back(u.weight);
    cluster_.push_back(intern(cluster_index, meta->cluster_names, u.cluster_id));
    block_.push_back(intern(block_index, meta->block_names, u.block_id));
    source_row_.push_back(static_cast<std::uint32_t>(i));
    meta->unit_ids.push_back(std::move(u.unit_id));
    for (const auto& [name, value] : u.aux) meta->aux.find(name)->second[i] = value;
  }
  if (n == 0) {
    throw Error(ErrorKind::EmptyCell, "sample has no units");
  }
  cluster_origin_.resize(meta->cluster_names.size());
  for (std::uint32_t c = 0; c < cluster_origin_.size(); ++c) cluster_origin_[c] = c;
  cluster_draw_.assign(cluster_origin_.size(), 0);
  meta_ = std::move(meta);
  finalize();
}

void Sample::finalize() {
  const std::size_t blocks = meta_->block_names.size();
  std::vector<double> treated(blocks, 0.0);
  std::vector<double> total(blocks, 0.0);
  std::vector<std::size_t> treated_count(blocks, 0);
  std::vector<std::size_t> count(blocks, 0);
  for (std::size_t i = 0; i < size(); ++i) {
    total[block_[i]] += weight_[i];
    ++count[block_[i]];
    if (z_[i] == 1) {
      treated[block_[i]] += weight_[i];
      ++treated_count[block_[i]];
    }
  }
  propensity_.assign(blocks, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t b = 0; b < blocks; ++b) {
    if (count[b] == 0) continue;  // block absent from a subsample
    if (treated_count[b] == 0 || treated_count[b] == count[b]) {
      throw Error(ErrorKind::EmptyCell,
                  "block '" + meta_->block_names[b] + "' lacks " +
                      (treated_count[b] == 0 ? "treated" : "control") +
                      " units");
    }
    propensity_[b] = treated[b] / total[b];
  }
  ipw_.resize(size());
  for (std::size_t i = 0; i < size(); ++i) {
    const double e = propensity_[block_[i]];
    ipw_[i] = z_[i] == 1 ? weight_[i] / e : weight_[i] / (1.0 - e);
  }
}

double Sample::propensity(std::string_view block_id) const {
  for (std::size_t b = 0; b < block_count(); ++b) {
    if (meta_->block_names[b] == block_id && !std::isnan(propensity_[b])) {
      return propensity_[b];
    }
  }
  throw Error(ErrorKind::EmptyCell,
              "block '" + std::string(block_id) + "' not present in sample");
}

UnitRecord Sample::unit(std::size_t i) const {
  UnitRecord u;
  const std::uint32_t src = source_row_[i];
  u.unit_id = meta_->unit_ids[src];
  const std::uint32_t c = cluster_[i];
  u.cluster_id = meta_->cluster_names[cluster_origin_[c]];
  if (cluster_draw_[c] > 0) u.cluster_id += "#" + std::to_string(cluster_draw_[c]);
  u.block_id = meta_->block_names[block_[i]];
  u.z = z_[i];
  u.d = d_[i];
  u.y = y_[i];
  u.weight = weight_[i];
  for (const auto& [name, column] : meta_->aux) {
    if (!std::isnan(column[src])) u.aux.emplace(name, column[src]);
  }
  return u;
}

std::vector<UnitRecord> Sample::units() const {
  std::vector<UnitRecord> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(unit(i));
  return out;
}

std::vector<std::string> Sample::aux_names() const {
  std::vector<std::string> names;
  for (const auto& [name, column] : meta_->aux) names.push_back(name);
  return names;
}

std::optional<double> Sample::aux(std::size_t i, std::string_view name) const {
  auto it = meta_->aux.find(name);
  if (it == meta_->aux.end()) return std::nullopt;
  const double v = it->second[source_row_[i]];
  if (std::isnan(v)) return std::nullopt;
  return v;
}

Sample Sample::with_weights(std::vector<double> weights) const {
  if (weights.size() != size()) {
    throw Error(ErrorKind::InvalidConfig, "weight vector length mismatch");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) {
      throw Error(ErrorKind::DomainViolation,
                  "weight must be positive (unit " + std::to_string(i + 1) + ")",
                  i + 1);
    }
  }
  Sample out = *this;
  out.weight_ = std::move(weights);
  out.finalize();
  return out;
}

Sample Sample::gather(std::span<const std::uint32_t> rows,
                      std::span<const std::uint32_t> cluster_of_row,
                      std::span<const std::uint32_t> cluster_origin) const {
  Sample out;
  out.label_ = label_;
  out.meta_ = meta_;
  const std::size_t n = rows.size();
  out.source_row_.resize(n);
  out.z_.resize(n);
  out.d_.resize(n);
  out.y_.resize(n);
  out.weight_.resize(n);
  out.block_.resize(n);
  out.cluster_.assign(cluster_of_row.begin(), cluster_of_row.end());
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint32_t i = rows[k];
    out.source_row_[k] = source_row_[i];
    out.z_[k] = z_[i];
    out.d_[k] = d_[i];
    out.y_[k] = y_[i];
    out.weight_[k] = weight_[i];
    out.block_[k] = block_[i];
  }
  out.cluster_origin_.resize(cluster_origin.size());
  out.cluster_draw_.resize(cluster_origin.size());
  std::unordered_map<std::uint32_t, std::uint32_t> draws;
  for (std::size_t c = 0; c < cluster_origin.size(); ++c) {
    const std::uint32_t origin = cluster_origin_[cluster_origin[c]];
    out.cluster_origin_[c] = origin;
    out.cluster_draw_[c] = draws[origin]++;
  }
  out.finalize();
  return out;
}

Sample Sample::keep(std::span<const std::uint32_t> rows) const {
  std::unordered_map<std::uint32_t, std::uint32_t> renumber;
  std::vector<std::uint32_t> cluster_of_row;
  std::vector<std::uint32_t> origin;
  cluster_of_row.reserve(rows.size());
  for (std::uint32_t i : rows) {
    auto [it, inserted] =
        renumber.emplace(cluster_[i], static_cast<std::uint32_t>(origin.size()));
    if (inserted) origin.push_back(cluster_[i]);
    cluster_of_row.push_back(it->second);
  }
  Sample out = gather(rows, cluster_of_row, origin);
  // keep() preserves cluster identity rather than counting draws.
  for (std::size_t c = 0; c < out.cluster_draw_.size(); ++c) {
    out.cluster_draw_[c] = cluster_draw_[origin[c]];
  }
  return out;
}

Sample Sample::relabel(std::string label) const {
  Sample out = *this;
  out.label_ = std::move(label);
  return out;
}

std::string_view to_string(EstimateMethod method) {
  return method == EstimateMethod::analytic ? "analytic" : "cluster_bootstrap";
}

nlohmann::json to_json(const EstimateReport& report) {
  nlohmann::json j;
  j["name"] = report.name;
  j["point"] = report.point;
  j["se"] = report.se ? nlohmann::json(*report.se) : nlohmann::json(nullptr);
  if (report.ci) {
    j["ci"] = {report.ci->first, report.ci->second};
  } else {
    j["ci"] = nullptr;
  }
  j["method"] = to_string(report.method);
  j["meta"] = report.meta;
  return j;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(std::string_view line, std::size_t row) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  if (quoted) {
    throw Error(ErrorKind::MalformedRow,
                "row " + std::to_string(row) + ": unterminated quote", row);
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

double parse_real(std::string_view text, std::size_t row, std::string_view column) {
  text = trim(text);
  double value = 0.0;
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  if (!text.empty() && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw Error(ErrorKind::MalformedRow,
                "row " + std::to_string(row) + ": column '" + std::string(column) +
                    "' is not a number: '" + std::string(text) + "'",
                row);
  }
  return value;
}

int parse_code(std::string_view text, std::size_t row, std::string_view column) {
  const double v = parse_real(text, row, column);
  if (v != std::floor(v) || std::abs(v) > 1e6) {
    throw Error(ErrorKind::DomainViolation,
                "row " + std::to_string(row) + ": column '" + std::string(column) +
                    "' must be an integer code",
                row);
  }
  return static_cast<int>(v);
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

}  // namespace

Sample parse_csv(std::string_view text, const CsvSchema& schema, std::string label) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw Error(ErrorKind::MalformedRow, "missing header row", 0);

  std::string_view header_line = lines.front();
  if (header_line.substr(0, 3) == "\xEF\xBB\xBF") header_line.remove_prefix(3);
  std::vector<std::string> header = split_csv_line(header_line, 0);
  for (auto& h : header) h = std::string(trim(h));
  auto find_column = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (header[k] == name) return k;
    }
    return std::nullopt;
  };
  auto require = [&](const std::string& name) {
    auto k = find_column(name);
    if (!k) {
      throw Error(ErrorKind::MalformedRow,
                  "header lacks required column '" + name + "'", 0);
    }
    return *k;
  };
  const std::size_t z_col = require(schema.z);
  const std::size_t d_col = require(schema.d);
  const std::size_t y_col = require(schema.y);
  const auto id_col = find_column(schema.unit_id);
  const auto cluster_col = find_column(schema.cluster);
  const auto block_col = find_column(schema.block);
  const auto weight_col = find_column(schema.weight);
  std::vector<std::pair<std::string, std::size_t>> aux_cols;
  for (const auto& [name, column] : schema.aux) aux_cols.emplace_back(name, require(column));
  if (schema.aux_from_unmapped) {
    std::set<std::size_t> used{z_col, d_col, y_col};
    for (auto c : {id_col, cluster_col, block_col, weight_col}) {
      if (c) used.insert(*c);
    }
    for (const auto& [name, col] : aux_cols) used.insert(col);
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (!used.count(k)) aux_cols.emplace_back(header[k], k);
    }
  }

  std::vector<UnitRecord> units;
  units.reserve(lines.size() - 1);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t row = li;
    if (trim(lines[li]).empty()) {
      throw Error(ErrorKind::MalformedRow, "row " + std::to_string(row) + ": empty line",
                  row);
    }
    std::vector<std::string> f = split_csv_line(lines[li], row);
    if (f.size() != header.size()) {
      throw Error(ErrorKind::MalformedRow,
                  "row " + std::to_string(row) + ": expected " +
                      std::to_string(header.size()) + " fields, found " +
                      std::to_string(f.size()),
                  row);
    }
    UnitRecord u;
    u.unit_id = id_col ? f[*id_col] : std::to_string(row);
    u.z = parse_code(f[z_col], row, schema.z);
    if (u.z != 0 && u.z != 1) {
      throw Error(ErrorKind::DomainViolation,
                  "row " + std::to_string(row) + ": z=" + std::to_string(u.z) +
                      " not in {0,1}",
                  row);
    }
    u.d = parse_code(f[d_col], row, schema.d);
    if (u.d < 0 || u.d > 2) {
      throw Error(ErrorKind::DomainViolation,
                  "row " + std::to_string(row) + ": d=" + std::to_string(u.d) +
                      " not in {0,1,2}",
                  row);
    }
    if (trim(f[y_col]).empty()) {
      throw Error(ErrorKind::MalformedRow,
                  "row " + std::to_string(row) + ": missing outcome", row);
    }
    u.y = parse_real(f[y_col], row, schema.y);
    if (!std::isfinite(u.y)) {
      throw Error(ErrorKind::MalformedRow,
                  "row " + std::to_string(row) + ": outcome is not finite", row);
    }
    if (cluster_col) {
      u.cluster_id = std::string(trim(f[*cluster_col]));
      if (u.cluster_id.empty()) {
        throw Error(ErrorKind::MalformedRow,
                    "row " + std::to_string(row) + ": empty cluster id", row);
      }
    } else {
      u.cluster_id = u.unit_id.empty() ? std::to_string(row) : u.unit_id;
    }
    if (block_col) {
      u.block_id = std::string(trim(f[*block_col]));
      if (u.block_id.empty()) {
        throw Error(ErrorKind::MalformedRow,
                    "row " + std::to_string(row) + ": empty block id", row);
      }
    }
    if (weight_col) {
      u.weight = parse_real(f[*weight_col], row, schema.weight);
      if (!(u.weight > 0.0) || !std::isfinite(u.weight)) {
        throw Error(ErrorKind::DomainViolation,
                    "row " + std::to_string(row) + ": weight must be positive", row);
      }
    }
    for (const auto& [name, col] : aux_cols) {
      if (trim(f[col]).empty()) continue;
      u.aux[name] = parse_real(f[col], row, name);
    }
    units.push_back(std::move(u));
  }
  if (units.empty()) throw Error(ErrorKind::MalformedRow, "no data rows", 0);
  return Sample(std::move(label), std::move(units));
}

Sample ingest_csv(const std::string& path, const CsvSchema& schema, std::string label) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  if (label.empty()) label = path;
  return parse_csv(buffer.str(), schema, std::move(label));
}

std::string to_csv(const Sample& sample) {
  std::string out = "unit_id,cluster,block,z,d,y,weight";
  const auto aux = sample.aux_names();
  for (const auto& name : aux) out += "," + quote_if_needed(name);
  out += "\n";
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const UnitRecord u = sample.unit(i);
    out += quote_if_needed(u.unit_id);
    out += ',' + quote_if_needed(u.cluster_id);
    out += ',' + quote_if_needed(u.block_id);
    out += ',' + std::to_string(u.z);
    out += ',' + std::to_string(u.d);
    out += ',' + format_real(u.y);
    out += ',' + format_real(u.weight);
    for (const auto& name : aux) {
      out += ',';
      auto it = u.aux.find(name);
      if (it != u.aux.end()) out += format_real(it->second);
    }
    out += '\n';
  }
  return out;
}

void write_csv(const Sample& sample, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << to_csv(sample);
}

double propensity(const Sample& sample, std::string_view block_id) {
  return sample.propensity(block_id);
}

}  // namespace strata
