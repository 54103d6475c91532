#include "nmipw/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace nmipw {

int VariableSchema::index_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (names[i] == name) return i;
  return -1;
}

void VariableSchema::validate() const {
  if (names.empty()) throw std::invalid_argument("schema must have at least one variable");
  if (!types.empty() && types.size() != names.size())
    throw std::invalid_argument("schema types do not match variable count");
  std::set<std::string> seen(names.begin(), names.end());
  if (seen.size() != names.size())
    throw std::invalid_argument("schema variable names must be unique");
}

PatternRegistry::PatternRegistry(int n_variables, std::vector<Pattern> patterns)
    : n_variables_(n_variables), patterns_(std::move(patterns)) {
  if (n_variables_ < 1) throw std::invalid_argument("registry needs K >= 1 variables");
  if (patterns_.empty()) throw std::invalid_argument("registry needs at least pattern 1");
  for (int c = 0; c < static_cast<int>(patterns_.size()); ++c) {
    const Pattern& p = patterns_[c];
    if (p.code != c + 1)
      throw std::invalid_argument("pattern codes must be contiguous 1..M in order");
    if (!std::is_sorted(p.observed.begin(), p.observed.end()))
      throw std::invalid_argument("pattern observed indices must be sorted");
    for (int v : p.observed)
      if (v < 0 || v >= n_variables_)
        throw std::invalid_argument("pattern observed index out of range");
    if (std::adjacent_find(p.observed.begin(), p.observed.end()) != p.observed.end())
      throw std::invalid_argument("pattern observed indices must be unique");
    if (c == 0) {
      if (static_cast<int>(p.observed.size()) != n_variables_)
        throw std::invalid_argument("pattern 1 must observe all variables");
    } else if (static_cast<int>(p.observed.size()) >= n_variables_) {
      throw std::invalid_argument("incomplete patterns must observe a proper subset");
    }
  }
}

std::string PatternRegistry::mask_string(int code) const {
  std::string mask(n_variables_, '0');
  for (int v : pattern(code).observed) mask[v] = '1';
  return mask;
}

PatternRegistry PatternRegistry::complete_only(int n_variables) {
  Pattern complete;
  complete.code = 1;
  complete.observed.resize(n_variables);
  for (int i = 0; i < n_variables; ++i) complete.observed[i] = i;
  return PatternRegistry(n_variables, {complete});
}

namespace {

using Mask = std::vector<bool>;

unsigned long mask_value(const Mask& mask) {
  // first variable = most significant bit
  unsigned long value = 0;
  for (bool bit : mask) value = (value << 1) | (bit ? 1u : 0u);
  return value;
}

Mask row_mask(const std::vector<std::optional<double>>& row) {
  Mask mask(row.size());
  for (size_t i = 0; i < row.size(); ++i) mask[i] = row[i].has_value();
  return mask;
}

std::vector<int> mask_indices(const Mask& mask) {
  std::vector<int> idx;
  for (int i = 0; i < static_cast<int>(mask.size()); ++i)
    if (mask[i]) idx.push_back(i);
  return idx;
}

}  // namespace

std::pair<PatternRegistry, ObservedDataset> infer_patterns(const RawTable& raw) {
  raw.schema.validate();
  const int K = raw.schema.size();
  if (raw.rows.empty()) throw std::invalid_argument("empty table");

  std::map<Mask, long> counts;
  for (const auto& row : raw.rows) {
    if (static_cast<int>(row.size()) != K)
      throw std::invalid_argument("row width does not match schema");
    ++counts[row_mask(row)];
  }

  const Mask complete(K, true);
  if (counts.find(complete) == counts.end())
    throw std::runtime_error(
        "positivity unverifiable: no complete-case row in the data");

  std::vector<std::pair<Mask, long>> incomplete;
  for (const auto& [mask, count] : counts)
    if (mask != complete) incomplete.emplace_back(mask, count);
  std::sort(incomplete.begin(), incomplete.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return mask_value(a.first) > mask_value(b.first);
  });

  std::vector<Pattern> patterns;
  std::map<Mask, int> code_of;
  Pattern p1;
  p1.code = 1;
  p1.observed = mask_indices(complete);
  patterns.push_back(p1);
  code_of[complete] = 1;
  for (const auto& [mask, count] : incomplete) {
    (void)count;
    Pattern p;
    p.code = static_cast<int>(patterns.size()) + 1;
    p.observed = mask_indices(mask);
    code_of[mask] = p.code;
    patterns.push_back(p);
  }

  ObservedDataset dataset;
  dataset.schema = raw.schema;
  dataset.rows.reserve(raw.rows.size());
  for (const auto& row : raw.rows) {
    DataRow out;
    out.pattern = code_of[row_mask(row)];
    for (const auto& cell : row)
      if (cell.has_value()) out.values.push_back(*cell);
    dataset.rows.push_back(std::move(out));
  }
  return {PatternRegistry(K, std::move(patterns)), std::move(dataset)};
}

std::vector<long> pattern_counts(const PatternRegistry& registry,
                                 const ObservedDataset& dataset) {
  std::vector<long> counts(registry.n_patterns(), 0);
  for (const auto& row : dataset.rows) {
    if (row.pattern < 1 || row.pattern > registry.n_patterns())
      throw std::invalid_argument("row references unknown pattern code");
    ++counts[row.pattern - 1];
  }
  return counts;
}

std::pair<PatternRegistry, ObservedDataset> combine_sparse_patterns(
    const PatternRegistry& registry, const ObservedDataset& dataset, long min_count) {
  if (min_count < 0) throw std::invalid_argument("min_count must be >= 0");
  const std::vector<long> counts = pattern_counts(registry, dataset);

  std::vector<int> sparse;  // codes, pattern 1 never eligible
  for (int c = 2; c <= registry.n_patterns(); ++c)
    if (counts[c - 1] < min_count) sparse.push_back(c);
  if (sparse.size() < 2) return {registry, dataset};

  // intersection of the merged patterns' observed sets (may be empty)
  std::vector<int> intersection = registry.pattern(sparse.front()).observed;
  for (size_t s = 1; s < sparse.size(); ++s) {
    const auto& obs = registry.pattern(sparse[s]).observed;
    std::vector<int> next;
    std::set_intersection(intersection.begin(), intersection.end(), obs.begin(),
                          obs.end(), std::back_inserter(next));
    intersection = std::move(next);
  }

  struct Entry {
    std::vector<int> observed;
    long count;
    unsigned long mask;
  };
  std::vector<Entry> entries;  // surviving incomplete patterns + the merged one
  std::vector<int> old_to_entry(registry.n_patterns() + 1, -1);
  for (int c = 2; c <= registry.n_patterns(); ++c) {
    if (std::find(sparse.begin(), sparse.end(), c) != sparse.end()) continue;
    Entry e;
    e.observed = registry.pattern(c).observed;
    e.count = counts[c - 1];
    old_to_entry[c] = static_cast<int>(entries.size());
    entries.push_back(std::move(e));
  }
  Entry merged;
  merged.observed = intersection;
  merged.count = 0;
  for (int c : sparse) merged.count += counts[c - 1];
  const int merged_entry = static_cast<int>(entries.size());
  for (int c : sparse) old_to_entry[c] = merged_entry;
  entries.push_back(std::move(merged));

  for (auto& e : entries) {
    unsigned long value = 0;
    size_t pos = 0;
    for (int v = 0; v < registry.n_variables(); ++v) {
      const bool bit = pos < e.observed.size() && e.observed[pos] == v;
      if (bit) ++pos;
      value = (value << 1) | (bit ? 1u : 0u);
    }
    e.mask = value;
  }

  std::vector<int> order(entries.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (entries[a].count != entries[b].count) return entries[a].count > entries[b].count;
    return entries[a].mask > entries[b].mask;
  });
  std::vector<int> entry_to_code(entries.size());
  std::vector<Pattern> patterns;
  Pattern p1;
  p1.code = 1;
  p1.observed = registry.pattern(1).observed;
  patterns.push_back(p1);
  for (size_t rank = 0; rank < order.size(); ++rank) {
    Pattern p;
    p.code = static_cast<int>(rank) + 2;
    p.observed = entries[order[rank]].observed;
    entry_to_code[order[rank]] = p.code;
    patterns.push_back(std::move(p));
  }
  PatternRegistry out_registry(registry.n_variables(), std::move(patterns));

  ObservedDataset out;
  out.schema = dataset.schema;
  out.rows.reserve(dataset.rows.size());
  for (const auto& row : dataset.rows) {
    DataRow nr;
    if (row.pattern == 1) {
      nr = row;
    } else {
      const int entry = old_to_entry[row.pattern];
      nr.pattern = entry_to_code[entry];
      if (entry == merged_entry) {
        // keep only the intersection variables
        const auto& old_obs = registry.pattern(row.pattern).observed;
        size_t pos = 0;
        for (int want : intersection) {
          while (old_obs[pos] != want) ++pos;
          nr.values.push_back(row.values[pos]);
        }
      } else {
        nr.values = row.values;
      }
    }
    out.rows.push_back(std::move(nr));
  }
  return {std::move(out_registry), std::move(out)};
}

PatternTable tabulate_patterns(const PatternRegistry& registry,
                               const ObservedDataset& dataset) {
  const std::vector<long> counts = pattern_counts(registry, dataset);
  PatternTable table;
  table.total = dataset.n();
  for (int c = 1; c <= registry.n_patterns(); ++c) {
    PatternTableRow row;
    row.code = c;
    row.mask = registry.mask_string(c);
    row.count = counts[c - 1];
    row.percent = 100.0 * static_cast<double>(row.count) / static_cast<double>(table.total);
    table.rows.push_back(std::move(row));
  }
  return table;
}

RawTable reconstruct_raw(const PatternRegistry& registry, const ObservedDataset& dataset) {
  RawTable raw;
  raw.schema = dataset.schema;
  raw.rows.reserve(dataset.rows.size());
  for (const auto& row : dataset.rows) {
    const auto& obs = registry.pattern(row.pattern).observed;
    if (obs.size() != row.values.size())
      throw std::invalid_argument("row value count does not match its pattern");
    std::vector<std::optional<double>> out(registry.n_variables());
    for (size_t i = 0; i < obs.size(); ++i) out[obs[i]] = row.values[i];
    raw.rows.push_back(std::move(out));
  }
  return raw;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace

RawTable read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: empty input");
  RawTable raw;
  raw.schema.names = split_csv_line(line);
  if (raw.schema.names.empty() || raw.schema.names.front().empty())
    throw std::runtime_error("csv: missing header row");
  raw.schema.validate();
  const int K = raw.schema.size();

  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != K) {
      throw std::runtime_error("csv: line " + std::to_string(line_no) + " has " +
                               std::to_string(fields.size()) + " fields, expected " +
                               std::to_string(K));
    }
    std::vector<std::optional<double>> row(K);
    for (int j = 0; j < K; ++j) {
      const std::string& tok = fields[j];
      if (tok.empty() || tok == "NA") continue;  // missing
      char* end = nullptr;
      const double value = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0')
        throw std::runtime_error("csv: line " + std::to_string(line_no) + ", column " +
                                 raw.schema.names[j] + ": bad token '" + tok + "'");
      row[j] = value;
    }
    raw.rows.push_back(std::move(row));
  }
  if (raw.rows.empty()) throw std::runtime_error("csv: no data rows");

  // infer types: all observed values in {0,1} -> binary
  raw.schema.types.assign(K, VarType::Binary);
  for (int j = 0; j < K; ++j) {
    for (const auto& row : raw.rows) {
      if (row[j].has_value() && *row[j] != 0.0 && *row[j] != 1.0) {
        raw.schema.types[j] = VarType::Continuous;
        break;
      }
    }
  }
  return raw;
}

RawTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return read_csv(in);
}

void write_csv(const RawTable& raw, std::ostream& out) {
  for (int j = 0; j < raw.schema.size(); ++j)
    out << (j ? "," : "") << raw.schema.names[j];
  out << "\n";
  char buf[32];
  for (const auto& row : raw.rows) {
    for (size_t j = 0; j < row.size(); ++j) {
      if (j) out << ",";
      if (row[j].has_value()) {
        std::snprintf(buf, sizeof(buf), "%.17g", *row[j]);
        out << buf;
      } else {
        out << "NA";
      }
    }
    out << "\n";
  }
}

void write_pattern_table_csv(const PatternTable& table, std::ostream& out) {
  out << "code,mask,count,percent\n";
  char buf[64];
  for (const auto& row : table.rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%ld,%.6f\n", row.code, row.mask.c_str(),
                  row.count, row.percent);
    out << buf;
  }
}

std::string format_pattern_table(const PatternTable& table) {
  std::string out = "pattern  mask";
  const int K = table.rows.empty() ? 4 : static_cast<int>(table.rows.front().mask.size());
  out += std::string(std::max(1, K - 2), ' ');
  out += "count   percent\n";
  char buf[128];
  for (const auto& row : table.rows) {
    std::snprintf(buf, sizeof(buf), "%7d  %s  %7ld  %6.1f\n", row.code,
                  row.mask.c_str(), row.count, row.percent);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "total %ld rows\n", table.total);
  out += buf;
  return out;
}

}  // namespace nmipw
