#ifndef NMIPW_DATASET_HPP
#define NMIPW_DATASET_HPP

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nmipw {

enum class VarType { Binary, Continuous };

struct VariableSchema {
  std::vector<std::string> names;
  std::vector<VarType> types;

  int size() const { return static_cast<int>(names.size()); }
  int index_of(const std::string& name) const;
  void validate() const;  // unique names, K >= 1
};

// One missingness pattern: the set of variable indices observed under it.
// Code 1 is reserved for complete cases.
struct Pattern {
  int code = 0;
  std::vector<int> observed;  // sorted, unique indices into the schema
};

class PatternRegistry {
 public:
  PatternRegistry(int n_variables, std::vector<Pattern> patterns);

  int n_variables() const { return n_variables_; }
  int n_patterns() const { return static_cast<int>(patterns_.size()); }
  const Pattern& pattern(int code) const { return patterns_.at(code - 1); }
  const std::vector<Pattern>& patterns() const { return patterns_; }
  // mask as a string of 1/0 in variable order, e.g. "1101"
  std::string mask_string(int code) const;

  static PatternRegistry complete_only(int n_variables);

 private:
  int n_variables_;
  std::vector<Pattern> patterns_;  // patterns_[c-1] has code c
};

struct DataRow {
  int pattern = 1;
  std::vector<double> values;  // one per observed variable, in observed-index order
};

struct ObservedDataset {
  VariableSchema schema;
  std::vector<DataRow> rows;

  long n() const { return static_cast<long>(rows.size()); }
};

struct PatternTableRow {
  int code = 0;
  std::string mask;
  long count = 0;
  double percent = 0.0;
};

struct PatternTable {
  long total = 0;
  std::vector<PatternTableRow> rows;
};

// Raw rectangular table with explicit missing cells, the shape data arrives in
// (CSV or generated) before patterns are assigned.
struct RawTable {
  VariableSchema schema;
  std::vector<std::vector<std::optional<double>>> rows;
};

// Assign a pattern code to every distinct observedness mask. Complete rows get
// code 1; incomplete patterns are coded by descending count, ties broken by the
// mask read as a binary number (first variable = most significant bit), larger
// first. Throws if no complete row exists ("positivity unverifiable").
std::pair<PatternRegistry, ObservedDataset> infer_patterns(const RawTable& raw);

// Merge all incomplete patterns with count < min_count into a single pattern
// observing the intersection of their observed sets; rows keep only the
// intersection variables. Fewer than two sparse patterns: returned unchanged.
// Pattern 1 is never eligible.
std::pair<PatternRegistry, ObservedDataset> combine_sparse_patterns(
    const PatternRegistry& registry, const ObservedDataset& dataset, long min_count);

PatternTable tabulate_patterns(const PatternRegistry& registry,
                               const ObservedDataset& dataset);

// Inverse of the infer_patterns row encoding; used to check losslessness.
RawTable reconstruct_raw(const PatternRegistry& registry, const ObservedDataset& dataset);

std::vector<long> pattern_counts(const PatternRegistry& registry,
                                 const ObservedDataset& dataset);

// CSV with a header row of variable names; `NA` (case-sensitive) or an empty
// cell marks a missing value. Any other non-numeric token is an error naming
// the offending line and column. Variable types are inferred: a column whose
// observed values are all 0/1 is Binary.
RawTable read_csv(std::istream& in);
RawTable read_csv_file(const std::string& path);
void write_csv(const RawTable& raw, std::ostream& out);

void write_pattern_table_csv(const PatternTable& table, std::ostream& out);
std::string format_pattern_table(const PatternTable& table);

}  // namespace nmipw

#endif
