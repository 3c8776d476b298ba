#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

// Longitudinal two-stage trial data model: node schema, dataset storage,
// allowable-treatment rules, embedded regimes and regime-following logic.

namespace smartdtr {

enum class ColumnKind { Numeric, Categorical };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
  std::vector<std::string> levels;  // categorical only

  int level_index(const std::string& label) const;  // -1 if unknown
};

struct NodeSchema {
  std::vector<ColumnSpec> baseline;     // X(1)
  ColumnSpec stage1_treatment;          // A(1), categorical
  std::vector<ColumnSpec> timevarying;  // X(2); includes the response indicator
  ColumnSpec stage2_treatment;          // A(2), categorical
  std::string outcome;                  // Y
  double outcome_min = 0.0;
  double outcome_max = 1.0;
  std::string response_column;                 // L(2), binary
  std::vector<std::string> absorbing_columns;  // e.g. death / transfer flags
  std::vector<std::string> tailoring_stage1;   // Z(1) subset of baseline
  std::vector<std::string> tailoring_stage2;   // Z(2) subset of {A(1)} + timevarying

  std::vector<ColumnSpec> all_columns() const;  // temporal order X(1),A(1),X(2),A(2),Y
  const ColumnSpec* find(const std::string& name) const;
  void validate() const;  // throws std::invalid_argument

  static NodeSchema from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Column-typed, immutable-after-construction dataset. Numeric cells use NaN
// for missing; categorical cells use code -1.
class TrialDataset {
 public:
  TrialDataset(NodeSchema schema, std::size_t n);

  std::size_t size() const { return n_; }
  const NodeSchema& schema() const { return schema_; }

  double numeric(const std::string& col, std::size_t i) const;
  int code(const std::string& col, std::size_t i) const;
  std::string label(const std::string& col, std::size_t i) const;
  bool missing(const std::string& col, std::size_t i) const;

  double y(std::size_t i) const { return numeric(schema_.outcome, i); }
  bool y_missing(std::size_t i) const { return missing(schema_.outcome, i); }
  int a1(std::size_t i) const;
  int a2(std::size_t i) const;  // -1 when missing (absorbing event)
  int response(std::size_t i) const;
  bool absorbed(std::size_t i) const;  // any absorbing indicator == 1

  void set_numeric(const std::string& col, std::size_t i, double v);
  void set_code(const std::string& col, std::size_t i, int code);
  void set_label(const std::string& col, std::size_t i, const std::string& label);
  void set_missing(const std::string& col, std::size_t i);

  // Structural invariants: A(1) present everywhere; A(2) missing only under
  // an absorbing event; response binary. Throws std::runtime_error.
  void validate() const;

 private:
  struct Column {
    ColumnSpec spec;
    std::vector<double> num;
    std::vector<int> cat;
  };
  const Column& col(const std::string& name) const;
  Column& col(const std::string& name);

  NodeSchema schema_;
  std::size_t n_;
  std::vector<Column> columns_;
  std::map<std::string, std::size_t> index_;
};

// A conjunction of "column value is one of these levels" conditions over
// categorical columns. An empty condition list matches everything.
struct Condition {
  std::string column;
  std::vector<std::string> in_levels;
};

// Strata are evaluated against a label map (column -> level).
using Stratum = std::map<std::string, std::string>;

bool matches(const std::vector<Condition>& when, const Stratum& stratum);

struct AllowableSetRule {
  int stage = 1;
  std::vector<Condition> when;
  std::vector<std::string> allowed;
  std::vector<double> probabilities;  // empty = uniform over `allowed`

  bool deterministic() const { return allowed.size() == 1; }
  double probability_of(const std::string& level) const;

  static AllowableSetRule from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Exactly one stage-`stage` rule must match; returns its allowed set.
const AllowableSetRule& matching_rule(const std::vector<AllowableSetRule>& rules, int stage,
                                      const Stratum& stratum);
std::vector<std::string> allowable_set(const std::vector<AllowableSetRule>& rules, int stage,
                                       const Stratum& stratum);

struct DecisionCase {
  std::vector<Condition> when;
  std::string level;
};

struct DecisionRule {
  std::vector<DecisionCase> cases;
  const std::string& decide(const Stratum& stratum) const;  // first matching case
};

struct EmbeddedRegime {
  std::string id;
  DecisionRule rule1;  // over Z(1)
  DecisionRule rule2;  // over (assigned stage-1 treatment, Z(2))

  static EmbeddedRegime from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Stratum of record i restricted to the given columns (labels); `a1_override`
// substitutes the stage-1 treatment label when predicting under a regime.
Stratum record_stratum(const TrialDataset& data, std::size_t i,
                       const std::vector<std::string>& columns,
                       const std::optional<std::string>& a1_override = std::nullopt);

std::string regime_stage1_level(const TrialDataset& data, std::size_t i,
                                const EmbeddedRegime& regime);
std::string regime_stage2_level(const TrialDataset& data, std::size_t i,
                                const EmbeddedRegime& regime);

bool follows_regime(const TrialDataset& data, std::size_t i, const EmbeddedRegime& regime,
                    int through_stage);

// Cross-product of allowable levels over reachable tailoring strata; regimes
// that differ only on unreachable strata are identified (first kept).
std::vector<EmbeddedRegime> enumerate_embedded_regimes(const std::vector<AllowableSetRule>& rules,
                                                       const NodeSchema& schema);

struct LoadReport {
  std::size_t rows = 0;
  std::size_t missing_outcomes = 0;
};

TrialDataset load_csv(const std::string& path, const NodeSchema& schema,
                      LoadReport* report = nullptr);
void write_csv(const TrialDataset& data, const std::string& path);

struct FilterReport {
  std::size_t dropped = 0;
  bool empty_result = false;
};

TrialDataset complete_case_filter(const TrialDataset& data, FilterReport* report = nullptr);

// Checks every observed treatment lies in its allowable set. Throws on
// violation (row index in message).
void check_allowability(const TrialDataset& data, const std::vector<AllowableSetRule>& rules);

}  // namespace smartdtr
