#include "smartdtr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace smartdtr {

using nlohmann::json;

int ColumnSpec::level_index(const std::string& label) const {
  for (std::size_t k = 0; k < levels.size(); ++k)
    if (levels[k] == label) return static_cast<int>(k);
  return -1;
}

std::vector<ColumnSpec> NodeSchema::all_columns() const {
  std::vector<ColumnSpec> out = baseline;
  out.push_back(stage1_treatment);
  out.insert(out.end(), timevarying.begin(), timevarying.end());
  out.push_back(stage2_treatment);
  ColumnSpec ycol;
  ycol.name = outcome;
  ycol.kind = ColumnKind::Numeric;
  out.push_back(ycol);
  return out;
}

const ColumnSpec* NodeSchema::find(const std::string& name) const {
  for (const auto& c : baseline)
    if (c.name == name) return &c;
  if (stage1_treatment.name == name) return &stage1_treatment;
  for (const auto& c : timevarying)
    if (c.name == name) return &c;
  if (stage2_treatment.name == name) return &stage2_treatment;
  return nullptr;
}

void NodeSchema::validate() const {
  std::set<std::string> names;
  for (const auto& c : all_columns()) {
    if (c.name.empty()) throw std::invalid_argument("schema: empty column name");
    if (!names.insert(c.name).second)
      throw std::invalid_argument("schema: duplicate column name '" + c.name + "'");
  }
  if (stage1_treatment.kind != ColumnKind::Categorical || stage1_treatment.levels.empty())
    throw std::invalid_argument("schema: stage1 treatment must be categorical with levels");
  if (stage2_treatment.kind != ColumnKind::Categorical || stage2_treatment.levels.empty())
    throw std::invalid_argument("schema: stage2 treatment must be categorical with levels");
  if (!(outcome_min < outcome_max))
    throw std::invalid_argument("schema: outcome range requires min < max");
  if (!response_column.empty()) {
    const ColumnSpec* r = find(response_column);
    bool in_tv = false;
    for (const auto& c : timevarying) in_tv |= (c.name == response_column);
    if (!r || !in_tv)
      throw std::invalid_argument("schema: response column must be a time-varying column");
    if (r->kind == ColumnKind::Categorical && r->levels != std::vector<std::string>{"0", "1"})
      throw std::invalid_argument("schema: response column levels must be {0,1}");
  }
  for (const auto& a : absorbing_columns) {
    bool in_tv = false;
    for (const auto& c : timevarying) in_tv |= (c.name == a);
    if (!in_tv)
      throw std::invalid_argument("schema: absorbing column '" + a + "' not time-varying");
  }
  // tailoring columns must respect the temporal order
  for (const auto& t : tailoring_stage1) {
    bool ok = false;
    for (const auto& c : baseline) ok |= (c.name == t);
    if (!ok)
      throw std::invalid_argument("schema: stage-1 tailoring column '" + t + "' not baseline");
  }
  for (const auto& t : tailoring_stage2) {
    bool ok = (t == stage1_treatment.name);
    for (const auto& c : timevarying) ok |= (c.name == t);
    if (!ok)
      throw std::invalid_argument("schema: stage-2 tailoring column '" + t +
                                  "' must be A(1) or time-varying");
  }
}

namespace {

ColumnSpec column_from_json(const json& j) {
  ColumnSpec c;
  c.name = j.at("name").get<std::string>();
  if (j.contains("levels")) {
    c.kind = ColumnKind::Categorical;
    c.levels = j.at("levels").get<std::vector<std::string>>();
  } else {
    std::string kind = j.value("kind", "numeric");
    c.kind = (kind == "categorical") ? ColumnKind::Categorical : ColumnKind::Numeric;
  }
  return c;
}

json column_to_json(const ColumnSpec& c) {
  json j;
  j["name"] = c.name;
  if (c.kind == ColumnKind::Categorical)
    j["levels"] = c.levels;
  else
    j["kind"] = "numeric";
  return j;
}

}  // namespace

NodeSchema NodeSchema::from_json(const json& j) {
  NodeSchema s;
  for (const auto& c : j.at("baseline")) s.baseline.push_back(column_from_json(c));
  s.stage1_treatment = column_from_json(j.at("stage1_treatment"));
  s.stage1_treatment.kind = ColumnKind::Categorical;
  for (const auto& c : j.at("timevarying")) s.timevarying.push_back(column_from_json(c));
  s.stage2_treatment = column_from_json(j.at("stage2_treatment"));
  s.stage2_treatment.kind = ColumnKind::Categorical;
  const auto& y = j.at("outcome");
  s.outcome = y.at("name").get<std::string>();
  if (y.contains("range")) {
    s.outcome_min = y.at("range").at(0).get<double>();
    s.outcome_max = y.at("range").at(1).get<double>();
  }
  s.response_column = j.value("response_column", std::string{});
  s.absorbing_columns = j.value("absorbing_columns", std::vector<std::string>{});
  if (j.contains("tailoring")) {
    s.tailoring_stage1 = j.at("tailoring").value("stage1", std::vector<std::string>{});
    s.tailoring_stage2 = j.at("tailoring").value("stage2", std::vector<std::string>{});
  }
  s.validate();
  return s;
}

json NodeSchema::to_json() const {
  json j;
  j["baseline"] = json::array();
  for (const auto& c : baseline) j["baseline"].push_back(column_to_json(c));
  j["stage1_treatment"] = column_to_json(stage1_treatment);
  j["timevarying"] = json::array();
  for (const auto& c : timevarying) j["timevarying"].push_back(column_to_json(c));
  j["stage2_treatment"] = column_to_json(stage2_treatment);
  j["outcome"] = {{"name", outcome}, {"range", {outcome_min, outcome_max}}};
  j["response_column"] = response_column;
  j["absorbing_columns"] = absorbing_columns;
  j["tailoring"] = {{"stage1", tailoring_stage1}, {"stage2", tailoring_stage2}};
  return j;
}

TrialDataset::TrialDataset(NodeSchema schema, std::size_t n) : schema_(std::move(schema)), n_(n) {
  schema_.validate();
  for (const auto& spec : schema_.all_columns()) {
    Column c;
    c.spec = spec;
    if (spec.kind == ColumnKind::Numeric)
      c.num.assign(n_, std::numeric_limits<double>::quiet_NaN());
    else
      c.cat.assign(n_, -1);
    index_[spec.name] = columns_.size();
    columns_.push_back(std::move(c));
  }
}

const TrialDataset::Column& TrialDataset::col(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown column '" + name + "'");
  return columns_[it->second];
}

TrialDataset::Column& TrialDataset::col(const std::string& name) {
  return const_cast<Column&>(static_cast<const TrialDataset*>(this)->col(name));
}

double TrialDataset::numeric(const std::string& name, std::size_t i) const {
  const Column& c = col(name);
  if (c.spec.kind != ColumnKind::Numeric)
    throw std::invalid_argument("column '" + name + "' is not numeric");
  return c.num[i];
}

int TrialDataset::code(const std::string& name, std::size_t i) const {
  const Column& c = col(name);
  if (c.spec.kind != ColumnKind::Categorical)
    throw std::invalid_argument("column '" + name + "' is not categorical");
  return c.cat[i];
}

std::string TrialDataset::label(const std::string& name, std::size_t i) const {
  const Column& c = col(name);
  if (c.spec.kind == ColumnKind::Categorical) {
    int k = c.cat[i];
    if (k < 0) throw std::runtime_error("missing value in column '" + name + "'");
    return c.spec.levels[static_cast<std::size_t>(k)];
  }
  double v = c.num[i];
  if (std::isnan(v)) throw std::runtime_error("missing value in column '" + name + "'");
  // integral numerics print without trailing zeros so they can act as levels
  if (v == std::floor(v) && std::fabs(v) < 1e15) {
    return std::to_string(static_cast<long long>(v));
  }
  std::ostringstream os;
  os << v;
  return os.str();
}

bool TrialDataset::missing(const std::string& name, std::size_t i) const {
  const Column& c = col(name);
  return c.spec.kind == ColumnKind::Numeric ? std::isnan(c.num[i]) : c.cat[i] < 0;
}

int TrialDataset::a1(std::size_t i) const { return code(schema_.stage1_treatment.name, i); }
int TrialDataset::a2(std::size_t i) const { return code(schema_.stage2_treatment.name, i); }

int TrialDataset::response(std::size_t i) const {
  const std::string& rc = schema_.response_column;
  if (rc.empty()) throw std::runtime_error("schema declares no response column");
  const Column& c = col(rc);
  if (c.spec.kind == ColumnKind::Categorical) return c.cat[i];
  double v = c.num[i];
  if (std::isnan(v)) return -1;
  if (v != 0.0 && v != 1.0) throw std::runtime_error("response indicator must be 0/1");
  return static_cast<int>(v);
}

bool TrialDataset::absorbed(std::size_t i) const {
  for (const auto& name : schema_.absorbing_columns) {
    const Column& c = col(name);
    if (c.spec.kind == ColumnKind::Categorical) {
      if (c.cat[i] >= 0 && c.spec.levels[static_cast<std::size_t>(c.cat[i])] == "1") return true;
    } else if (!std::isnan(c.num[i]) && c.num[i] == 1.0) {
      return true;
    }
  }
  return false;
}

void TrialDataset::set_numeric(const std::string& name, std::size_t i, double v) {
  Column& c = col(name);
  if (c.spec.kind != ColumnKind::Numeric)
    throw std::invalid_argument("column '" + name + "' is not numeric");
  c.num[i] = v;
}

void TrialDataset::set_code(const std::string& name, std::size_t i, int codev) {
  Column& c = col(name);
  if (c.spec.kind != ColumnKind::Categorical)
    throw std::invalid_argument("column '" + name + "' is not categorical");
  if (codev < -1 || codev >= static_cast<int>(c.spec.levels.size()))
    throw std::invalid_argument("code out of range for column '" + name + "'");
  c.cat[i] = codev;
}

void TrialDataset::set_label(const std::string& name, std::size_t i, const std::string& label) {
  Column& c = col(name);
  if (c.spec.kind != ColumnKind::Categorical)
    throw std::invalid_argument("column '" + name + "' is not categorical");
  int k = c.spec.level_index(label);
  if (k < 0)
    throw std::invalid_argument("unknown treatment level '" + label + "' for column '" + name +
                                "'");
  c.cat[i] = k;
}

void TrialDataset::set_missing(const std::string& name, std::size_t i) {
  Column& c = col(name);
  if (c.spec.kind == ColumnKind::Numeric)
    c.num[i] = std::numeric_limits<double>::quiet_NaN();
  else
    c.cat[i] = -1;
}

void TrialDataset::validate() const {
  for (std::size_t i = 0; i < n_; ++i) {
    if (missing(schema_.stage1_treatment.name, i))
      throw std::runtime_error("row " + std::to_string(i) + ": missing stage-1 treatment");
    if (missing(schema_.stage2_treatment.name, i) && !absorbed(i))
      throw std::runtime_error("row " + std::to_string(i) +
                               ": stage-2 treatment missing without absorbing event");
    if (!schema_.response_column.empty() && !missing(schema_.response_column, i)) {
      int r = response(i);
      if (r != 0 && r != 1)
        throw std::runtime_error("row " + std::to_string(i) + ": response indicator not binary");
    }
  }
}

bool matches(const std::vector<Condition>& when, const Stratum& stratum) {
  for (const auto& cond : when) {
    auto it = stratum.find(cond.column);
    if (it == stratum.end()) return false;
    if (std::find(cond.in_levels.begin(), cond.in_levels.end(), it->second) ==
        cond.in_levels.end())
      return false;
  }
  return true;
}

double AllowableSetRule::probability_of(const std::string& level) const {
  for (std::size_t k = 0; k < allowed.size(); ++k) {
    if (allowed[k] == level)
      return probabilities.empty() ? 1.0 / static_cast<double>(allowed.size()) : probabilities[k];
  }
  return 0.0;
}

namespace {

std::vector<Condition> conditions_from_json(const json& j) {
  std::vector<Condition> out;
  for (const auto& c : j) {
    Condition cond;
    cond.column = c.at("column").get<std::string>();
    cond.in_levels = c.at("in").get<std::vector<std::string>>();
    out.push_back(std::move(cond));
  }
  return out;
}

json conditions_to_json(const std::vector<Condition>& when) {
  json j = json::array();
  for (const auto& c : when) j.push_back({{"column", c.column}, {"in", c.in_levels}});
  return j;
}

}  // namespace

AllowableSetRule AllowableSetRule::from_json(const json& j) {
  AllowableSetRule r;
  r.stage = j.at("stage").get<int>();
  if (j.contains("when")) r.when = conditions_from_json(j.at("when"));
  r.allowed = j.at("allowed").get<std::vector<std::string>>();
  if (r.allowed.empty()) throw std::invalid_argument("allowable rule: empty allowed set");
  if (j.contains("probabilities")) {
    r.probabilities = j.at("probabilities").get<std::vector<double>>();
    if (r.probabilities.size() != r.allowed.size())
      throw std::invalid_argument("allowable rule: probabilities length mismatch");
  }
  return r;
}

json AllowableSetRule::to_json() const {
  json j;
  j["stage"] = stage;
  j["when"] = conditions_to_json(when);
  j["allowed"] = allowed;
  if (!probabilities.empty()) j["probabilities"] = probabilities;
  return j;
}

const AllowableSetRule& matching_rule(const std::vector<AllowableSetRule>& rules, int stage,
                                      const Stratum& stratum) {
  const AllowableSetRule* found = nullptr;
  for (const auto& r : rules) {
    if (r.stage != stage) continue;
    if (!matches(r.when, stratum)) continue;
    if (found) throw std::runtime_error("multiple allowable-set rules match the same history");
    found = &r;
  }
  if (!found) throw std::runtime_error("no allowable-set rule matches the history");
  return *found;
}

std::vector<std::string> allowable_set(const std::vector<AllowableSetRule>& rules, int stage,
                                       const Stratum& stratum) {
  return matching_rule(rules, stage, stratum).allowed;
}

const std::string& DecisionRule::decide(const Stratum& stratum) const {
  for (const auto& c : cases)
    if (matches(c.when, stratum)) return c.level;
  throw std::runtime_error("decision rule has no case matching the history");
}

EmbeddedRegime EmbeddedRegime::from_json(const json& j) {
  EmbeddedRegime r;
  r.id = j.at("id").get<std::string>();
  for (const auto& c : j.at("rule1")) {
    DecisionCase dc;
    if (c.contains("when")) dc.when = conditions_from_json(c.at("when"));
    dc.level = c.at("level").get<std::string>();
    r.rule1.cases.push_back(std::move(dc));
  }
  for (const auto& c : j.at("rule2")) {
    DecisionCase dc;
    if (c.contains("when")) dc.when = conditions_from_json(c.at("when"));
    dc.level = c.at("level").get<std::string>();
    r.rule2.cases.push_back(std::move(dc));
  }
  return r;
}

json EmbeddedRegime::to_json() const {
  json j;
  j["id"] = id;
  j["rule1"] = json::array();
  for (const auto& c : rule1.cases)
    j["rule1"].push_back({{"when", conditions_to_json(c.when)}, {"level", c.level}});
  j["rule2"] = json::array();
  for (const auto& c : rule2.cases)
    j["rule2"].push_back({{"when", conditions_to_json(c.when)}, {"level", c.level}});
  return j;
}

Stratum record_stratum(const TrialDataset& data, std::size_t i,
                       const std::vector<std::string>& columns,
                       const std::optional<std::string>& a1_override) {
  Stratum s;
  const std::string& a1col = data.schema().stage1_treatment.name;
  for (const auto& c : columns) {
    if (a1_override && c == a1col)
      s[c] = *a1_override;
    else
      s[c] = data.label(c, i);
  }
  return s;
}

std::string regime_stage1_level(const TrialDataset& data, std::size_t i,
                                const EmbeddedRegime& regime) {
  Stratum z1 = record_stratum(data, i, data.schema().tailoring_stage1);
  return regime.rule1.decide(z1);
}

std::string regime_stage2_level(const TrialDataset& data, std::size_t i,
                                const EmbeddedRegime& regime) {
  std::string d1 = regime_stage1_level(data, i, regime);
  Stratum z2 = record_stratum(data, i, data.schema().tailoring_stage2, d1);
  return regime.rule2.decide(z2);
}

bool follows_regime(const TrialDataset& data, std::size_t i, const EmbeddedRegime& regime,
                    int through_stage) {
  const NodeSchema& s = data.schema();
  std::string d1 = regime_stage1_level(data, i, regime);
  if (data.label(s.stage1_treatment.name, i) != d1) return false;
  if (through_stage <= 1) return true;
  if (data.absorbed(i)) return true;  // stage-2 assignment voided: vacuously compliant
  if (data.missing(s.stage2_treatment.name, i))
    throw std::runtime_error("row " + std::to_string(i) +
                             ": stage-2 treatment missing without absorbing event");
  std::string d2 = regime_stage2_level(data, i, regime);
  return data.label(s.stage2_treatment.name, i) == d2;
}

namespace {

// Enumerates the level combinations of a set of categorical columns.
std::vector<Stratum> cross_strata(const NodeSchema& schema,
                                  const std::vector<std::string>& columns) {
  std::vector<Stratum> out{Stratum{}};
  for (const auto& name : columns) {
    const ColumnSpec* c = schema.find(name);
    if (!c || c->kind != ColumnKind::Categorical) {
      // binary numeric indicators (e.g. the response) enumerate as {0,1}
      std::vector<std::string> levels{"0", "1"};
      std::vector<Stratum> next;
      for (const auto& s : out)
        for (const auto& lv : levels) {
          Stratum t = s;
          t[name] = lv;
          next.push_back(std::move(t));
        }
      out = std::move(next);
      continue;
    }
    std::vector<Stratum> next;
    for (const auto& s : out)
      for (const auto& lv : c->levels) {
        Stratum t = s;
        t[name] = lv;
        next.push_back(std::move(t));
      }
    out = std::move(next);
  }
  return out;
}

}  // namespace

std::vector<EmbeddedRegime> enumerate_embedded_regimes(const std::vector<AllowableSetRule>& rules,
                                                       const NodeSchema& schema) {
  std::vector<const AllowableSetRule*> s1rules, s2rules;
  for (const auto& r : rules)
    (r.stage == 1 ? s1rules : s2rules).push_back(&r);
  if (s1rules.empty() || s2rules.empty())
    throw std::invalid_argument("regime enumeration requires rules for both stages");

  // Odometer digits: one per rule, stage-1 rules first (varying fastest),
  // then stage-2 rules in declaration order.
  std::vector<const AllowableSetRule*> digits = s1rules;
  digits.insert(digits.end(), s2rules.begin(), s2rules.end());
  std::vector<std::size_t> choice(digits.size(), 0);

  const std::vector<Stratum> z1strata = cross_strata(schema, schema.tailoring_stage1);
  std::vector<std::string> z2cols;  // stage-2 tailoring minus A(1), which rule1 fixes
  for (const auto& c : schema.tailoring_stage2)
    if (c != schema.stage1_treatment.name) z2cols.push_back(c);
  const std::vector<Stratum> z2strata = cross_strata(schema, z2cols);

  std::vector<EmbeddedRegime> out;
  std::set<std::string> seen;
  bool done = false;
  std::size_t counter = 0;
  while (!done) {
    EmbeddedRegime reg;
    for (std::size_t d = 0; d < s1rules.size(); ++d) {
      DecisionCase dc;
      dc.when = s1rules[d]->when;
      dc.level = s1rules[d]->allowed[choice[d]];
      reg.rule1.cases.push_back(std::move(dc));
    }
    for (std::size_t d = 0; d < s2rules.size(); ++d) {
      DecisionCase dc;
      dc.when = s2rules[d]->when;
      dc.level = s2rules[d]->allowed[choice[s1rules.size() + d]];
      reg.rule2.cases.push_back(std::move(dc));
    }

    // Canonical form: rule outputs on reachable strata only.
    std::ostringstream key;
    for (const auto& z1 : z1strata) {
      const std::string& d1 = reg.rule1.decide(z1);
      key << "|1:";
      for (const auto& [k, v] : z1) key << k << "=" << v << ",";
      key << "->" << d1;
      for (const auto& z2base : z2strata) {
        Stratum z2 = z2base;
        z2[schema.stage1_treatment.name] = d1;
        // skip strata no allowable rule covers (unreachable by design)
        const AllowableSetRule* rule = nullptr;
        for (const auto* r : s2rules)
          if (matches(r->when, z2)) {
            rule = r;
            break;
          }
        if (!rule) continue;
        key << "|2:";
        for (const auto& [k, v] : z2) key << k << "=" << v << ",";
        key << "->" << reg.rule2.decide(z2);
      }
    }
    if (seen.insert(key.str()).second) {
      reg.id = "regime_" + std::to_string(out.size() + 1);
      out.push_back(std::move(reg));
    }
    ++counter;
    if (counter > 100000) throw std::runtime_error("regime enumeration overflow");

    // advance odometer, first digit fastest
    std::size_t d = 0;
    for (; d < digits.size(); ++d) {
      if (++choice[d] < digits[d]->allowed.size()) break;
      choice[d] = 0;
    }
    done = (d == digits.size());
  }
  return out;
}

namespace {

// RFC-4180 CSV row reader handling quoted fields and embedded newlines.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  int ch;
  while ((ch = in.get()) != EOF) {
    any = true;
    char c = static_cast<char>(ch);
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else if (c == '\r') {
      // swallow; handled with the following \n
    } else if (c == '\n') {
      fields.push_back(field);
      return true;
    } else {
      field.push_back(c);
    }
  }
  if (!any) return false;
  fields.push_back(field);
  return true;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

}  // namespace

TrialDataset load_csv(const std::string& path, const NodeSchema& schema, LoadReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file '" + path + "'");

  std::vector<std::string> header;
  if (!read_csv_record(in, header)) throw std::runtime_error("empty CSV '" + path + "'");

  const std::vector<ColumnSpec> cols = schema.all_columns();
  std::map<std::string, std::size_t> pos;
  for (std::size_t k = 0; k < header.size(); ++k) pos[header[k]] = k;
  for (const auto& c : cols)
    if (!pos.count(c.name))
      throw std::runtime_error("missing required column '" + c.name + "' in '" + path + "'");

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> rec;
  while (read_csv_record(in, rec)) {
    if (rec.size() == 1 && rec[0].empty()) continue;  // trailing blank line
    if (rec.size() != header.size())
      throw std::runtime_error("malformed row " + std::to_string(rows.size() + 1) + " in '" +
                               path + "': expected " + std::to_string(header.size()) +
                               " fields, got " + std::to_string(rec.size()));
    rows.push_back(rec);
  }

  TrialDataset data(schema, rows.size());
  std::size_t missing_y = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (const auto& c : cols) {
      const std::string& cell = rows[i][pos[c.name]];
      if (cell.empty()) {
        data.set_missing(c.name, i);
        if (c.name == schema.outcome) ++missing_y;
        continue;
      }
      if (c.kind == ColumnKind::Categorical) {
        try {
          data.set_label(c.name, i, cell);
        } catch (const std::invalid_argument& e) {
          throw std::runtime_error("row " + std::to_string(i + 1) + ": " + e.what());
        }
      } else {
        try {
          std::size_t used = 0;
          double v = std::stod(cell, &used);
          if (used != cell.size()) throw std::invalid_argument("trailing characters");
          data.set_numeric(c.name, i, v);
        } catch (const std::exception&) {
          throw std::runtime_error("row " + std::to_string(i + 1) + ": malformed numeric value '" +
                                   cell + "' in column '" + c.name + "'");
        }
      }
    }
  }
  data.validate();
  if (report) {
    report->rows = rows.size();
    report->missing_outcomes = missing_y;
  }
  return data;
}

void write_csv(const TrialDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file '" + path + "'");
  const auto cols = data.schema().all_columns();
  for (std::size_t k = 0; k < cols.size(); ++k)
    out << (k ? "," : "") << csv_escape(cols[k].name);
  out << "\n";
  std::ostringstream cell;
  cell.precision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (k) out << ",";
      if (data.missing(cols[k].name, i)) continue;
      if (cols[k].kind == ColumnKind::Categorical) {
        out << csv_escape(data.label(cols[k].name, i));
      } else {
        cell.str("");
        cell << data.numeric(cols[k].name, i);
        out << cell.str();
      }
    }
    out << "\n";
  }
}

TrialDataset complete_case_filter(const TrialDataset& data, FilterReport* report) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!data.y_missing(i)) keep.push_back(i);
  TrialDataset out(data.schema(), keep.size());
  const auto cols = data.schema().all_columns();
  for (std::size_t j = 0; j < keep.size(); ++j) {
    for (const auto& c : cols) {
      if (data.missing(c.name, keep[j])) {
        out.set_missing(c.name, j);
      } else if (c.kind == ColumnKind::Categorical) {
        out.set_code(c.name, j, data.code(c.name, keep[j]));
      } else {
        out.set_numeric(c.name, j, data.numeric(c.name, keep[j]));
      }
    }
  }
  if (report) {
    report->dropped = data.size() - keep.size();
    report->empty_result = keep.empty();
  }
  return out;
}

void check_allowability(const TrialDataset& data, const std::vector<AllowableSetRule>& rules) {
  const NodeSchema& s = data.schema();
  for (std::size_t i = 0; i < data.size(); ++i) {
    Stratum z1 = record_stratum(data, i, s.tailoring_stage1);
    const auto& allowed1 = allowable_set(rules, 1, z1);
    std::string a1lab = data.label(s.stage1_treatment.name, i);
    if (std::find(allowed1.begin(), allowed1.end(), a1lab) == allowed1.end())
      throw std::runtime_error("row " + std::to_string(i) + ": stage-1 treatment '" + a1lab +
                               "' outside allowable set");
    if (data.absorbed(i) || data.missing(s.stage2_treatment.name, i)) continue;
    Stratum z2 = record_stratum(data, i, s.tailoring_stage2);
    const auto& allowed2 = allowable_set(rules, 2, z2);
    std::string a2lab = data.label(s.stage2_treatment.name, i);
    if (std::find(allowed2.begin(), allowed2.end(), a2lab) == allowed2.end())
      throw std::runtime_error("row " + std::to_string(i) + ": stage-2 treatment '" + a2lab +
                               "' outside allowable set");
  }
}

}  // namespace smartdtr
