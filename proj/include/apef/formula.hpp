#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace apef {

enum class ValueType { kScalar, kSeries };

struct FormulaNode {
  enum class Kind { kNumber, kName, kNegate, kBinary, kCall, kCompare };
  Kind kind = Kind::kNumber;
  ValueType type = ValueType::kScalar;
  double number = 0.0;
  std::string name;  // input/metric name, function name, or operator text
  std::vector<std::shared_ptr<const FormulaNode>> args;
  std::size_t position = 0;  // 0-based offset into the source
};

// Names a formula may reference. Series inputs are pred/obs and, for a
// second variable, pred2/obs2. Scalar names are metric values (used by the
// aggregation formula).
struct FormulaScope {
  bool series_inputs = true;
  std::set<std::string> scalar_names;

  static FormulaScope metric() { return {}; }
  static FormulaScope aggregation(std::set<std::string> metric_names) { return {false, std::move(metric_names)}; }
};

// An immutable parsed expression. Always scalar-valued.
class Formula {
 public:
  Formula() = default;
  // Throws Error(kFormulaSyntaxError) with the offending position, or for
  // unknown names, bad arity and type errors.
  static Formula parse(const std::string& source, const FormulaScope& scope = FormulaScope::metric());

  const std::string& source() const { return source_; }
  const FormulaNode& root() const { return *root_; }
  bool empty() const { return !root_; }
  // Operator and call nodes; literals and names are not counted.
  std::size_t operation_count() const;
  std::size_t node_count() const;
  // Names of the series inputs and scalar names used.
  std::set<std::string> names() const;
  // Canonical fully parenthesized rendering.
  std::string canonical() const;

  friend bool operator==(const Formula& a, const Formula& b) { return a.source_ == b.source_; }

 private:
  std::string source_;
  std::shared_ptr<const FormulaNode> root_;
};

struct FormulaInputs {
  std::span<const double> pred;
  std::span<const double> obs;
  std::span<const double> pred2;
  std::span<const double> obs2;
  std::map<std::string, double> scalars;
};

// Throws Error(kEvaluationError) on division by zero, sqrt of a negative
// number, non-finite results, mismatched lengths, a missing input, or
// peak_period_length on a series without a rise-fall pattern.
double eval_formula(const Formula& f, const FormulaInputs& inputs);

// The builtin function names, for prompts and docs.
std::vector<std::string> formula_functions();

}  // namespace apef
