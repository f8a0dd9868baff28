#include "apef/formula.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <sstream>

#include "apef/error.hpp"
#include "apef/io.hpp"
#include "apef/kernels.hpp"
#include "apef/metrics.hpp"
#include "apef/series.hpp"
#include "apef/stats.hpp"

namespace apef {

namespace {

using NodePtr = std::shared_ptr<const FormulaNode>;

const std::set<std::string> kSeriesInputs{"pred", "obs", "pred2", "obs2"};

enum class Sig {
  kUnaryMap,     // x -> x, elementwise
  kMinMax,       // series -> scalar, or (x, y) -> elementwise
  kReduce,       // series -> scalar
  kPairReduce,   // (series, series) -> scalar
  kCountWhere,   // comparison -> scalar
};

const std::map<std::string, Sig>& functions() {
  static const std::map<std::string, Sig> table{
      {"abs", Sig::kUnaryMap},
      {"sqrt", Sig::kUnaryMap},
      {"exp", Sig::kUnaryMap},
      {"clamp01", Sig::kUnaryMap},
      {"min", Sig::kMinMax},
      {"max", Sig::kMinMax},
      {"mean", Sig::kReduce},
      {"sum", Sig::kReduce},
      {"len", Sig::kReduce},
      {"peak_count", Sig::kReduce},
      {"peak_period_length", Sig::kReduce},
      {"rmse", Sig::kPairReduce},
      {"mae", Sig::kPairReduce},
      {"corr_spearman", Sig::kPairReduce},
      {"derivative_mse", Sig::kPairReduce},
      {"second_derivative_mse", Sig::kPairReduce},
      {"count_where", Sig::kCountWhere},
  };
  return table;
}

struct Token {
  enum class Kind { kNumber, kIdent, kOp, kEnd } kind = Kind::kEnd;
  std::string text;
  double number = 0.0;
  std::size_t pos = 0;
};

[[noreturn]] void syntax_error(std::size_t pos, const std::string& what) {
  throw Error(ErrorCode::kFormulaSyntaxError, "at position " + std::to_string(pos) + ": " + what);
}

std::vector<Token> tokenize(const std::string& s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    Token t;
    t.pos = i;
    if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
      std::size_t j = i;
      while (j < s.size() && (std::isdigit(static_cast<unsigned char>(s[j])) || s[j] == '.')) ++j;
      if (j < s.size() && (s[j] == 'e' || s[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < s.size() && (s[k] == '+' || s[k] == '-')) ++k;
        if (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) {
          while (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) ++k;
          j = k;
        }
      }
      t.kind = Token::Kind::kNumber;
      t.text = s.substr(i, j - i);
      std::size_t used = 0;
      try {
        t.number = std::stod(t.text, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != t.text.size()) syntax_error(i, "malformed number '" + t.text + "'");
      i = j;
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
      t.kind = Token::Kind::kIdent;
      t.text = s.substr(i, j - i);
      i = j;
    } else {
      static const char* two[] = {"<=", ">=", "==", "!="};
      t.kind = Token::Kind::kOp;
      for (const char* op : two) {
        if (s.compare(i, 2, op) == 0) t.text = op;
      }
      if (t.text.empty()) {
        if (std::string("+-*/(),<>").find(c) == std::string::npos) {
          syntax_error(i, std::string("unexpected character '") + c + "'");
        }
        t.text = std::string(1, c);
      }
      i += t.text.size();
    }
    out.push_back(std::move(t));
  }
  Token end;
  end.pos = s.size();
  out.push_back(end);
  return out;
}

class Parser {
 public:
  Parser(const std::string& source, const FormulaScope& scope) : tokens_(tokenize(source)), scope_(scope) {}

  NodePtr parse() {
    NodePtr root = expression();
    reject_stray_comparison();
    if (peek().kind != Token::Kind::kEnd) syntax_error(peek().pos, "unexpected '" + peek().text + "'");
    if (root->type != ValueType::kScalar) syntax_error(0, "formula must evaluate to a scalar, not a series");
    return root;
  }

 private:
  const Token& peek() const { return tokens_[i_]; }
  bool is_op(const char* op) const { return peek().kind == Token::Kind::kOp && peek().text == op; }
  Token take() { return tokens_[i_++]; }
  bool at_comparison() const {
    const std::string& t = peek().text;
    return peek().kind == Token::Kind::kOp && (t == "<" || t == ">" || t == "<=" || t == ">=" || t == "==" || t == "!=");
  }
  void reject_stray_comparison() const {
    if (at_comparison()) {
      syntax_error(peek().pos, "comparison '" + peek().text + "' is only allowed inside count_where(...)");
    }
  }
  void expect(const char* op) {
    if (!is_op(op)) reject_stray_comparison();
    if (!is_op(op)) {
      syntax_error(peek().pos, std::string("expected '") + op + "'" +
                                   (peek().kind == Token::Kind::kEnd ? " before end of input" : ", found '" + peek().text + "'"));
    }
    ++i_;
  }

  static NodePtr make(FormulaNode n) { return std::make_shared<const FormulaNode>(std::move(n)); }

  static ValueType join(ValueType a, ValueType b) {
    return a == ValueType::kSeries || b == ValueType::kSeries ? ValueType::kSeries : ValueType::kScalar;
  }

  NodePtr expression() {
    NodePtr left = term();
    while (is_op("+") || is_op("-")) {
      const Token op = take();
      NodePtr right = term();
      left = binary(op, left, right);
    }
    return left;
  }

  NodePtr term() {
    NodePtr left = unary();
    while (is_op("*") || is_op("/")) {
      const Token op = take();
      NodePtr right = unary();
      left = binary(op, left, right);
    }
    return left;
  }

  NodePtr binary(const Token& op, NodePtr a, NodePtr b) {
    FormulaNode n;
    n.kind = FormulaNode::Kind::kBinary;
    n.name = op.text;
    n.position = op.pos;
    n.type = join(a->type, b->type);
    n.args = {std::move(a), std::move(b)};
    return make(std::move(n));
  }

  NodePtr unary() {
    if (is_op("-")) {
      const Token op = take();
      NodePtr inner = unary();
      FormulaNode n;
      n.kind = FormulaNode::Kind::kNegate;
      n.name = "-";
      n.position = op.pos;
      n.type = inner->type;
      n.args = {std::move(inner)};
      return make(std::move(n));
    }
    if (is_op("+")) {
      take();
      return unary();
    }
    return primary();
  }

  NodePtr primary() {
    const Token t = peek();
    if (t.kind == Token::Kind::kNumber) {
      take();
      FormulaNode n;
      n.kind = FormulaNode::Kind::kNumber;
      n.number = t.number;
      n.name = t.text;
      n.position = t.pos;
      return make(std::move(n));
    }
    if (is_op("(")) {
      take();
      NodePtr inner = expression();
      expect(")");
      return inner;
    }
    if (t.kind == Token::Kind::kIdent) {
      take();
      if (is_op("(")) return call(t);
      return name(t);
    }
    if (t.kind == Token::Kind::kEnd) syntax_error(t.pos, "unexpected end of formula");
    if (t.text == "<" || t.text == ">" || t.text == "<=" || t.text == ">=" || t.text == "==" || t.text == "!=") {
      syntax_error(t.pos, "comparison '" + t.text + "' is only allowed inside count_where(...)");
    }
    syntax_error(t.pos, "unexpected '" + t.text + "'");
  }

  NodePtr name(const Token& t) {
    FormulaNode n;
    n.kind = FormulaNode::Kind::kName;
    n.name = t.text;
    n.position = t.pos;
    if (scope_.series_inputs && kSeriesInputs.count(t.text)) {
      n.type = ValueType::kSeries;
    } else if (scope_.scalar_names.count(t.text)) {
      n.type = ValueType::kScalar;
    } else if (functions().count(t.text)) {
      syntax_error(t.pos, "function '" + t.text + "' needs an argument list");
    } else {
      syntax_error(t.pos, "unknown name '" + t.text + "'");
    }
    return make(std::move(n));
  }

  NodePtr comparison() {
    NodePtr left = expression();
    static const char* ops[] = {"<=", ">=", "==", "!=", "<", ">"};
    for (const char* op : ops) {
      if (is_op(op)) {
        const Token tok = take();
        NodePtr right = expression();
        FormulaNode n;
        n.kind = FormulaNode::Kind::kCompare;
        n.name = tok.text;
        n.position = tok.pos;
        n.type = join(left->type, right->type);
        n.args = {std::move(left), std::move(right)};
        return make(std::move(n));
      }
    }
    syntax_error(peek().pos, "count_where needs a comparison such as abs(pred - obs) > 1");
  }

  NodePtr call(const Token& fn) {
    const auto it = functions().find(fn.text);
    if (it == functions().end()) syntax_error(fn.pos, "unknown function '" + fn.text + "'");
    const Sig sig = it->second;
    expect("(");
    std::vector<NodePtr> args;
    if (!is_op(")")) {
      do {
        args.push_back(sig == Sig::kCountWhere ? comparison() : expression());
      } while (is_op(",") && (take(), true));
    }
    expect(")");

    auto arity = [&](std::size_t lo, std::size_t hi) {
      if (args.size() < lo || args.size() > hi) {
        syntax_error(fn.pos, fn.text + " takes " + (lo == hi ? std::to_string(lo) : std::to_string(lo) + " or " + std::to_string(hi)) +
                                 " argument(s), got " + std::to_string(args.size()));
      }
    };
    auto need_series = [&](std::size_t k) {
      if (args[k]->type != ValueType::kSeries) {
        syntax_error(args[k]->position, fn.text + " argument " + std::to_string(k + 1) + " must be a series");
      }
    };

    FormulaNode n;
    n.kind = FormulaNode::Kind::kCall;
    n.name = fn.text;
    n.position = fn.pos;
    switch (sig) {
      case Sig::kUnaryMap:
        arity(1, 1);
        n.type = args[0]->type;
        break;
      case Sig::kMinMax:
        arity(1, 2);
        if (args.size() == 1) {
          need_series(0);
          n.type = ValueType::kScalar;
        } else {
          n.type = join(args[0]->type, args[1]->type);
        }
        break;
      case Sig::kReduce:
        arity(1, 1);
        need_series(0);
        n.type = ValueType::kScalar;
        break;
      case Sig::kPairReduce:
        arity(2, 2);
        need_series(0);
        need_series(1);
        n.type = ValueType::kScalar;
        break;
      case Sig::kCountWhere:
        arity(1, 1);
        n.type = ValueType::kScalar;
        break;
    }
    n.args = std::move(args);
    return make(std::move(n));
  }

  std::vector<Token> tokens_;
  std::size_t i_ = 0;
  const FormulaScope& scope_;
};

void count_nodes(const FormulaNode& n, std::size_t& ops, std::size_t& all) {
  ++all;
  if (n.kind != FormulaNode::Kind::kNumber && n.kind != FormulaNode::Kind::kName) ++ops;
  for (const auto& a : n.args) count_nodes(*a, ops, all);
}

void collect_names(const FormulaNode& n, std::set<std::string>& out) {
  if (n.kind == FormulaNode::Kind::kName) out.insert(n.name);
  for (const auto& a : n.args) collect_names(*a, out);
}

void render(const FormulaNode& n, std::ostringstream& out) {
  switch (n.kind) {
    case FormulaNode::Kind::kNumber: out << io::format_double(n.number); break;
    case FormulaNode::Kind::kName: out << n.name; break;
    case FormulaNode::Kind::kNegate:
      out << "(-";
      render(*n.args[0], out);
      out << ")";
      break;
    case FormulaNode::Kind::kCompare:
      render(*n.args[0], out);
      out << " " << n.name << " ";
      render(*n.args[1], out);
      break;
    case FormulaNode::Kind::kBinary:
      out << "(";
      render(*n.args[0], out);
      out << " " << n.name << " ";
      render(*n.args[1], out);
      out << ")";
      break;
    case FormulaNode::Kind::kCall:
      out << n.name << "(";
      for (std::size_t k = 0; k < n.args.size(); ++k) {
        if (k) out << ", ";
        render(*n.args[k], out);
      }
      out << ")";
      break;
  }
}

// ---- evaluation ----

struct Value {
  ValueType type = ValueType::kScalar;
  double s = 0.0;
  std::vector<double> v;

  static Value scalar(double x) { return {ValueType::kScalar, x, {}}; }
  static Value series(std::vector<double> x) { return {ValueType::kSeries, 0.0, std::move(x)}; }
  std::size_t size() const { return v.size(); }
};

[[noreturn]] void eval_error(const FormulaNode& n, const std::string& what) {
  throw Error(ErrorCode::kEvaluationError, n.name + " at position " + std::to_string(n.position) + ": " + what);
}

Value map2(const FormulaNode& n, const Value& a, const Value& b, const std::function<double(double, double)>& f) {
  if (a.type == ValueType::kScalar && b.type == ValueType::kScalar) return Value::scalar(f(a.s, b.s));
  if (a.type == ValueType::kSeries && b.type == ValueType::kSeries && a.size() != b.size()) {
    eval_error(n, "series lengths differ (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  const std::size_t len = a.type == ValueType::kSeries ? a.size() : b.size();
  std::vector<double> out(len);
  for (std::size_t t = 0; t < len; ++t) {
    out[t] = f(a.type == ValueType::kSeries ? a.v[t] : a.s, b.type == ValueType::kSeries ? b.v[t] : b.s);
  }
  return Value::series(std::move(out));
}

Value map1(const Value& a, const std::function<double(double)>& f) {
  if (a.type == ValueType::kScalar) return Value::scalar(f(a.s));
  std::vector<double> out(a.v.size());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = f(a.v[t]);
  return Value::series(std::move(out));
}

class Evaluator {
 public:
  explicit Evaluator(const FormulaInputs& in) : in_(in) {}

  Value eval(const FormulaNode& n) {
    switch (n.kind) {
      case FormulaNode::Kind::kNumber: return Value::scalar(n.number);
      case FormulaNode::Kind::kName: return lookup(n);
      case FormulaNode::Kind::kNegate: return map1(eval(*n.args[0]), [](double x) { return -x; });
      case FormulaNode::Kind::kBinary: return binary(n);
      case FormulaNode::Kind::kCompare: return compare(n);
      case FormulaNode::Kind::kCall: return call(n);
    }
    eval_error(n, "unknown node");
  }

 private:
  Value lookup(const FormulaNode& n) {
    std::span<const double> s;
    if (n.name == "pred") s = in_.pred;
    else if (n.name == "obs") s = in_.obs;
    else if (n.name == "pred2") s = in_.pred2;
    else if (n.name == "obs2") s = in_.obs2;
    else {
      const auto it = in_.scalars.find(n.name);
      if (it == in_.scalars.end()) eval_error(n, "no value for '" + n.name + "'");
      return Value::scalar(it->second);
    }
    if (s.empty()) eval_error(n, "input '" + n.name + "' is not available");
    return Value::series({s.begin(), s.end()});
  }

  Value binary(const FormulaNode& n) {
    const Value a = eval(*n.args[0]);
    const Value b = eval(*n.args[1]);
    switch (n.name[0]) {
      case '+': return map2(n, a, b, [](double x, double y) { return x + y; });
      case '-': return map2(n, a, b, [](double x, double y) { return x - y; });
      case '*': return map2(n, a, b, [](double x, double y) { return x * y; });
      default:
        return map2(n, a, b, [&](double x, double y) {
          if (y == 0.0) eval_error(n, "division by zero");
          return x / y;
        });
    }
  }

  Value compare(const FormulaNode& n) {
    const Value a = eval(*n.args[0]);
    const Value b = eval(*n.args[1]);
    const std::string& op = n.name;
    return map2(n, a, b, [&](double x, double y) {
      bool r = false;
      if (op == "<") r = x < y;
      else if (op == "<=") r = x <= y;
      else if (op == ">") r = x > y;
      else if (op == ">=") r = x >= y;
      else if (op == "==") r = x == y;
      else r = x != y;
      return r ? 1.0 : 0.0;
    });
  }

  static void check_pair(const FormulaNode& n, const Value& a, const Value& b, std::size_t min_len) {
    if (a.size() != b.size()) eval_error(n, "series lengths differ");
    if (a.size() < min_len) eval_error(n, "needs series of length >= " + std::to_string(min_len));
  }

  Value call(const FormulaNode& n) {
    const std::string& f = n.name;
    if (f == "count_where") {
      const Value mask = eval(*n.args[0]);
      if (mask.type == ValueType::kScalar) return Value::scalar(mask.s);
      double c = 0.0;
      for (double m : mask.v) c += m;
      return Value::scalar(c);
    }
    std::vector<Value> a;
    for (const auto& arg : n.args) a.push_back(eval(*arg));

    if (f == "abs") return map1(a[0], [](double x) { return std::fabs(x); });
    if (f == "exp") return map1(a[0], [](double x) { return std::exp(x); });
    if (f == "clamp01") return map1(a[0], [](double x) { return std::clamp(x, 0.0, 1.0); });
    if (f == "sqrt") {
      return map1(a[0], [&](double x) {
        if (x < 0.0) eval_error(n, "square root of a negative number");
        return std::sqrt(x);
      });
    }
    if (f == "min" || f == "max") {
      const bool is_min = f == "min";
      if (a.size() == 1) {
        if (a[0].v.empty()) eval_error(n, "empty series");
        return Value::scalar(is_min ? *std::min_element(a[0].v.begin(), a[0].v.end())
                                    : *std::max_element(a[0].v.begin(), a[0].v.end()));
      }
      return map2(n, a[0], a[1], [is_min](double x, double y) { return is_min ? std::min(x, y) : std::max(x, y); });
    }
    const std::vector<double>& x = a[0].v;
    if (f == "len") return Value::scalar(static_cast<double>(x.size()));
    if (f == "sum") return Value::scalar(kernels::sum(x));
    if (f == "mean") {
      if (x.empty()) eval_error(n, "empty series");
      return Value::scalar(mean(x));
    }
    if (f == "peak_count") return Value::scalar(static_cast<double>(detect_peaks(x).indices.size()));
    if (f == "peak_period_length") {
      const auto seg = try_segment(x);
      if (!seg) eval_error(n, "series has no rise-fall pattern, peak period undefined");
      return Value::scalar(static_cast<double>(seg->peak_period_length()));
    }
    const std::vector<double>& y = a[1].v;
    if (f == "rmse") {
      check_pair(n, a[0], a[1], 1);
      return Value::scalar(rmse(x, y));
    }
    if (f == "mae") {
      check_pair(n, a[0], a[1], 1);
      return Value::scalar(mae(x, y));
    }
    if (f == "corr_spearman") {
      check_pair(n, a[0], a[1], 2);
      try {
        return Value::scalar(spearman(x, y));
      } catch (const Error& e) {
        eval_error(n, e.what());
      }
    }
    if (f == "derivative_mse") {
      check_pair(n, a[0], a[1], 2);
      return Value::scalar(kernels::diff1_sq_diff(x, y) / static_cast<double>(x.size() - 1));
    }
    if (f == "second_derivative_mse") {
      check_pair(n, a[0], a[1], 3);
      return Value::scalar(kernels::diff2_sq_diff(x, y) / static_cast<double>(x.size() - 2));
    }
    eval_error(n, "unknown function");
  }

  const FormulaInputs& in_;
};

}  // namespace

Formula Formula::parse(const std::string& source, const FormulaScope& scope) {
  Formula f;
  f.source_ = source;
  Parser p(source, scope);
  f.root_ = p.parse();
  return f;
}

std::size_t Formula::operation_count() const {
  std::size_t ops = 0, all = 0;
  if (root_) count_nodes(*root_, ops, all);
  return ops;
}

std::size_t Formula::node_count() const {
  std::size_t ops = 0, all = 0;
  if (root_) count_nodes(*root_, ops, all);
  return all;
}

std::set<std::string> Formula::names() const {
  std::set<std::string> out;
  if (root_) collect_names(*root_, out);
  return out;
}

std::string Formula::canonical() const {
  std::ostringstream out;
  if (root_) render(*root_, out);
  return out.str();
}

double eval_formula(const Formula& f, const FormulaInputs& inputs) {
  if (f.empty()) throw Error(ErrorCode::kEvaluationError, "empty formula");
  Evaluator ev(inputs);
  const Value v = ev.eval(f.root());
  if (!std::isfinite(v.s)) throw Error(ErrorCode::kEvaluationError, "formula result is not finite");
  return v.s;
}

std::vector<std::string> formula_functions() {
  std::vector<std::string> out;
  for (const auto& [name, sig] : functions()) out.push_back(name);
  return out;
}

}  // namespace apef
