#pragma once
// Feature-transformation token language.
//
// A transformed feature is an expression over feature tokens (f1, f2, ...)
// and operator tokens. A set of transformed features is a comma separated
// sequence, e.g. "(f1*f2),log(f3),(f4/f5)". There are no numeric literals
// and no unary minus: the vocabulary is exactly features plus operators.
//
//   sequence := expr (',' expr)*
//   expr     := term (('+' | '-') term)*
//   term     := factor (('*' | '/') factor)*
//   factor   := FEATURE | OPNAME '(' expr ')' | '(' expr ')'

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace duet {

enum class BinaryOp { add, sub, mul, div };
enum class UnaryOp { log, sqrt, square, abs, reciprocal, sin, cos, tanh };

inline constexpr std::array<BinaryOp, 4> kAllBinaryOps{BinaryOp::add, BinaryOp::sub, BinaryOp::mul,
                                                       BinaryOp::div};
inline constexpr std::array<UnaryOp, 8> kAllUnaryOps{
    UnaryOp::log, UnaryOp::sqrt, UnaryOp::square,     UnaryOp::abs,
    UnaryOp::reciprocal, UnaryOp::sin, UnaryOp::cos, UnaryOp::tanh};

inline constexpr std::string_view op_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::div: return "div";
  }
  return "?";
}

inline constexpr char op_symbol(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return '+';
    case BinaryOp::sub: return '-';
    case BinaryOp::mul: return '*';
    case BinaryOp::div: return '/';
  }
  return '?';
}

inline constexpr std::string_view op_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::log: return "log";
    case UnaryOp::sqrt: return "sqrt";
    case UnaryOp::square: return "square";
    case UnaryOp::abs: return "abs";
    case UnaryOp::reciprocal: return "reciprocal";
    case UnaryOp::sin: return "sin";
    case UnaryOp::cos: return "cos";
    case UnaryOp::tanh: return "tanh";
  }
  return "?";
}

// The operator vocabulary O available to the generator.
class OperatorSet {
 public:
  OperatorSet(std::set<BinaryOp> binary, std::set<UnaryOp> unary)
      : binary_(std::move(binary)), unary_(std::move(unary)) {
    if (binary_.empty() && unary_.empty()) {
      throw std::invalid_argument("operator set must not be empty");
    }
  }

  static OperatorSet standard() {
    return {{kAllBinaryOps.begin(), kAllBinaryOps.end()}, {kAllUnaryOps.begin(), kAllUnaryOps.end()}};
  }

  // Accepts serialized names ("add", "log", ...) or binary symbols ("+", ...).
  static OperatorSet from_names(const std::vector<std::string>& names) {
    std::set<BinaryOp> binary;
    std::set<UnaryOp> unary;
    for (const auto& raw : names) {
      std::string name = raw;
      std::transform(name.begin(), name.end(), name.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      bool found = false;
      for (auto op : kAllBinaryOps) {
        if (name == op_name(op) || (name.size() == 1 && name[0] == op_symbol(op))) {
          binary.insert(op);
          found = true;
        }
      }
      for (auto op : kAllUnaryOps) {
        if (name == op_name(op)) {
          unary.insert(op);
          found = true;
        }
      }
      if (!found) throw std::invalid_argument("unknown operator name '" + raw + "'");
    }
    return {std::move(binary), std::move(unary)};
  }

  bool has(BinaryOp op) const { return binary_.count(op) != 0; }
  bool has(UnaryOp op) const { return unary_.count(op) != 0; }
  const std::set<BinaryOp>& binary() const { return binary_; }
  const std::set<UnaryOp>& unary() const { return unary_; }

  std::optional<UnaryOp> find_unary(std::string_view name) const {
    for (auto op : unary_) {
      if (op_name(op) == name) return op;
    }
    return std::nullopt;
  }

 private:
  std::set<BinaryOp> binary_;
  std::set<UnaryOp> unary_;
};

// Immutable expression tree with shared structure; copies are cheap.
class Expr {
 public:
  enum class Kind { feature, unary, binary };

  // `index` is the 1-based column ordinal of the referenced feature.
  static Expr feature(std::size_t index) {
    if (index == 0) throw std::invalid_argument("feature index must be >= 1");
    auto n = std::make_shared<Node>();
    n->kind = Kind::feature;
    n->index = index;
    n->depth = 1;
    return Expr(std::move(n));
  }

  static Expr unary(UnaryOp op, const Expr& child) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::unary;
    n->uop = op;
    n->lhs = child.node_;
    n->depth = child.depth() + 1;
    return Expr(std::move(n));
  }

  static Expr binary(BinaryOp op, const Expr& left, const Expr& right) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::binary;
    n->bop = op;
    n->lhs = left.node_;
    n->rhs = right.node_;
    n->depth = std::max(left.depth(), right.depth()) + 1;
    return Expr(std::move(n));
  }

  Kind kind() const { return node_->kind; }
  std::size_t feature_index() const { return node_->index; }
  UnaryOp unary_op() const { return node_->uop; }
  BinaryOp binary_op() const { return node_->bop; }
  Expr child() const { return Expr(node_->lhs); }
  Expr left() const { return Expr(node_->lhs); }
  Expr right() const { return Expr(node_->rhs); }
  std::size_t depth() const { return node_->depth; }

  // Largest feature ordinal referenced anywhere in the tree.
  std::size_t max_feature() const {
    switch (kind()) {
      case Kind::feature: return feature_index();
      case Kind::unary: return child().max_feature();
      case Kind::binary: return std::max(left().max_feature(), right().max_feature());
    }
    return 0;
  }

  bool references(std::size_t index) const {
    switch (kind()) {
      case Kind::feature: return feature_index() == index;
      case Kind::unary: return child().references(index);
      case Kind::binary: return left().references(index) || right().references(index);
    }
    return false;
  }

  friend bool operator==(const Expr& a, const Expr& b) {
    if (a.node_ == b.node_) return true;
    if (a.kind() != b.kind()) return false;
    switch (a.kind()) {
      case Kind::feature: return a.feature_index() == b.feature_index();
      case Kind::unary: return a.unary_op() == b.unary_op() && a.child() == b.child();
      case Kind::binary:
        return a.binary_op() == b.binary_op() && a.left() == b.left() && a.right() == b.right();
    }
    return false;
  }

 private:
  struct Node {
    Kind kind = Kind::feature;
    std::size_t index = 0;
    UnaryOp uop = UnaryOp::log;
    BinaryOp bop = BinaryOp::add;
    std::shared_ptr<const Node> lhs;
    std::shared_ptr<const Node> rhs;
    std::size_t depth = 1;
  };

  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

  std::shared_ptr<const Node> node_;
};

struct TransformSequence {
  std::vector<Expr> exprs;

  friend bool operator==(const TransformSequence&, const TransformSequence&) = default;
};

struct ParseOptions {
  std::size_t max_depth = 6;
  std::size_t max_length = 32;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t position, const std::string& message, std::string_view input)
      : std::runtime_error(format(position, message, input)),
        position_(std::min(position, input.size())),
        message_(message),
        fragment_(fragment_of(input, position)) {}

  std::size_t position() const { return position_; }
  const std::string& message() const { return message_; }
  const std::string& input_fragment() const { return fragment_; }

 private:
  static std::string fragment_of(std::string_view input, std::size_t position) {
    position = std::min(position, input.size());
    std::size_t begin = position > 12 ? position - 12 : 0;
    return std::string(input.substr(begin, 24));
  }

  static std::string format(std::size_t position, const std::string& message, std::string_view input) {
    return "parse error at offset " + std::to_string(std::min(position, input.size())) + ": " +
           message + " (near '" + fragment_of(input, position) + "')";
  }

  std::size_t position_;
  std::string message_;
  std::string fragment_;
};

// ---------------------------------------------------------------------------
// Lexer

enum class TokenKind { feature, opname, plus, minus, star, slash, lparen, rparen, comma, eos };

struct Token {
  TokenKind kind = TokenKind::eos;
  std::size_t offset = 0;
  std::size_t feature = 0;  // valid when kind == feature
  std::string text;

  friend bool operator==(const Token&, const Token&) = default;
};

inline std::vector<Token> tokenize(std::string_view input) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  auto is_alpha = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; };
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  while (i < input.size()) {
    char c = input[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
      continue;
    }
    std::size_t start = i;
    auto single = [&](TokenKind kind) {
      tokens.push_back({kind, start, 0, std::string(1, c)});
      ++i;
    };
    switch (c) {
      case '+': single(TokenKind::plus); continue;
      case '-': single(TokenKind::minus); continue;
      case '*': single(TokenKind::star); continue;
      case '/': single(TokenKind::slash); continue;
      case '(': single(TokenKind::lparen); continue;
      case ')': single(TokenKind::rparen); continue;
      case ',': single(TokenKind::comma); continue;
      default: break;
    }
    if (!is_alpha(c)) {
      throw ParseError(start, std::string("unexpected character '") + c + "'", input);
    }
    while (i < input.size() && (is_alpha(input[i]) || is_digit(input[i]))) ++i;
    std::string word(input.substr(start, i - start));
    bool feature = word.size() > 1 && word[0] == 'f' &&
                   std::all_of(word.begin() + 1, word.end(), is_digit);
    if (feature) {
      if (word.size() > 10) throw ParseError(start, "feature index too large", input);
      std::size_t index = std::stoul(word.substr(1));
      if (index == 0) throw ParseError(start, "feature indices start at f1", input);
      tokens.push_back({TokenKind::feature, start, index, word});
    } else {
      std::transform(word.begin(), word.end(), word.begin(),
                     [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      tokens.push_back({TokenKind::opname, start, 0, word});
    }
  }
  tokens.push_back({TokenKind::eos, input.size(), 0, ""});
  return tokens;
}

// ---------------------------------------------------------------------------
// Parser

namespace detail {

class Parser {
 public:
  Parser(std::string_view input, const OperatorSet& ops, const ParseOptions& options)
      : input_(input), ops_(ops), options_(options), tokens_(tokenize(input)) {}

  TransformSequence sequence() {
    TransformSequence seq;
    seq.exprs.push_back(top_level());
    while (peek().kind == TokenKind::comma) {
      ++pos_;
      if (seq.exprs.size() >= options_.max_length) {
        fail("sequence longer than " + std::to_string(options_.max_length) + " expressions");
      }
      seq.exprs.push_back(top_level());
    }
    if (peek().kind != TokenKind::eos) fail("expected ',' or end of input");
    return seq;
  }

  Expr single() {
    Expr e = top_level();
    if (peek().kind != TokenKind::eos) fail("expected end of input");
    return e;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }

  [[noreturn]] void fail(const std::string& message) const { throw ParseError(peek().offset, message, input_); }

  Expr top_level() {
    std::size_t start = peek().offset;
    Expr e = expr();
    if (e.depth() > options_.max_depth) {
      throw ParseError(start, "expression deeper than " + std::to_string(options_.max_depth), input_);
    }
    return e;
  }

  Expr binary_checked(BinaryOp op, std::size_t offset, const Expr& l, const Expr& r) {
    if (!ops_.has(op)) {
      throw ParseError(offset, std::string("operator '") + op_symbol(op) + "' is not enabled", input_);
    }
    return Expr::binary(op, l, r);
  }

  Expr expr() {
    Expr lhs = term();
    while (peek().kind == TokenKind::plus || peek().kind == TokenKind::minus) {
      const Token& t = tokens_[pos_++];
      Expr rhs = term();
      lhs = binary_checked(t.kind == TokenKind::plus ? BinaryOp::add : BinaryOp::sub, t.offset, lhs, rhs);
    }
    return lhs;
  }

  Expr term() {
    Expr lhs = factor();
    while (peek().kind == TokenKind::star || peek().kind == TokenKind::slash) {
      const Token& t = tokens_[pos_++];
      Expr rhs = factor();
      lhs = binary_checked(t.kind == TokenKind::star ? BinaryOp::mul : BinaryOp::div, t.offset, lhs, rhs);
    }
    return lhs;
  }

  Expr factor() {
    // Nesting guard; the depth check on the finished tree gives the real limit.
    if (++nesting_ > 4 * options_.max_depth + 8) fail("expression nested too deeply");
    struct Unnest {
      std::size_t& n;
      ~Unnest() { --n; }
    } unnest{nesting_};

    const Token& t = peek();
    switch (t.kind) {
      case TokenKind::feature:
        ++pos_;
        return Expr::feature(t.feature);
      case TokenKind::opname: {
        auto op = ops_.find_unary(t.text);
        if (!op) fail("unknown operator '" + t.text + "'");
        ++pos_;
        expect(TokenKind::lparen, "expected '(' after operator name");
        Expr inner = expr();
        expect(TokenKind::rparen, "expected ')'");
        return Expr::unary(*op, inner);
      }
      case TokenKind::lparen: {
        ++pos_;
        Expr inner = expr();
        expect(TokenKind::rparen, "expected ')'");
        return inner;
      }
      case TokenKind::minus:
        fail("unary minus is not supported");
      default:
        fail("expected feature, operator name or '('");
    }
  }

  void expect(TokenKind kind, const char* message) {
    if (peek().kind != kind) fail(message);
    ++pos_;
  }

  std::string_view input_;
  const OperatorSet& ops_;
  ParseOptions options_;
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  std::size_t nesting_ = 0;
};

}  // namespace detail

inline TransformSequence parse(std::string_view input, const OperatorSet& ops,
                               const ParseOptions& options = {}) {
  return detail::Parser(input, ops, options).sequence();
}

inline Expr parse_expr(std::string_view input, const OperatorSet& ops, const ParseOptions& options = {}) {
  return detail::Parser(input, ops, options).single();
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline int precedence(const Expr& e) {
  if (e.kind() != Expr::Kind::binary) return 3;
  switch (e.binary_op()) {
    case BinaryOp::add:
    case BinaryOp::sub: return 1;
    case BinaryOp::mul:
    case BinaryOp::div: return 2;
  }
  return 3;
}

inline void render_into(const Expr& e, std::string& out) {
  switch (e.kind()) {
    case Expr::Kind::feature:
      out += 'f';
      out += std::to_string(e.feature_index());
      return;
    case Expr::Kind::unary:
      out += op_name(e.unary_op());
      out += '(';
      render_into(e.child(), out);
      out += ')';
      return;
    case Expr::Kind::binary: {
      int p = precedence(e);
      Expr l = e.left();
      Expr r = e.right();
      // Left-associative: the right operand needs parentheses at equal precedence.
      bool wrap_l = precedence(l) < p;
      bool wrap_r = precedence(r) <= p;
      if (wrap_l) out += '(';
      render_into(l, out);
      if (wrap_l) out += ')';
      out += op_symbol(e.binary_op());
      if (wrap_r) out += '(';
      render_into(r, out);
      if (wrap_r) out += ')';
      return;
    }
  }
}

}  // namespace detail

inline std::string render(const Expr& e) {
  std::string out;
  detail::render_into(e, out);
  return out;
}

inline std::string render(const TransformSequence& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.exprs.size(); ++i) {
    if (i) out += ',';
    detail::render_into(seq.exprs[i], out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical key: operands of ADD and MUL sorted by their own keys.

namespace detail {

struct Keyed {
  Expr expr;
  std::string key;
};

inline Keyed normalize(const Expr& e) {
  switch (e.kind()) {
    case Expr::Kind::feature:
      return {e, render(e)};
    case Expr::Kind::unary: {
      Keyed c = normalize(e.child());
      Expr n = Expr::unary(e.unary_op(), c.expr);
      return {n, render(n)};
    }
    case Expr::Kind::binary: {
      Keyed l = normalize(e.left());
      Keyed r = normalize(e.right());
      bool commutative = e.binary_op() == BinaryOp::add || e.binary_op() == BinaryOp::mul;
      if (commutative && r.key < l.key) std::swap(l, r);
      Expr n = Expr::binary(e.binary_op(), l.expr, r.expr);
      return {n, render(n)};
    }
  }
  return {e, render(e)};
}

}  // namespace detail

inline std::string canonical_key(const Expr& e) { return detail::normalize(e).key; }

// ---------------------------------------------------------------------------
// Evaluation with safe semantics: no infinities ever leave the evaluator,
// the only sentinel is NaN.

inline constexpr double kSafeEpsilon = 1e-12;

inline double safe_unary(UnaryOp op, double x) {
  double y = 0.0;
  switch (op) {
    case UnaryOp::log: y = std::log(std::max(std::fabs(x), kSafeEpsilon)); break;
    case UnaryOp::sqrt: y = std::sqrt(std::fabs(x)); break;
    case UnaryOp::square: y = x * x; break;
    case UnaryOp::abs: y = std::fabs(x); break;
    case UnaryOp::reciprocal: y = std::fabs(x) < kSafeEpsilon ? std::nan("") : 1.0 / x; break;
    case UnaryOp::sin: y = std::sin(x); break;
    case UnaryOp::cos: y = std::cos(x); break;
    case UnaryOp::tanh: y = std::tanh(x); break;
  }
  if (std::isnan(x)) return std::nan("");
  return std::isfinite(y) ? y : std::nan("");
}

inline double safe_binary(BinaryOp op, double a, double b) {
  double y = 0.0;
  switch (op) {
    case BinaryOp::add: y = a + b; break;
    case BinaryOp::sub: y = a - b; break;
    case BinaryOp::mul: y = a * b; break;
    case BinaryOp::div: y = std::fabs(b) < kSafeEpsilon ? std::nan("") : a / b; break;
  }
  return std::isfinite(y) ? y : std::nan("");
}

class IndexError : public std::out_of_range {
 public:
  IndexError(std::size_t index, std::size_t column_count)
      : std::out_of_range("feature f" + std::to_string(index) + " does not exist (table has " +
                          std::to_string(column_count) + " columns)"),
        index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

struct EvalResult {
  std::vector<double> values;
  std::size_t non_finite = 0;  // NaN entries in `values`
};

using ColumnView = std::span<const std::vector<double>>;

namespace detail {

inline std::vector<double> eval_columns(const Expr& e, ColumnView columns, std::size_t rows) {
  switch (e.kind()) {
    case Expr::Kind::feature:
      return columns[e.feature_index() - 1];
    case Expr::Kind::unary: {
      auto v = eval_columns(e.child(), columns, rows);
      for (auto& x : v) x = safe_unary(e.unary_op(), x);
      return v;
    }
    case Expr::Kind::binary: {
      auto a = eval_columns(e.left(), columns, rows);
      auto b = eval_columns(e.right(), columns, rows);
      for (std::size_t i = 0; i < rows; ++i) a[i] = safe_binary(e.binary_op(), a[i], b[i]);
      return a;
    }
  }
  return std::vector<double>(rows, std::nan(""));
}

}  // namespace detail

// Every column in `columns` must have `rows` entries.
inline EvalResult evaluate(const Expr& e, ColumnView columns, std::size_t rows) {
  if (e.max_feature() > columns.size()) throw IndexError(e.max_feature(), columns.size());
  EvalResult out;
  out.values = detail::eval_columns(e, columns, rows);
  for (double& v : out.values) {
    if (!std::isfinite(v)) {
      v = std::nan("");
      ++out.non_finite;
    }
  }
  return out;
}

}  // namespace duet
