#include "aor/ctl/script.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>

namespace aor::ctl {

std::string Value::type_name() const {
  switch (data.index()) {
    case 0: return "none";
    case 1: return "number";
    case 2: return "bool";
    case 3: return "string";
    case 4: return "vector";
    case 5: return "record";
  }
  return "?";
}

RecordPtr make_record(std::map<std::string, Value, std::less<>> fields) {
  return std::make_shared<const Record>(Record{std::move(fields)});
}

namespace {

constexpr std::size_t kMaxSourceBytes = 256 * 1024;
constexpr int kMaxNesting = 200;
constexpr std::size_t kMaxVectorLength = 64;
constexpr std::size_t kMaxStringLength = 256;

// ---------------------------------------------------------------- lexer

enum class Tok { Ident, Number, String, Punct, End };

struct Token {
  Tok kind;
  std::string text;
  double num = 0.0;
  int line = 1;
};

bool ident_start(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }
bool ident_char(char c) { return ident_start(c) || (c >= '0' && c <= '9'); }
bool digit(char c) { return c >= '0' && c <= '9'; }

std::vector<Token> lex(std::string_view src) {
  if (src.size() > kMaxSourceBytes) throw ParseError(1, "source exceeds size limit");
  std::vector<Token> out;
  int line = 1;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (c == '\n') {
      ++line;
      ++i;
    } else if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
    } else if (c == '#') {
      while (i < src.size() && src[i] != '\n') ++i;
    } else if (ident_start(c)) {
      const std::size_t s = i;
      while (i < src.size() && ident_char(src[i])) ++i;
      out.push_back({Tok::Ident, std::string(src.substr(s, i - s)), 0.0, line});
    } else if (digit(c) || (c == '.' && i + 1 < src.size() && digit(src[i + 1]))) {
      const std::size_t s = i;
      while (i < src.size() && digit(src[i])) ++i;
      if (i < src.size() && src[i] == '.') {
        ++i;
        while (i < src.size() && digit(src[i])) ++i;
      }
      if (i < src.size() && (src[i] == 'e' || src[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < src.size() && (src[j] == '+' || src[j] == '-')) ++j;
        if (j < src.size() && digit(src[j])) {
          i = j;
          while (i < src.size() && digit(src[i])) ++i;
        }
      }
      if (i < src.size() && ident_char(src[i])) throw ParseError(line, "malformed number");
      double v = 0.0;
      const auto res = std::from_chars(src.data() + s, src.data() + i, v);
      if (res.ec != std::errc() || !std::isfinite(v)) throw ParseError(line, "malformed number");
      out.push_back({Tok::Number, std::string(src.substr(s, i - s)), v, line});
    } else if (c == '"') {
      std::string s;
      ++i;
      bool closed = false;
      while (i < src.size() && src[i] != '\n') {
        if (src[i] == '"') {
          closed = true;
          ++i;
          break;
        }
        if (src[i] == '\\' && i + 1 < src.size()) {
          const char e = src[i + 1];
          if (e == 'n') s.push_back('\n');
          else if (e == '"' || e == '\\') s.push_back(e);
          else throw ParseError(line, "unknown escape in string");
          i += 2;
          continue;
        }
        if (static_cast<unsigned char>(src[i]) < 0x20) throw ParseError(line, "control byte in string");
        s.push_back(src[i++]);
      }
      if (!closed) throw ParseError(line, "unterminated string");
      if (s.size() > kMaxStringLength) throw ParseError(line, "string literal too long");
      out.push_back({Tok::String, std::move(s), 0.0, line});
    } else {
      static constexpr std::string_view kTwo[] = {"<=", ">=", "==", "!="};
      static constexpr std::string_view kOne = "+-*/%<>=(){}[],;.";
      std::string_view two = src.substr(i, 2);
      if (std::find(std::begin(kTwo), std::end(kTwo), two) != std::end(kTwo)) {
        out.push_back({Tok::Punct, std::string(two), 0.0, line});
        i += 2;
      } else if (kOne.find(c) != std::string_view::npos) {
        out.push_back({Tok::Punct, std::string(1, c), 0.0, line});
        ++i;
      } else {
        throw ParseError(line, "unexpected character");
      }
    }
  }
  out.push_back({Tok::End, "", 0.0, line});
  return out;
}

// ---------------------------------------------------------------- AST

enum class Op { Add, Sub, Mul, Div, Mod, Lt, Le, Gt, Ge, Eq, Ne, Neg, Not, And, Or };

enum class EK { Literal, Name, Local, Field, Const, VecLit, Unary, Binary, Logical, Member, Index, Call, Builtin, UserCall };

struct Expr;
using ExprP = std::unique_ptr<Expr>;

struct Expr {
  EK kind = EK::Literal;
  int line = 0;
  Value literal;
  std::string name;
  Op op = Op::Add;
  int slot = -1;
  std::vector<ExprP> kids;
};

enum class SK { Let, Assign, If, While, Return, Break, Continue, Eval };

struct Stmt {
  SK kind = SK::Eval;
  int line = 0;
  std::string name;
  int slot = -1;
  bool to_field = false;
  ExprP expr;
  std::vector<std::pair<ExprP, std::vector<Stmt>>> branches;
  std::vector<Stmt> else_body;
};

struct Function {
  std::string name;
  std::vector<std::string> params;
  std::vector<Stmt> body;
  int num_slots = 0;
  int line = 0;
};

struct GlobalDecl {
  std::string name;
  ExprP init;
  int line = 0;
};

}  // namespace

struct Program {
  std::vector<TargetDecl> targets;
  std::vector<OptionDecl> options;
  std::vector<GlobalDecl> consts;
  std::vector<GlobalDecl> fields;
  std::vector<Function> functions;
};

namespace {

// ---------------------------------------------------------------- builtins

using BuiltinFn = Value (*)(std::span<const Value>, int line);

struct Builtin {
  std::string_view name;
  std::size_t min_args;
  std::size_t max_args;
  BuiltinFn fn;
};

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ScriptError("line " + std::to_string(line) + ": " + msg);
}

double want_num(const Value& v, int line, std::string_view what) {
  if (!v.is_num()) fail(line, std::string(what) + " expects a number, got " + v.type_name());
  return v.num();
}

const std::vector<double>& want_vec(const Value& v, int line, std::string_view what) {
  if (!v.is_vec()) fail(line, std::string(what) + " expects a vector, got " + v.type_name());
  return v.vec();
}

template <typename F>
Value map_numeric(const Value& v, int line, std::string_view what, F f) {
  if (v.is_num()) return f(v.num());
  const auto& in = want_vec(v, line, what);
  std::vector<double> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), f);
  return out;
}

Value b_abs(std::span<const Value> a, int line) {
  return map_numeric(a[0], line, "abs", [](double x) { return std::abs(x); });
}

Value b_sqrt(std::span<const Value> a, int line) {
  const double x = want_num(a[0], line, "sqrt");
  if (x < 0.0) fail(line, "sqrt of negative number");
  return std::sqrt(x);
}

Value b_min(std::span<const Value> a, int line) {
  return std::min(want_num(a[0], line, "min"), want_num(a[1], line, "min"));
}

Value b_max(std::span<const Value> a, int line) {
  return std::max(want_num(a[0], line, "max"), want_num(a[1], line, "max"));
}

Value b_clamp(std::span<const Value> a, int line) {
  const double lo = want_num(a[1], line, "clamp");
  const double hi = want_num(a[2], line, "clamp");
  if (lo > hi) fail(line, "clamp bounds out of order");
  return map_numeric(a[0], line, "clamp", [=](double x) { return std::clamp(x, lo, hi); });
}

Value b_sign(std::span<const Value> a, int line) {
  const double x = want_num(a[0], line, "sign");
  return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
}

Value b_floor(std::span<const Value> a, int line) { return std::floor(want_num(a[0], line, "floor")); }

Value b_norm(std::span<const Value> a, int line) {
  double s = 0.0;
  for (double x : want_vec(a[0], line, "norm")) s += x * x;
  return std::sqrt(s);
}

Value b_dist_impl(std::span<const Value> a, int line, std::size_t dims, std::string_view what) {
  const auto& p = want_vec(a[0], line, what);
  const auto& q = want_vec(a[1], line, what);
  if (p.size() != q.size() || p.size() < dims) fail(line, std::string(what) + " needs matching vectors");
  const std::size_t n = dims == 0 ? p.size() : dims;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
  return std::sqrt(s);
}

Value b_dist(std::span<const Value> a, int line) { return b_dist_impl(a, line, 0, "dist"); }
Value b_dist_xy(std::span<const Value> a, int line) { return b_dist_impl(a, line, 2, "dist_xy"); }

Value b_len(std::span<const Value> a, int line) {
  return static_cast<double>(want_vec(a[0], line, "len").size());
}

Value b_vec(std::span<const Value> a, int line) {
  if (a.size() > kMaxVectorLength) fail(line, "vector too long");
  std::vector<double> out;
  for (const auto& v : a) out.push_back(want_num(v, line, "vec"));
  return out;
}

Value b_ema(std::span<const Value> a, int line) {
  const double alpha = want_num(a[2], line, "ema");
  if (alpha < 0.0 || alpha > 1.0) fail(line, "ema alpha outside [0, 1]");
  if (a[0].is_num() && a[1].is_num()) return alpha * a[1].num() + (1.0 - alpha) * a[0].num();
  const auto& prev = want_vec(a[0], line, "ema");
  const auto& raw = want_vec(a[1], line, "ema");
  if (prev.size() != raw.size()) fail(line, "ema vectors differ in length");
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = alpha * raw[i] + (1.0 - alpha) * prev[i];
  return out;
}

constexpr Builtin kBuiltins[] = {
    {"abs", 1, 1, b_abs},       {"sqrt", 1, 1, b_sqrt},   {"min", 2, 2, b_min},
    {"max", 2, 2, b_max},       {"clamp", 3, 3, b_clamp}, {"sign", 1, 1, b_sign},
    {"floor", 1, 1, b_floor},   {"norm", 1, 1, b_norm},   {"dist", 2, 2, b_dist},
    {"dist_xy", 2, 2, b_dist_xy}, {"len", 1, 1, b_len},   {"vec", 0, kMaxVectorLength, b_vec},
    {"ema", 3, 3, b_ema},
};

std::optional<int> builtin_index(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kBuiltins); ++i) {
    if (kBuiltins[i].name == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- parser

const std::vector<std::string_view> kKeywords = {
    "target", "option", "const", "field", "fn",  "let",   "if",   "elif", "else",
    "while",  "return", "break", "continue", "and", "or", "not", "true", "false", "none"};

bool is_keyword(std::string_view s) {
  return std::find(kKeywords.begin(), kKeywords.end(), s) != kKeywords.end();
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  Program parse() {
    Program p;
    while (!at_end()) {
      const Token& t = peek();
      if (is_word("target")) {
        p.targets.push_back(parse_target());
      } else if (is_word("option")) {
        advance();
        OptionDecl o;
        o.line = t.line;
        o.name = expect_ident();
        expect("=");
        o.value = parse_literal();
        expect(";");
        p.options.push_back(std::move(o));
      } else if (is_word("const") || is_word("field")) {
        const bool is_const = is_word("const");
        advance();
        GlobalDecl g;
        g.line = t.line;
        g.name = expect_ident();
        expect("=");
        g.init = parse_expr();
        expect(";");
        (is_const ? p.consts : p.fields).push_back(std::move(g));
      } else if (is_word("fn")) {
        p.functions.push_back(parse_function());
      } else {
        throw ParseError(t.line, "expected a declaration, found '" + t.text + "'");
      }
    }
    return p;
  }

 private:
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int depth_ = 0;

  struct DepthGuard {
    Parser& p;
    explicit DepthGuard(Parser& parser) : p(parser) {
      if (++p.depth_ > kMaxNesting) throw ParseError(p.peek().line, "nesting too deep");
    }
    ~DepthGuard() { --p.depth_; }
  };

  const Token& peek() const { return toks_[pos_]; }
  bool at_end() const { return peek().kind == Tok::End; }
  const Token& advance() {
    const Token& t = toks_[pos_];
    if (!at_end()) ++pos_;
    return t;
  }
  bool is_punct(std::string_view s) const { return peek().kind == Tok::Punct && peek().text == s; }
  bool is_word(std::string_view s) const { return peek().kind == Tok::Ident && peek().text == s; }
  bool accept(std::string_view s) {
    if (is_punct(s)) {
      advance();
      return true;
    }
    return false;
  }
  void expect(std::string_view s) {
    if (!accept(s)) {
      throw ParseError(peek().line, "expected '" + std::string(s) + "', found '" + peek().text + "'");
    }
  }
  std::string expect_ident() {
    const Token& t = peek();
    if (t.kind != Tok::Ident || is_keyword(t.text)) {
      throw ParseError(t.line, "expected identifier, found '" + t.text + "'");
    }
    advance();
    return t.text;
  }

  Value parse_literal() {
    const Token& t = peek();
    if (accept("-")) {
      if (peek().kind != Tok::Number) throw ParseError(t.line, "expected number after '-'");
      return -advance().num;
    }
    if (t.kind == Tok::Number) return advance().num;
    if (t.kind == Tok::String) return advance().text;
    if (is_word("true") || is_word("false")) return advance().text == "true";
    if (accept("[")) {
      std::vector<double> v;
      if (!is_punct("]")) {
        do {
          const Value x = parse_literal();
          if (!x.is_num()) throw ParseError(t.line, "vector literals hold numbers only");
          v.push_back(x.num());
          if (v.size() > kMaxVectorLength) throw ParseError(t.line, "vector literal too long");
        } while (accept(","));
      }
      expect("]");
      return v;
    }
    throw ParseError(t.line, "expected a literal, found '" + t.text + "'");
  }

  TargetDecl parse_target() {
    TargetDecl d;
    d.line = advance().line;
    d.name = expect_ident();
    expect("{");
    while (!accept("}")) {
      if (at_end()) throw ParseError(peek().line, "unterminated target block");
      std::string key = expect_ident();
      expect("=");
      d.settings.emplace_back(std::move(key), parse_literal());
      expect(";");
    }
    return d;
  }

  Function parse_function() {
    Function f;
    f.line = advance().line;
    f.name = expect_ident();
    expect("(");
    if (!is_punct(")")) {
      do {
        f.params.push_back(expect_ident());
      } while (accept(","));
    }
    expect(")");
    f.body = parse_block();
    return f;
  }

  std::vector<Stmt> parse_block() {
    DepthGuard guard(*this);
    expect("{");
    std::vector<Stmt> body;
    while (!accept("}")) {
      if (at_end()) throw ParseError(peek().line, "unterminated block");
      body.push_back(parse_stmt());
    }
    return body;
  }

  Stmt parse_stmt() {
    Stmt s;
    s.line = peek().line;
    if (is_word("let")) {
      advance();
      s.kind = SK::Let;
      s.name = expect_ident();
      expect("=");
      s.expr = parse_expr();
      expect(";");
    } else if (is_word("if")) {
      advance();
      s.kind = SK::If;
      ExprP cond = parse_expr();
      s.branches.emplace_back(std::move(cond), parse_block());
      while (is_word("elif")) {
        advance();
        ExprP c = parse_expr();
        s.branches.emplace_back(std::move(c), parse_block());
      }
      if (is_word("else")) {
        advance();
        s.else_body = parse_block();
      }
    } else if (is_word("while")) {
      advance();
      s.kind = SK::While;
      ExprP cond = parse_expr();
      s.branches.emplace_back(std::move(cond), parse_block());
    } else if (is_word("return")) {
      advance();
      s.kind = SK::Return;
      if (!is_punct(";")) s.expr = parse_expr();
      expect(";");
    } else if (is_word("break") || is_word("continue")) {
      s.kind = advance().text == "break" ? SK::Break : SK::Continue;
      expect(";");
    } else if (peek().kind == Tok::Ident && !is_keyword(peek().text) &&
               toks_[pos_ + 1].kind == Tok::Punct && toks_[pos_ + 1].text == "=") {
      s.kind = SK::Assign;
      s.name = advance().text;
      advance();
      s.expr = parse_expr();
      expect(";");
    } else {
      s.kind = SK::Eval;
      s.expr = parse_expr();
      expect(";");
    }
    return s;
  }

  ExprP make(EK kind, int line) {
    auto e = std::make_unique<Expr>();
    e->kind = kind;
    e->line = line;
    return e;
  }

  ExprP binary(EK kind, Op op, ExprP lhs, ExprP rhs, int line) {
    auto e = make(kind, line);
    e->op = op;
    e->kids.push_back(std::move(lhs));
    e->kids.push_back(std::move(rhs));
    return e;
  }

  ExprP parse_expr() {
    DepthGuard guard(*this);
    return parse_or();
  }

  ExprP parse_or() {
    ExprP lhs = parse_and();
    while (is_word("or")) {
      const int line = advance().line;
      lhs = binary(EK::Logical, Op::Or, std::move(lhs), parse_and(), line);
    }
    return lhs;
  }

  ExprP parse_and() {
    ExprP lhs = parse_not();
    while (is_word("and")) {
      const int line = advance().line;
      lhs = binary(EK::Logical, Op::And, std::move(lhs), parse_not(), line);
    }
    return lhs;
  }

  ExprP parse_not() {
    if (is_word("not")) {
      DepthGuard guard(*this);
      const int line = advance().line;
      auto e = make(EK::Unary, line);
      e->op = Op::Not;
      e->kids.push_back(parse_not());
      return e;
    }
    return parse_cmp();
  }

  ExprP parse_cmp() {
    ExprP lhs = parse_add();
    static const std::pair<std::string_view, Op> kCmp[] = {
        {"<", Op::Lt}, {"<=", Op::Le}, {">", Op::Gt}, {">=", Op::Ge}, {"==", Op::Eq}, {"!=", Op::Ne}};
    for (const auto& [text, op] : kCmp) {
      if (is_punct(text)) {
        const int line = advance().line;
        return binary(EK::Binary, op, std::move(lhs), parse_add(), line);
      }
    }
    return lhs;
  }

  ExprP parse_add() {
    ExprP lhs = parse_mul();
    while (is_punct("+") || is_punct("-")) {
      const Token& t = advance();
      lhs = binary(EK::Binary, t.text == "+" ? Op::Add : Op::Sub, std::move(lhs), parse_mul(), t.line);
    }
    return lhs;
  }

  ExprP parse_mul() {
    ExprP lhs = parse_unary();
    while (is_punct("*") || is_punct("/") || is_punct("%")) {
      const Token& t = advance();
      const Op op = t.text == "*" ? Op::Mul : (t.text == "/" ? Op::Div : Op::Mod);
      lhs = binary(EK::Binary, op, std::move(lhs), parse_unary(), t.line);
    }
    return lhs;
  }

  ExprP parse_unary() {
    if (is_punct("-")) {
      DepthGuard guard(*this);
      const int line = advance().line;
      auto e = make(EK::Unary, line);
      e->op = Op::Neg;
      e->kids.push_back(parse_unary());
      return e;
    }
    return parse_postfix();
  }

  ExprP parse_postfix() {
    ExprP e = parse_primary();
    for (;;) {
      if (is_punct(".")) {
        const int line = advance().line;
        auto m = make(EK::Member, line);
        m->name = expect_ident();
        m->kids.push_back(std::move(e));
        e = std::move(m);
      } else if (is_punct("[")) {
        const int line = advance().line;
        auto ix = make(EK::Index, line);
        ix->kids.push_back(std::move(e));
        ix->kids.push_back(parse_expr());
        expect("]");
        e = std::move(ix);
      } else {
        return e;
      }
    }
  }

  ExprP parse_primary() {
    const Token& t = peek();
    if (t.kind == Tok::Number) {
      auto e = make(EK::Literal, t.line);
      e->literal = advance().num;
      return e;
    }
    if (t.kind == Tok::String) {
      auto e = make(EK::Literal, t.line);
      e->literal = advance().text;
      return e;
    }
    if (is_word("true") || is_word("false") || is_word("none")) {
      auto e = make(EK::Literal, t.line);
      const std::string w = advance().text;
      if (w != "none") e->literal = (w == "true");
      return e;
    }
    if (accept("(")) {
      ExprP e = parse_expr();
      expect(")");
      return e;
    }
    if (accept("[")) {
      auto e = make(EK::VecLit, t.line);
      if (!is_punct("]")) {
        do {
          e->kids.push_back(parse_expr());
          if (e->kids.size() > kMaxVectorLength) throw ParseError(t.line, "vector literal too long");
        } while (accept(","));
      }
      expect("]");
      return e;
    }
    if (t.kind == Tok::Ident && !is_keyword(t.text)) {
      const std::string name = advance().text;
      if (accept("(")) {
        auto e = make(EK::Call, t.line);
        e->name = name;
        if (!is_punct(")")) {
          do {
            e->kids.push_back(parse_expr());
          } while (accept(","));
        }
        expect(")");
        return e;
      }
      auto e = make(EK::Name, t.line);
      e->name = name;
      return e;
    }
    throw ParseError(t.line, "unexpected '" + t.text + "'");
  }
};

// ---------------------------------------------------------------- resolver

class Resolver {
 public:
  explicit Resolver(Program& p) : p_(p) {}

  void run() {
    for (std::size_t i = 0; i < p_.functions.size(); ++i) {
      declare_global(p_.functions[i].name, p_.functions[i].line);
      fn_index_[p_.functions[i].name] = static_cast<int>(i);
    }
    for (std::size_t i = 0; i < p_.consts.size(); ++i) {
      auto& g = p_.consts[i];
      resolve_global_init(*g.init, /*allow_fields=*/false);
      declare_global(g.name, g.line);
      const_slot_[g.name] = static_cast<int>(i);
    }
    for (std::size_t i = 0; i < p_.fields.size(); ++i) {
      auto& g = p_.fields[i];
      resolve_global_init(*g.init, /*allow_fields=*/true);
      declare_global(g.name, g.line);
      field_slot_[g.name] = static_cast<int>(i);
    }
    std::unordered_map<std::string, int> seen_targets;
    for (const auto& t : p_.targets) {
      if (!seen_targets.emplace(t.name, t.line).second) {
        throw ParseError(t.line, "duplicate target '" + t.name + "'");
      }
    }
    for (auto& f : p_.functions) resolve_function(f);
  }

 private:
  Program& p_;
  std::unordered_map<std::string, int> fn_index_;
  std::unordered_map<std::string, int> const_slot_;
  std::unordered_map<std::string, int> field_slot_;
  std::unordered_map<std::string, int> globals_;
  std::vector<std::unordered_map<std::string, int>> scopes_;
  int next_slot_ = 0;
  int max_slot_ = 0;
  int loop_depth_ = 0;
  bool in_global_init_ = false;
  bool allow_fields_ = false;

  void declare_global(const std::string& name, int line) {
    if (builtin_index(name)) throw ParseError(line, "'" + name + "' shadows a builtin");
    if (!globals_.emplace(name, line).second) throw ParseError(line, "duplicate name '" + name + "'");
  }

  void resolve_global_init(Expr& e, bool allow_fields) {
    in_global_init_ = true;
    allow_fields_ = allow_fields;
    resolve_expr(e);
    in_global_init_ = false;
  }

  std::optional<int> lookup_local(const std::string& name) const {
    for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
      if (auto f = it->find(name); f != it->end()) return f->second;
    }
    return std::nullopt;
  }

  int declare_local(const std::string& name, int line) {
    if (builtin_index(name)) throw ParseError(line, "'" + name + "' shadows a builtin");
    if (scopes_.back().count(name)) throw ParseError(line, "'" + name + "' already declared in this block");
    const int slot = next_slot_++;
    max_slot_ = std::max(max_slot_, next_slot_);
    scopes_.back()[name] = slot;
    return slot;
  }

  void resolve_function(Function& f) {
    scopes_.clear();
    scopes_.emplace_back();
    next_slot_ = 0;
    max_slot_ = 0;
    for (const auto& param : f.params) declare_local(param, f.line);
    resolve_block(f.body, /*new_scope=*/false);
    f.num_slots = max_slot_;
  }

  void resolve_block(std::vector<Stmt>& body, bool new_scope = true) {
    const int saved = next_slot_;
    if (new_scope) scopes_.emplace_back();
    for (auto& s : body) resolve_stmt(s);
    if (new_scope) {
      scopes_.pop_back();
      next_slot_ = saved;
    }
  }

  void resolve_stmt(Stmt& s) {
    switch (s.kind) {
      case SK::Let:
        resolve_expr(*s.expr);
        s.slot = declare_local(s.name, s.line);
        break;
      case SK::Assign: {
        resolve_expr(*s.expr);
        if (auto slot = lookup_local(s.name)) {
          s.slot = *slot;
        } else if (auto f = field_slot_.find(s.name); f != field_slot_.end()) {
          s.slot = f->second;
          s.to_field = true;
        } else if (const_slot_.count(s.name)) {
          throw ParseError(s.line, "cannot assign to constant '" + s.name + "'");
        } else {
          throw ParseError(s.line, "assignment to undeclared name '" + s.name + "'");
        }
        break;
      }
      case SK::If:
        for (auto& [cond, body] : s.branches) {
          resolve_expr(*cond);
          resolve_block(body);
        }
        resolve_block(s.else_body);
        break;
      case SK::While:
        resolve_expr(*s.branches[0].first);
        ++loop_depth_;
        resolve_block(s.branches[0].second);
        --loop_depth_;
        break;
      case SK::Return:
        if (s.expr) resolve_expr(*s.expr);
        break;
      case SK::Break:
      case SK::Continue:
        if (loop_depth_ == 0) throw ParseError(s.line, "break/continue outside a loop");
        break;
      case SK::Eval:
        resolve_expr(*s.expr);
        break;
    }
  }

  void resolve_expr(Expr& e) {
    for (auto& k : e.kids) resolve_expr(*k);
    if (e.kind == EK::Name) {
      if (!in_global_init_) {
        if (auto slot = lookup_local(e.name)) {
          e.kind = EK::Local;
          e.slot = *slot;
          return;
        }
      }
      if (auto f = field_slot_.find(e.name); f != field_slot_.end() && (!in_global_init_ || allow_fields_)) {
        e.kind = EK::Field;
        e.slot = f->second;
        return;
      }
      if (auto c = const_slot_.find(e.name); c != const_slot_.end()) {
        e.kind = EK::Const;
        e.slot = c->second;
        return;
      }
      throw ParseError(e.line, "unknown name '" + e.name + "'");
    }
    if (e.kind == EK::Call) {
      if (auto f = fn_index_.find(e.name); f != fn_index_.end()) {
        if (in_global_init_) throw ParseError(e.line, "initializers cannot call script functions");
        const auto& fn = p_.functions[f->second];
        if (fn.params.size() != e.kids.size()) {
          throw ParseError(e.line, "'" + e.name + "' expects " + std::to_string(fn.params.size()) + " arguments");
        }
        e.kind = EK::UserCall;
        e.slot = f->second;
        return;
      }
      if (auto b = builtin_index(e.name)) {
        const auto& bi = kBuiltins[*b];
        if (e.kids.size() < bi.min_args || e.kids.size() > bi.max_args) {
          throw ParseError(e.line, "wrong number of arguments to '" + e.name + "'");
        }
        e.kind = EK::Builtin;
        e.slot = *b;
        return;
      }
      throw ParseError(e.line, "unknown function '" + e.name + "'");
    }
  }
};

}  // namespace

std::shared_ptr<const Program> parse_program(std::string_view source) {
  Parser parser(lex(source));
  auto prog = std::make_shared<Program>(parser.parse());
  Resolver(*prog).run();
  return prog;
}

const std::vector<TargetDecl>& targets(const Program& p) { return p.targets; }
const std::vector<OptionDecl>& options(const Program& p) { return p.options; }

std::vector<FunctionInfo> functions(const Program& p) {
  std::vector<FunctionInfo> out;
  for (const auto& f : p.functions) out.push_back({f.name, f.params.size()});
  return out;
}

bool has_field(const Program& p, std::string_view name) {
  return std::any_of(p.fields.begin(), p.fields.end(), [&](const auto& g) { return g.name == name; });
}

std::vector<std::string> builtin_names() {
  std::vector<std::string> out;
  for (const auto& b : kBuiltins) out.emplace_back(b.name);
  return out;
}

// ---------------------------------------------------------------- interpreter

namespace {

enum class Flow { Normal, Break, Continue, Return };

bool values_equal(const Value& a, const Value& b) {
  if (a.data.index() != b.data.index()) return false;
  if (a.is_record()) return std::get<RecordPtr>(a.data) == std::get<RecordPtr>(b.data);
  return a.data == b.data;
}

}  // namespace

struct Interpreter::Impl {
  std::shared_ptr<const Program> prog;
  std::vector<Value> consts;
  std::vector<Value> fields;
  bool instantiated = false;
  std::uint64_t remaining = 0;
  std::uint64_t used = 0;
  int depth = 0;

  void start(std::uint64_t budget) {
    remaining = budget;
    used = 0;
    depth = 0;
  }

  void tick() {
    if (remaining == 0) throw BudgetExceeded();
    --remaining;
    ++used;
  }

  Value arith(Op op, const Value& a, const Value& b, int line) {
    if (a.is_num() && b.is_num()) {
      const double x = a.num();
      const double y = b.num();
      switch (op) {
        case Op::Add: return x + y;
        case Op::Sub: return x - y;
        case Op::Mul: return x * y;
        case Op::Div:
          if (y == 0.0) fail(line, "division by zero");
          return x / y;
        case Op::Mod:
          if (y == 0.0) fail(line, "modulo by zero");
          return std::fmod(x, y);
        default: break;
      }
    }
    if (a.is_str() && b.is_str() && op == Op::Add) {
      if (a.str().size() + b.str().size() > kMaxStringLength) fail(line, "string too long");
      return a.str() + b.str();
    }
    if (a.is_vec() && b.is_vec() && (op == Op::Add || op == Op::Sub)) {
      const auto& x = a.vec();
      const auto& y = b.vec();
      if (x.size() != y.size()) fail(line, "vector length mismatch");
      std::vector<double> out(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = op == Op::Add ? x[i] + y[i] : x[i] - y[i];
      return out;
    }
    if ((a.is_vec() && b.is_num()) || (a.is_num() && b.is_vec())) {
      const auto& v = a.is_vec() ? a.vec() : b.vec();
      const double s = a.is_num() ? a.num() : b.num();
      if (op == Op::Mul) {
        std::vector<double> out(v);
        for (double& x : out) x *= s;
        return out;
      }
      if (op == Op::Div && a.is_vec()) {
        if (s == 0.0) fail(line, "division by zero");
        std::vector<double> out(v);
        for (double& x : out) x /= s;
        return out;
      }
    }
    fail(line, "unsupported operand types " + a.type_name() + " and " + b.type_name());
  }

  Value compare(Op op, const Value& a, const Value& b, int line) {
    if (op == Op::Eq) return values_equal(a, b);
    if (op == Op::Ne) return !values_equal(a, b);
    const double x = want_num(a, line, "comparison");
    const double y = want_num(b, line, "comparison");
    switch (op) {
      case Op::Lt: return x < y;
      case Op::Le: return x <= y;
      case Op::Gt: return x > y;
      case Op::Ge: return x >= y;
      default: break;
    }
    fail(line, "bad comparison");
  }

  bool truth(const Value& v, int line) {
    if (!v.is_bool()) fail(line, "condition must be a bool, got " + v.type_name());
    return v.boolean();
  }

  Value eval(const Expr& e, std::vector<Value>& locals) {
    tick();
    switch (e.kind) {
      case EK::Literal: return e.literal;
      case EK::Local: return locals[e.slot];
      case EK::Field: return fields[e.slot];
      case EK::Const: return consts[e.slot];
      case EK::VecLit: {
        std::vector<double> out;
        out.reserve(e.kids.size());
        for (const auto& k : e.kids) out.push_back(want_num(eval(*k, locals), e.line, "vector literal"));
        return out;
      }
      case EK::Unary: {
        const Value v = eval(*e.kids[0], locals);
        if (e.op == Op::Not) return !truth(v, e.line);
        return map_numeric(v, e.line, "negation", [](double x) { return -x; });
      }
      case EK::Binary: {
        const Value a = eval(*e.kids[0], locals);
        const Value b = eval(*e.kids[1], locals);
        switch (e.op) {
          case Op::Add:
          case Op::Sub:
          case Op::Mul:
          case Op::Div:
          case Op::Mod: return arith(e.op, a, b, e.line);
          default: return compare(e.op, a, b, e.line);
        }
      }
      case EK::Logical: {
        const bool lhs = truth(eval(*e.kids[0], locals), e.line);
        if (e.op == Op::And && !lhs) return false;
        if (e.op == Op::Or && lhs) return true;
        return truth(eval(*e.kids[1], locals), e.line);
      }
      case EK::Member: {
        const Value base = eval(*e.kids[0], locals);
        if (base.is_record()) {
          const auto& f = base.record().fields;
          auto it = f.find(e.name);
          if (it == f.end()) fail(e.line, "no member '" + e.name + "'");
          return it->second;
        }
        if (base.is_vec()) {
          static constexpr std::string_view kAxes[] = {"x", "y", "z", "w"};
          for (std::size_t i = 0; i < std::size(kAxes); ++i) {
            if (e.name == kAxes[i]) {
              if (i >= base.vec().size()) fail(e.line, "vector has no component '" + e.name + "'");
              return base.vec()[i];
            }
          }
        }
        fail(e.line, "no member '" + e.name + "' on " + base.type_name());
      }
      case EK::Index: {
        const Value base = eval(*e.kids[0], locals);
        const double idx = want_num(eval(*e.kids[1], locals), e.line, "index");
        const auto& v = want_vec(base, e.line, "indexing");
        if (idx != std::floor(idx) || idx < 0 || idx >= static_cast<double>(v.size())) {
          fail(e.line, "index out of range");
        }
        return v[static_cast<std::size_t>(idx)];
      }
      case EK::Builtin: {
        std::vector<Value> args;
        args.reserve(e.kids.size());
        for (const auto& k : e.kids) args.push_back(eval(*k, locals));
        return kBuiltins[e.slot].fn(args, e.line);
      }
      case EK::UserCall: {
        std::vector<Value> args;
        args.reserve(e.kids.size());
        for (const auto& k : e.kids) args.push_back(eval(*k, locals));
        return invoke(prog->functions[e.slot], std::move(args), e.line);
      }
      case EK::Name:
      case EK::Call: break;
    }
    fail(e.line, "unresolved expression");
  }

  Flow exec(const std::vector<Stmt>& body, std::vector<Value>& locals, Value& ret) {
    for (const auto& s : body) {
      tick();
      switch (s.kind) {
        case SK::Let: locals[s.slot] = eval(*s.expr, locals); break;
        case SK::Assign:
          (s.to_field ? fields : locals)[s.slot] = eval(*s.expr, locals);
          break;
        case SK::If: {
          bool taken = false;
          for (const auto& [cond, branch] : s.branches) {
            if (truth(eval(*cond, locals), s.line)) {
              taken = true;
              const Flow f = exec(branch, locals, ret);
              if (f != Flow::Normal) return f;
              break;
            }
          }
          if (!taken) {
            const Flow f = exec(s.else_body, locals, ret);
            if (f != Flow::Normal) return f;
          }
          break;
        }
        case SK::While: {
          const auto& [cond, loop_body] = s.branches[0];
          while (truth(eval(*cond, locals), s.line)) {
            tick();
            const Flow f = exec(loop_body, locals, ret);
            if (f == Flow::Break) break;
            if (f == Flow::Return) return f;
          }
          break;
        }
        case SK::Return:
          ret = s.expr ? eval(*s.expr, locals) : Value{};
          return Flow::Return;
        case SK::Break: return Flow::Break;
        case SK::Continue: return Flow::Continue;
        case SK::Eval: eval(*s.expr, locals); break;
      }
    }
    return Flow::Normal;
  }

  Value invoke(const Function& f, std::vector<Value> args, int line) {
    if (++depth > kMaxCallDepth) fail(line, "call depth limit exceeded");
    std::vector<Value> locals(static_cast<std::size_t>(std::max<int>(f.num_slots, 1)));
    for (std::size_t i = 0; i < args.size(); ++i) locals[i] = std::move(args[i]);
    Value ret;
    exec(f.body, locals, ret);
    --depth;
    return ret;
  }

  void init_fields() {
    std::vector<Value> none;
    fields.assign(prog->fields.size(), Value{});
    for (std::size_t i = 0; i < prog->fields.size(); ++i) fields[i] = eval(*prog->fields[i].init, none);
  }

  const Function* find_function(std::string_view name) const {
    for (const auto& f : prog->functions) {
      if (f.name == name) return &f;
    }
    return nullptr;
  }
};

Interpreter::Interpreter(std::shared_ptr<const Program> program) : impl_(std::make_unique<Impl>()) {
  impl_->prog = std::move(program);
}

Interpreter::~Interpreter() = default;
Interpreter::Interpreter(Interpreter&&) noexcept = default;
Interpreter& Interpreter::operator=(Interpreter&&) noexcept = default;

void Interpreter::instantiate(std::uint64_t budget) {
  auto& im = *impl_;
  im.start(budget);
  std::vector<Value> none;
  im.consts.assign(im.prog->consts.size(), Value{});
  for (std::size_t i = 0; i < im.prog->consts.size(); ++i) {
    im.consts[i] = im.eval(*im.prog->consts[i].init, none);
  }
  im.init_fields();
  im.instantiated = true;
}

void Interpreter::reset(std::uint64_t budget) {
  auto& im = *impl_;
  if (!im.instantiated) throw ScriptError("program not instantiated");
  im.start(budget);
  im.init_fields();
  if (const Function* f = im.find_function("reset")) {
    if (!f->params.empty()) throw ScriptError("reset() must take no arguments");
    im.invoke(*f, {}, f->line);
  }
}

Value Interpreter::call(std::string_view function, std::vector<Value> args, std::uint64_t budget) {
  auto& im = *impl_;
  if (!im.instantiated) throw ScriptError("program not instantiated");
  const Function* f = im.find_function(function);
  if (f == nullptr) throw ScriptError("no function '" + std::string(function) + "'");
  if (f->params.size() != args.size()) throw ScriptError("wrong number of arguments");
  im.start(budget);
  return im.invoke(*f, std::move(args), f->line);
}

Value Interpreter::field(std::string_view name) const {
  const auto& im = *impl_;
  for (std::size_t i = 0; i < im.prog->fields.size() && i < im.fields.size(); ++i) {
    if (im.prog->fields[i].name == name) return im.fields[i];
  }
  return Value{};
}

std::uint64_t Interpreter::last_cost() const { return impl_->used; }

}  // namespace aor::ctl
