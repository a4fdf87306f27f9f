#pragma once

// Controller scripting language.
//
// A deterministic, side-effect-free language for controller programs. The
// only inputs are call arguments; the only state is the program's own fields.
// There is no I/O, clock, randomness, or host access: the builtin table below
// is the complete set of callable host functions.
//
//   target cube { color = "red"; mode = "largest"; depth_bias = 0.0; }
//   option ema_alpha = 0.4;
//   const HOVER = 0.08;
//   field phase = "reach";
//   fn reset() { phase = "reach"; }
//   fn get_action(f) {
//     if not f.cube.detected { return [0, 0, 0, -1]; }
//     let err = f.cube.pos - f.eef;
//     return [err.x * 20, err.y * 20, err.z * 20, -1];
//   }

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace aor::ctl {

struct Record;
using RecordPtr = std::shared_ptr<const Record>;

struct None {
  bool operator==(const None&) const = default;
};

/// Script value. Vectors are immutable numeric arrays; records are read-only maps.
struct Value {
  std::variant<None, double, bool, std::string, std::vector<double>, RecordPtr> data;

  Value() = default;
  Value(double d) : data(d) {}
  Value(int i) : data(static_cast<double>(i)) {}
  Value(bool b) : data(b) {}
  Value(std::string s) : data(std::move(s)) {}
  Value(const char* s) : data(std::string(s)) {}
  Value(std::vector<double> v) : data(std::move(v)) {}
  Value(RecordPtr r) : data(std::move(r)) {}

  bool is_none() const { return std::holds_alternative<None>(data); }
  bool is_num() const { return std::holds_alternative<double>(data); }
  bool is_bool() const { return std::holds_alternative<bool>(data); }
  bool is_str() const { return std::holds_alternative<std::string>(data); }
  bool is_vec() const { return std::holds_alternative<std::vector<double>>(data); }
  bool is_record() const { return std::holds_alternative<RecordPtr>(data); }

  double num() const { return std::get<double>(data); }
  bool boolean() const { return std::get<bool>(data); }
  const std::string& str() const { return std::get<std::string>(data); }
  const std::vector<double>& vec() const { return std::get<std::vector<double>>(data); }
  const Record& record() const { return *std::get<RecordPtr>(data); }

  std::string type_name() const;
};

struct Record {
  std::map<std::string, Value, std::less<>> fields;
};

RecordPtr make_record(std::map<std::string, Value, std::less<>> fields);

/// Lexing, parsing, or name-resolution failure.
class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Failure while executing script code.
class ScriptError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class BudgetExceeded : public ScriptError {
 public:
  BudgetExceeded() : ScriptError("instruction budget exhausted") {}
};

/// Literal attached to a `target` or `option` declaration.
using ConfigLiteral = Value;

struct TargetDecl {
  std::string name;
  std::vector<std::pair<std::string, ConfigLiteral>> settings;
  int line = 0;
};

struct OptionDecl {
  std::string name;
  ConfigLiteral value;
  int line = 0;
};

struct Program;  // opaque AST

struct FunctionInfo {
  std::string name;
  std::size_t arity;
};

/// Parses and resolves a program. Unknown identifiers and calls to functions
/// that are neither builtins nor declared in the program are parse errors.
std::shared_ptr<const Program> parse_program(std::string_view source);

const std::vector<TargetDecl>& targets(const Program& p);
const std::vector<OptionDecl>& options(const Program& p);
std::vector<FunctionInfo> functions(const Program& p);
bool has_field(const Program& p, std::string_view name);

/// Names of the host functions callable from scripts.
std::vector<std::string> builtin_names();

inline constexpr std::uint64_t kDefaultInstructionBudget = 1'000'000;
inline constexpr int kMaxCallDepth = 64;

/// Executes one program instance. Not thread-safe; one instance per episode.
class Interpreter {
 public:
  explicit Interpreter(std::shared_ptr<const Program> program);
  ~Interpreter();
  Interpreter(Interpreter&&) noexcept;
  Interpreter& operator=(Interpreter&&) noexcept;

  /// Evaluates constants and field initializers.
  void instantiate(std::uint64_t budget = kDefaultInstructionBudget);
  /// Re-initializes fields, then calls the script's reset() when it exists.
  void reset(std::uint64_t budget = kDefaultInstructionBudget);
  Value call(std::string_view function, std::vector<Value> args,
             std::uint64_t budget = kDefaultInstructionBudget);

  /// Current value of a field; None when the program declares no such field.
  Value field(std::string_view name) const;
  /// Instructions consumed by the most recent instantiate/reset/call.
  std::uint64_t last_cost() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace aor::ctl
