#pragma once

#include "aor/ctl/runtime.hpp"
#include "aor/loop/prompt.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

namespace aor::loop {

/// Transport-level failure; the caller may retry.
class RewriterError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The endpoint refused our credentials. Not retried.
class CredentialError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Rewriter {
 public:
  virtual ~Rewriter() = default;
  /// `call` counts rewriter invocations in this run, from 1.
  virtual std::string rewrite(const PromptBundle& prompt, const memory::History& history, int call) = 0;
  virtual ctl::Provenance provenance() const = 0;
};

class MockRewriter final : public Rewriter {
 public:
  explicit MockRewriter(sim::TaskId task) : task_(task) {}
  std::string rewrite(const PromptBundle& prompt, const memory::History& history, int call) override;
  ctl::Provenance provenance() const override { return ctl::Provenance::MockRewriter; }

 private:
  sim::TaskId task_;
};

struct LlmConfig {
  /// Full URL of a chat-completions style endpoint, e.g. http://localhost:8000/v1/chat/completions.
  std::string endpoint;
  std::string model;
  std::string api_key;
  int timeout_seconds = 120;
  int max_tokens = 4096;

  /// Reads AOR_LLM_ENDPOINT, AOR_LLM_MODEL and AOR_LLM_API_KEY. Throws ConfigError
  /// naming the first one that is missing (the key may be empty for local servers
  /// only when AOR_LLM_API_KEY is set to an empty string).
  static LlmConfig from_env();
};

class LlmRewriter final : public Rewriter {
 public:
  /// Requests and responses are logged under `log_dir` with the key redacted.
  LlmRewriter(LlmConfig config, std::filesystem::path log_dir);
  std::string rewrite(const PromptBundle& prompt, const memory::History& history, int call) override;
  ctl::Provenance provenance() const override { return ctl::Provenance::Llm; }

  /// The JSON body sent for a prompt; images become base64 PNG data URLs.
  nlohmann::json request_body(const PromptBundle& prompt) const;

 private:
  LlmConfig config_;
  std::filesystem::path log_dir_;
  std::string base_;
  std::string path_;
};

/// Pulls the reply text out of a chat-completions response body; nullopt when
/// the body does not have that shape.
std::optional<std::string> response_text(const std::string& body);

}  // namespace aor::loop
