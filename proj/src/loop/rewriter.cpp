#include "aor/loop/rewriter.hpp"

#include "aor/loop/controllers.hpp"
#include "aor/render/image_io.hpp"
#include "aor/util/base64.hpp"

#include <httplib.h>

#include <cstdlib>
#include <fstream>
#include <regex>

namespace aor::loop {

std::string MockRewriter::rewrite(const PromptBundle&, const memory::History& history, int call) {
  return mock_rewriter(task_, call, history);
}

LlmConfig LlmConfig::from_env() {
  auto get = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v == nullptr) return std::nullopt;
    return std::string(v);
  };
  LlmConfig c;
  const auto endpoint = get("AOR_LLM_ENDPOINT");
  if (!endpoint || endpoint->empty()) throw ConfigError("AOR_LLM_ENDPOINT is not set");
  const auto model = get("AOR_LLM_MODEL");
  if (!model || model->empty()) throw ConfigError("AOR_LLM_MODEL is not set");
  const auto key = get("AOR_LLM_API_KEY");
  if (!key) throw ConfigError("AOR_LLM_API_KEY is not set");
  c.endpoint = *endpoint;
  c.model = *model;
  c.api_key = *key;
  return c;
}

LlmRewriter::LlmRewriter(LlmConfig config, std::filesystem::path log_dir)
    : config_(std::move(config)), log_dir_(std::move(log_dir)) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, url)) {
    throw ConfigError("AOR_LLM_ENDPOINT must be an http(s) URL, got '" + config_.endpoint + "'");
  }
  base_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
}

nlohmann::json LlmRewriter::request_body(const PromptBundle& prompt) const {
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", prompt.user_text()}});
  for (const auto& img : prompt.images) {
    const auto png = render::encode_png(img.image);
    const std::string url =
        "data:image/png;base64," + util::base64_encode(png);
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
  }
  return {{"model", config_.model},
          {"max_tokens", config_.max_tokens},
          {"messages",
           nlohmann::json::array({{{"role", "system"}, {"content", prompt.system}},
                                  {{"role", "user"}, {"content", content}}})}};
}

namespace {

/// Shortens image payloads so the log stays readable; the request itself is unchanged.
nlohmann::json redact_for_log(nlohmann::json body) {
  for (auto& msg : body["messages"]) {
    if (!msg["content"].is_array()) continue;
    for (auto& part : msg["content"]) {
      if (part.value("type", "") != "image_url") continue;
      const std::string url = part["image_url"]["url"].get<std::string>();
      part["image_url"]["url"] = "<png, " + std::to_string(url.size()) + " base64 chars>";
    }
  }
  return body;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

std::string call_tag(int call) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "call%03d", call);
  return buf;
}

}  // namespace

std::optional<std::string> response_text(const std::string& body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  const auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty()) return std::nullopt;
  const auto& first = (*choices)[0];
  if (!first.is_object() || !first.contains("message")) return std::nullopt;
  const auto& msg = first["message"];
  if (!msg.is_object() || !msg.contains("content")) return std::nullopt;
  const auto& c = msg["content"];
  if (c.is_string()) return c.get<std::string>();
  if (c.is_array()) {
    std::string out;
    for (const auto& part : c) {
      if (part.is_object() && part.value("type", "") == "text" && part.contains("text") && part["text"].is_string()) {
        out += part["text"].get<std::string>();
      }
    }
    return out;
  }
  return std::nullopt;
}

std::string LlmRewriter::rewrite(const PromptBundle& prompt, const memory::History&, int call) {
  const nlohmann::json body = request_body(prompt);
  const std::string tag = call_tag(call);
  nlohmann::json log_req = {{"endpoint", config_.endpoint},
                            {"headers", {{"Authorization", config_.api_key.empty() ? "" : "Bearer [redacted]"}}},
                            {"body", redact_for_log(body)}};
  write_text(log_dir_ / (tag + "_request.json"), log_req.dump(2));

  httplib::Client client(base_);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  client.set_write_timeout(config_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    const std::string why = httplib::to_string(res.error());
    write_text(log_dir_ / (tag + "_response.txt"), "transport error: " + why + "\n");
    throw RewriterError("LLM endpoint unreachable: " + why);
  }
  write_text(log_dir_ / (tag + "_response.txt"),
             "HTTP " + std::to_string(res->status) + "\n\n" + res->body);
  if (res->status == 401 || res->status == 403) {
    throw CredentialError("LLM endpoint rejected the credentials (HTTP " + std::to_string(res->status) +
                          "); check AOR_LLM_API_KEY");
  }
  if (res->status < 200 || res->status >= 300) {
    throw RewriterError("LLM endpoint returned HTTP " + std::to_string(res->status));
  }
  // A body of the wrong shape is passed through whole; it then fails parsing
  // downstream and is counted as a wasted call.
  return response_text(res->body).value_or(res->body);
}

}  // namespace aor::loop
