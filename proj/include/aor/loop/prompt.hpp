#pragma once

#include "aor/memory/store.hpp"
#include "aor/sim/world.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace aor::loop {

inline constexpr int kDigestEpisodes = 5;
inline constexpr int kMaxPromptImages = 16;
inline constexpr int kPriorFinalFrames = 2;

/// Contents of docs/controller-api.md, compiled in.
std::string_view controller_api_doc();

std::string task_description(sim::TaskId task);

struct PromptImage {
  std::string label;
  render::RgbdImage image;
};

struct PromptBundle {
  std::string system;
  std::string digest;
  std::vector<PromptImage> images;
  std::string current_source;
  std::string contract;

  /// The user-turn text: digest, current source, and output contract.
  std::string user_text() const;
  /// Everything textual, in a fixed order; what determinism checks compare.
  std::string text() const;
};

/// Assembles the reflection prompt from stored history. Images are the most
/// recent episode's keyframes plus the final frame of up to two earlier
/// episodes, read from `run_dir`; missing files are skipped.
/// Throws std::invalid_argument on an empty history.
PromptBundle build_prompt(const memory::History& history, const std::filesystem::path& run_dir,
                          const std::string& current_source, sim::TaskId task);

struct ParsedRewrite {
  memory::DiagnosisRecord diagnosis;
  std::string source;
  /// False when the diagnosis block was absent or unreadable and defaults were used.
  bool diagnosis_found = false;
};

class RewriteParseError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Pulls the `controller` block (else the last fenced block that is not a
/// diagnosis) and the `diagnosis` block out of a rewriter response.
/// Throws RewriteParseError when no controller source can be found.
ParsedRewrite parse_rewrite(std::string_view response);

}  // namespace aor::loop
