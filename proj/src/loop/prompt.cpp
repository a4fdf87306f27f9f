#include "aor/loop/prompt.hpp"

#include "aor/render/image_io.hpp"

#include <cstdio>
#include <sstream>

namespace aor::loop {

namespace {

constexpr std::string_view kRewriteRules =
    "Rewrite rules:\n"
    "- Change only what the evidence points to. Keep the parts of the current controller that work.\n"
    "- Do not throw the controller away and start from scratch; a complete replacement source is\n"
    "  required, but it should read as an edit of the current one.\n"
    "- Prefer one well-aimed change per revision so its effect can be judged from the next episode.\n";

constexpr std::string_view kQuestions =
    "Before writing code, answer these three questions in your reasoning:\n"
    "1. What was the dominant failure mode?\n"
    "2. Was the root cause in vision, controller logic, or parameters?\n"
    "3. What is the single most impactful change?\n";

constexpr std::string_view kOutputContract =
    "Reply with exactly two fenced blocks.\n"
    "\n"
    "The first is tagged `diagnosis` and holds a JSON object:\n"
    "```diagnosis\n"
    "{\"tags\": [\"short_label\", ...], \"reasoning\": \"...\", \"strategy\": \"...\", \"confidence\": 0.0}\n"
    "```\n"
    "confidence is your probability, in [0, 1], that the change fixes the failure.\n"
    "\n"
    "The second is tagged `controller` and holds the complete replacement source:\n"
    "```controller\n"
    "...\n"
    "```\n";

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string oscillation_definition() {
  return "Oscillation flag: set when, within some window of " + std::to_string(memory::kOscillationWindow) +
         " consecutive steps, the commanded motion along one axis (x, y or z) changes sign more than " +
         std::to_string(memory::kOscillationFlips) + " times. Zero commands do not count as a sign.\n";
}

void digest_episode(std::ostringstream& out, const memory::EpisodeOutcome& e) {
  out << "episode " << e.episode_index << " | controller v" << e.controller_version << " | seed " << e.seed
      << " | " << (e.success ? "SUCCESS" : "FAILED") << " after " << e.steps << " steps (" << e.termination
      << ")\n";
  out << "  final_phase: " << e.final_phase << "\n";
  out << "  phases:";
  for (std::size_t i = 0; i < e.phase_log.size(); ++i) {
    out << (i == 0 ? " " : ", ") << e.phase_log[i].step << " " << e.phase_log[i].phase;
  }
  out << "\n";
  out << "  min_distance: "
      << (std::isfinite(e.min_distance) ? fmt("%.4f", e.min_distance) + " m" : std::string("n/a"))
      << " | oscillation: " << (e.oscillation ? "yes" : "no") << " | reward_total: " << fmt("%.4f", e.reward_total)
      << " | exceptions: " << e.exception_count << "\n";
}

struct FrameRef {
  std::string ref;
  std::string label;
};

std::string frame_label(int episode, const std::string& ref) {
  std::string name = std::filesystem::path(ref).stem().string();
  const auto cut = name.find('_');
  std::string label = "episode " + std::to_string(episode);
  if (cut == std::string::npos || cut == 0 || name.find_first_not_of("0123456789") != cut) {
    return label + " frame " + name;
  }
  return label + " step " + std::to_string(std::stoll(name.substr(0, cut))) + " phase " + name.substr(cut + 1);
}

}  // namespace

std::string task_description(sim::TaskId task) {
  switch (task) {
    case sim::TaskId::Lift:
      return "Lift: pick up the red cube from the table and raise it at least 4 cm.";
    case sim::TaskId::PickPlace:
      return "PickPlaceCan: pick up the red can and put it down inside the bin, whose centre is at "
             "x = 0, y = 0.20. The can must end up standing in the bin and released.";
    case sim::TaskId::Stack:
      return "Stack: pick up the red cube (cubeA) and set it on top of the green cube (cubeB), centred within "
             "2 cm, then release it. cubeB must not move by 1 cm or more after the red cube is picked up.";
  }
  return {};
}

std::string PromptBundle::user_text() const {
  std::string out;
  out += "Recent episodes, oldest first:\n\n" + digest + "\n";
  out += "Current controller:\n```controller\n" + current_source;
  if (!current_source.empty() && current_source.back() != '\n') out += "\n";
  out += "```\n\n";
  if (!images.empty()) {
    out += "Attached images, in order:\n";
    for (std::size_t i = 0; i < images.size(); ++i) {
      out += "  [" + std::to_string(i + 1) + "] " + images[i].label + "\n";
    }
    out += "\n";
  }
  out += contract;
  return out;
}

std::string PromptBundle::text() const { return system + "\n" + user_text(); }

PromptBundle build_prompt(const memory::History& history, const std::filesystem::path& run_dir,
                          const std::string& current_source, sim::TaskId task) {
  if (history.episodes.empty()) throw std::invalid_argument("build_prompt needs at least one episode");
  PromptBundle b;

  b.system += "You revise the controller of a simulated robot arm between episodes.\n\n";
  b.system += "Task. " + task_description(task) + "\n\n";
  b.system += std::string(controller_api_doc()) + "\n";
  b.system += std::string(kRewriteRules) + "\n";
  b.system += std::string(kQuestions) + "\n";
  b.system += oscillation_definition();

  const auto& eps = history.episodes;
  const std::size_t first = eps.size() > kDigestEpisodes ? eps.size() - kDigestEpisodes : 0;
  std::ostringstream digest;
  for (std::size_t i = first; i < eps.size(); ++i) digest_episode(digest, eps[i]);
  if (!history.diagnoses.empty()) {
    const std::size_t d0 = history.diagnoses.size() > kDigestEpisodes ? history.diagnoses.size() - kDigestEpisodes : 0;
    digest << "\nEarlier revisions:\n";
    for (std::size_t i = d0; i < history.diagnoses.size(); ++i) {
      const auto& d = history.diagnoses[i];
      digest << "  v" << d.produced_version << ": " << d.strategy << "\n";
    }
  }
  b.digest = digest.str();
  b.current_source = current_source;
  b.contract = std::string(kOutputContract);

  std::vector<FrameRef> refs;
  const auto& last = eps.back();
  for (const auto& r : last.keyframe_refs) refs.push_back({r, frame_label(last.episode_index, r)});
  int prior = 0;
  for (std::size_t i = eps.size() - 1; i-- > 0 && prior < kPriorFinalFrames;) {
    if (eps[i].keyframe_refs.empty()) continue;
    refs.insert(refs.begin(), {eps[i].keyframe_refs.back(), frame_label(eps[i].episode_index, eps[i].keyframe_refs.back())});
    ++prior;
  }
  for (const auto& r : refs) {
    if (static_cast<int>(b.images.size()) >= kMaxPromptImages) break;
    try {
      b.images.push_back({r.label, render::read_ppm(run_dir / r.ref)});
    } catch (const std::exception&) {
      // A frame that cannot be read is left out rather than failing the rewrite.
    }
  }
  return b;
}

namespace {

struct Fence {
  std::string tag;
  std::string body;
};

std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto z = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, z - a + 1));
}

std::vector<Fence> fences(std::string_view text) {
  std::vector<Fence> out;
  std::istringstream in{std::string(text)};
  std::string line;
  bool open = false;
  Fence cur;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (!open) {
      if (t.rfind("```", 0) == 0) {
        open = true;
        cur = Fence{trim(std::string_view(t).substr(3)), {}};
      }
    } else if (t == "```") {
      out.push_back(std::move(cur));
      open = false;
    } else {
      cur.body += line;
      cur.body += '\n';
    }
  }
  return out;
}

}  // namespace

ParsedRewrite parse_rewrite(std::string_view response) {
  const auto blocks = fences(response);
  ParsedRewrite out;
  const Fence* controller = nullptr;
  const Fence* fallback = nullptr;
  for (const auto& f : blocks) {
    if (f.tag == "controller") controller = &f;
    if (f.tag != "diagnosis") fallback = &f;
    if (f.tag == "diagnosis" && !out.diagnosis_found) {
      const auto j = nlohmann::json::parse(f.body, nullptr, false);
      if (!j.is_discarded() && j.is_object()) {
        out.diagnosis = memory::diagnosis_from_json(j);
        out.diagnosis.produced_version = 0;
        out.diagnosis_found = true;
      }
    }
  }
  if (controller == nullptr) controller = fallback;
  if (controller == nullptr || trim(controller->body).empty()) {
    throw RewriteParseError("response contains no controller block");
  }
  out.source = controller->body;
  return out;
}

}  // namespace aor::loop
