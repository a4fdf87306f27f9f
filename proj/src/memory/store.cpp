#include "aor/memory/store.hpp"

#include "aor/render/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace aor::memory {

using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw StorageError(path.string() + ": " + e.what());
  }
}

std::string padded(int n, int width = 3) {
  std::string s = std::to_string(n);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

json vec_json(const std::array<double, 3>& v) { return json::array({v[0], v[1], v[2]}); }

std::array<double, 3> vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw StorageError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

json to_json(const EpisodeOutcome& o) {
  json log = json::array();
  for (const auto& e : o.phase_log) log.push_back({{"step", e.step}, {"phase", e.phase}});
  return {
      {"episode_index", o.episode_index},
      {"reward_total", o.reward_total},
      {"steps", o.steps},
      {"success", o.success},
      {"phase_log", log},
      {"final_phase", o.final_phase},
      {"min_distance", std::isfinite(o.min_distance) ? json(o.min_distance) : json(nullptr)},
      {"oscillation", o.oscillation},
      {"keyframe_refs", o.keyframe_refs},
      {"controller_version", o.controller_version},
      {"seed", o.seed},
      {"termination", o.termination},
      {"exception_count", o.exception_count},
  };
}

EpisodeOutcome outcome_from_json(const json& j) {
  try {
    EpisodeOutcome o;
    o.episode_index = j.at("episode_index").get<int>();
    o.reward_total = j.at("reward_total").get<double>();
    o.steps = j.at("steps").get<std::int64_t>();
    o.success = j.at("success").get<bool>();
    for (const auto& e : j.at("phase_log")) {
      o.phase_log.push_back({e.at("step").get<std::int64_t>(), e.at("phase").get<std::string>()});
    }
    o.final_phase = j.at("final_phase").get<std::string>();
    const auto& md = j.at("min_distance");
    o.min_distance = md.is_null() ? std::numeric_limits<double>::infinity() : md.get<double>();
    o.oscillation = j.at("oscillation").get<bool>();
    o.keyframe_refs = j.at("keyframe_refs").get<std::vector<std::string>>();
    o.controller_version = j.at("controller_version").get<int>();
    o.seed = j.at("seed").get<std::uint64_t>();
    o.termination = j.value("termination", std::string("budget"));
    o.exception_count = j.value("exception_count", 0);
    return o;
  } catch (const json::exception& e) {
    throw StorageError(std::string("bad outcome record: ") + e.what());
  }
}

json to_json(const DiagnosisRecord& d) {
  return {{"tags", d.tags},
          {"reasoning", d.reasoning},
          {"strategy", d.strategy},
          {"confidence", d.confidence},
          {"produced_version", d.produced_version}};
}

DiagnosisRecord diagnosis_from_json(const json& j) {
  DiagnosisRecord d;
  if (!j.is_object()) return d;
  if (auto it = j.find("tags"); it != j.end() && it->is_array()) {
    std::vector<std::string> tags;
    for (const auto& t : *it) {
      if (t.is_string() && !t.get<std::string>().empty()) tags.push_back(t.get<std::string>());
    }
    if (!tags.empty()) d.tags = std::move(tags);
  }
  if (auto it = j.find("reasoning"); it != j.end() && it->is_string()) d.reasoning = it->get<std::string>();
  if (auto it = j.find("strategy"); it != j.end() && it->is_string()) d.strategy = it->get<std::string>();
  if (auto it = j.find("confidence"); it != j.end() && it->is_number()) {
    const double c = it->get<double>();
    if (std::isfinite(c)) d.confidence = std::clamp(c, 0.0, 1.0);
  }
  if (auto it = j.find("produced_version"); it != j.end() && it->is_number_integer()) {
    d.produced_version = it->get<int>();
  }
  return d;
}

json to_json(const EpisodeTrace& t) {
  json rows = json::array();
  for (const auto& r : t) {
    rows.push_back({
        {"step", r.step},
        {"action", json::array({r.action[0], r.action[1], r.action[2], r.action[3]})},
        {"eef", vec_json(r.eef)},
        {"object", r.object ? vec_json(*r.object) : json(nullptr)},
        {"phase", r.phase},
        {"reward", r.reward},
        {"secondary_displacement", r.secondary_displacement},
        {"exception", r.exception},
    });
  }
  return rows;
}

EpisodeTrace trace_from_json(const json& j) {
  try {
    EpisodeTrace t;
    for (const auto& r : j) {
      TraceRow row;
      row.step = r.at("step").get<std::int64_t>();
      const auto& a = r.at("action");
      if (!a.is_array() || a.size() != 4) throw StorageError("expected a 4-vector action");
      for (std::size_t i = 0; i < 4; ++i) row.action[i] = a[i].get<double>();
      row.eef = vec3_from(r.at("eef"));
      if (!r.at("object").is_null()) row.object = vec3_from(r.at("object"));
      row.phase = r.at("phase").get<std::string>();
      row.reward = r.at("reward").get<double>();
      row.secondary_displacement = r.at("secondary_displacement").get<double>();
      row.exception = r.at("exception").get<bool>();
      t.push_back(std::move(row));
    }
    return t;
  } catch (const json::exception& e) {
    throw StorageError(std::string("bad trace: ") + e.what());
  }
}

bool detect_oscillation(const EpisodeTrace& trace, int window, int flips) {
  const std::size_t n = trace.size();
  if (n < 2 || window < 2) return false;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    // flip[i] marks a sign change between steps i-1 and i.
    std::vector<int> prefix(n + 1, 0);
    for (std::size_t i = 1; i < n; ++i) {
      const double a = trace[i - 1].action[axis];
      const double b = trace[i].action[axis];
      prefix[i + 1] = prefix[i] + ((a > 0.0 && b < 0.0) || (a < 0.0 && b > 0.0) ? 1 : 0);
    }
    // A window [s, s + window - 1] holds flips at indices s+1 .. s+window-1.
    const std::size_t w = static_cast<std::size_t>(window);
    const std::size_t last_start = n > w ? n - w : 0;
    for (std::size_t s = 0; s <= last_start; ++s) {
      const std::size_t end = std::min(n, s + w);
      if (prefix[end] - prefix[s + 1] > flips) return true;
    }
  }
  return false;
}

double min_distance(const EpisodeTrace& trace) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : trace) {
    if (!r.object) continue;
    const double dx = r.eef[0] - (*r.object)[0];
    const double dy = r.eef[1] - (*r.object)[1];
    const double dz = r.eef[2] - (*r.object)[2];
    best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  return best;
}

std::vector<KeyframeSlot> select_keyframes(const std::vector<PhaseEntry>& phase_log, std::int64_t total_steps,
                                           int cap, int interval) {
  using Kind = KeyframeSlot::Kind;
  if (total_steps <= 0 || cap <= 0) return {};
  std::map<std::int64_t, Kind> slots;
  auto offer = [&](std::int64_t step, Kind kind) {
    if (step < 0 || step >= total_steps) return;
    auto [it, inserted] = slots.emplace(step, kind);
    if (!inserted && kind < it->second) it->second = kind;
  };
  for (std::size_t i = 1; i < phase_log.size(); ++i) offer(phase_log[i].step, Kind::Transition);
  offer(total_steps - 1, Kind::Final);
  if (interval > 0) {
    for (std::int64_t s = 0; s < total_steps; s += interval) offer(s, Kind::Interval);
  }
  for (Kind drop : {Kind::Interval, Kind::Final, Kind::Transition}) {
    for (auto it = slots.begin(); it != slots.end() && static_cast<int>(slots.size()) > cap;) {
      it = it->second == drop ? slots.erase(it) : std::next(it);
    }
  }
  std::vector<KeyframeSlot> out;
  for (const auto& [step, kind] : slots) out.push_back({step, kind});
  return out;
}

std::string frame_name(std::int64_t step, const std::string& phase) {
  std::string clean;
  for (char c : phase.substr(0, 32)) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    clean.push_back(ok ? c : '_');
  }
  if (clean.empty()) clean = "none";
  return padded(static_cast<int>(step)) + "_" + clean + ".ppm";
}

void atomic_write(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw StorageError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw StorageError("cannot rename " + tmp.string() + ": " + ec.message());
}

RunStore RunStore::open(const fs::path& dir, const json& config) {
  RunStore store(dir);
  std::error_code ec;
  for (const char* sub : {"", "episodes", "controllers", "diagnoses"}) {
    fs::create_directories(dir / sub, ec);
    if (ec) throw StorageError("cannot create " + (dir / sub).string() + ": " + ec.message());
  }
  if (!fs::exists(dir / "config.json")) atomic_write(dir / "config.json", config.dump(2) + "\n");
  if (fs::exists(dir / "index.json")) store.load_index();
  else store.publish_index();
  return store;
}

json RunStore::config() const { return read_json(dir_ / "config.json"); }

void RunStore::load_index() {
  const json idx = read_json(dir_ / "index.json");
  try {
    episodes_ = idx.at("episodes").get<std::vector<int>>();
    controllers_ = idx.at("controllers").get<std::vector<int>>();
    diagnoses_ = idx.at("diagnoses").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw StorageError(std::string("bad index: ") + e.what());
  }
}

void RunStore::publish_index() {
  const json idx = {{"episodes", episodes_}, {"controllers", controllers_}, {"diagnoses", diagnoses_}};
  atomic_write(dir_ / "index.json", idx.dump(2) + "\n");
}

fs::path RunStore::episode_dir(int index) const { return dir_ / "episodes" / padded(index); }

EpisodeOutcome RunStore::record_episode(EpisodeOutcome outcome, const EpisodeTrace& trace,
                                        const std::vector<Keyframe>& frames) {
  if (outcome.episode_index != episode_count()) {
    throw StorageError("episode index " + std::to_string(outcome.episode_index) + " out of sequence");
  }
  const fs::path ep = episode_dir(outcome.episode_index);
  std::error_code ec;
  fs::remove_all(ep, ec);
  fs::create_directories(ep / "frames", ec);
  if (ec) throw StorageError("cannot create " + ep.string() + ": " + ec.message());

  outcome.keyframe_refs.clear();
  try {
    for (const auto& f : frames) {
      const std::string name = frame_name(f.step, f.phase);
      const render::RgbdImage& img = f.image;
      render::write_ppm(ep / "frames" / name,
                        img.convention == render::ImageConvention::GlBottomUp ? render::flip_rows(img) : img);
      outcome.keyframe_refs.push_back("episodes/" + padded(outcome.episode_index) + "/frames/" + name);
    }
  } catch (const render::ImageIoError& e) {
    throw StorageError(e.what());
  }
  atomic_write(ep / "trace.json", to_json(trace).dump() + "\n");
  atomic_write(ep / "outcome.json", to_json(outcome).dump(2) + "\n");
  episodes_.push_back(outcome.episode_index);
  publish_index();
  return outcome;
}

void RunStore::record_controller(const ControllerEntry& entry) {
  if (!controllers_.empty() && entry.version <= controllers_.back()) {
    throw StorageError("controller versions must increase");
  }
  const fs::path base = dir_ / "controllers" / ("v" + padded(entry.version));
  atomic_write(base.string() + ".ctl", entry.source);
  atomic_write(base.string() + ".json",
               json{{"version", entry.version}, {"provenance", entry.provenance}, {"summary", entry.summary}}.dump(2) +
                   "\n");
  controllers_.push_back(entry.version);
  publish_index();
}

void RunStore::record_diagnosis(const DiagnosisRecord& record) {
  const int n = static_cast<int>(diagnoses_.size());
  atomic_write(dir_ / "diagnoses" / ("d" + padded(n) + ".json"), to_json(record).dump(2) + "\n");
  diagnoses_.push_back(n);
  publish_index();
}

void RunStore::write_json(const std::string& relative, const json& j) {
  atomic_write(dir_ / relative, j.dump(2) + "\n");
}

EpisodeTrace RunStore::load_trace(int index) const {
  return trace_from_json(read_json(episode_dir(index) / "trace.json"));
}

History load_history(const fs::path& dir) {
  History h;
  if (!fs::exists(dir / "index.json")) {
    if (!fs::is_directory(dir)) throw StorageError("no run directory at " + dir.string());
    return h;
  }
  const json idx = read_json(dir / "index.json");
  std::vector<int> episodes, controllers, diagnoses;
  try {
    episodes = idx.at("episodes").get<std::vector<int>>();
    controllers = idx.at("controllers").get<std::vector<int>>();
    diagnoses = idx.at("diagnoses").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw StorageError(std::string("bad index: ") + e.what());
  }
  for (int e : episodes) {
    const fs::path p = dir / "episodes" / padded(e) / "outcome.json";
    try {
      h.episodes.push_back(outcome_from_json(read_json(p)));
    } catch (const StorageError& err) {
      h.warnings.push_back("episode " + std::to_string(e) + ": " + err.what());
    }
  }
  for (int v : controllers) {
    const fs::path base = dir / "controllers" / ("v" + padded(v));
    try {
      ControllerEntry c;
      c.version = v;
      c.source = read_text(base.string() + ".ctl");
      if (fs::exists(base.string() + ".json")) {
        const json meta = read_json(base.string() + ".json");
        c.provenance = meta.value("provenance", std::string());
        c.summary = meta.value("summary", std::string());
      }
      h.controllers.push_back(std::move(c));
    } catch (const StorageError& err) {
      h.warnings.push_back("controller " + std::to_string(v) + ": " + err.what());
    }
  }
  for (int d : diagnoses) {
    const fs::path p = dir / "diagnoses" / ("d" + padded(d) + ".json");
    if (!fs::exists(p)) continue;
    try {
      h.diagnoses.push_back(diagnosis_from_json(read_json(p)));
    } catch (const StorageError& err) {
      h.warnings.push_back("diagnosis " + std::to_string(d) + ": " + err.what());
    }
  }
  return h;
}

}  // namespace aor::memory
