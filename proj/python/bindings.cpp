#include "aor/ctl/runtime.hpp"
#include "aor/loop/controllers.hpp"
#include "aor/loop/env.hpp"
#include "aor/loop/episode.hpp"
#include "aor/loop/orchestrator.hpp"
#include "aor/loop/rewriter.hpp"
#include "aor/memory/store.hpp"
#include "aor/render/camera.hpp"
#include "aor/vision/vision.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

namespace py = pybind11;
using namespace aor;

namespace {

// Cheapest faithful route from nlohmann to Python objects.
py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict observation(const loop::Observation& o) {
  const auto& img = o.image;
  py::array_t<std::uint8_t> rgb({img.height, img.width, 3});
  std::memcpy(rgb.mutable_data(), img.rgb.data(), img.rgb.size());
  py::array_t<float> depth({img.height, img.width});
  std::memcpy(depth.mutable_data(), img.depth.data(), img.depth.size() * sizeof(float));
  py::dict d;
  d["rgb"] = rgb;
  d["depth"] = depth;
  d["convention"] = std::string(render::to_string(img.convention));
  d["eef_pos"] = o.proprio.eef_pos;
  d["gripper_aperture"] = o.proprio.gripper_aperture;
  d["step"] = o.proprio.step;
  d["primary_object"] = o.primary_object ? py::cast(*o.primary_object) : py::none();
  return d;
}

ctl::ControllerProgram compile_or_throw(const std::string& source) {
  auto r = ctl::validate(source);
  if (auto* err = std::get_if<ctl::ValidationError>(&r))
    throw py::value_error(std::string(ctl::to_string(err->stage)) + ": " + err->message);
  return std::get<ctl::ControllerProgram>(std::move(r));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<loop::BackendError>(m, "BackendError", PyExc_RuntimeError);

  m.def("tasks", [] {
    return std::vector<std::string>{"lift", "pickplace", "stack"};
  });

  py::class_<render::CameraModel>(m, "Camera")
      .def_readwrite("fx", &render::CameraModel::fx)
      .def_readwrite("fy", &render::CameraModel::fy)
      .def_readwrite("cx", &render::CameraModel::cx)
      .def_readwrite("cy", &render::CameraModel::cy)
      .def_readwrite("width", &render::CameraModel::width)
      .def_readwrite("height", &render::CameraModel::height)
      .def_readwrite("rotation", &render::CameraModel::cam_rot)
      .def_readwrite("position", &render::CameraModel::cam_pos)
      .def_property(
          "convention", [](const render::CameraModel& c) { return std::string(render::to_string(c.convention)); },
          [](render::CameraModel& c, const std::string& s) { c.convention = render::parse_convention(s); });

  m.def("default_camera", &render::default_camera, py::arg("table_top_z") = 0.8);

  m.def(
      "project",
      [](const Vec3& p, const render::CameraModel& cam) {
        const auto px = render::project(p, cam);
        return py::make_tuple(px.u, px.v, px.d);
      },
      py::arg("point"), py::arg("camera"), "World point to (u, stored row, depth).");

  m.def(
      "backproject",
      [](double u, double v, double d, const render::CameraModel& cam, bool flip_y, bool cv_axis_extrinsic) {
        return vision::backproject(u, v, d, cam, {flip_y, cv_axis_extrinsic});
      },
      py::arg("u"), py::arg("v"), py::arg("depth"), py::arg("camera"), py::arg("flip_y") = false,
      py::arg("cv_axis_extrinsic") = false);

  m.def(
      "validate",
      [](const std::string& source) {
        py::dict out;
        const auto r = ctl::validate(source);
        if (const auto* err = std::get_if<ctl::ValidationError>(&r)) {
          out["ok"] = false;
          out["stage"] = std::string(ctl::to_string(err->stage));
          out["message"] = err->message;
        } else {
          const auto& prog = std::get<ctl::ControllerProgram>(r);
          std::vector<std::string> names;
          for (const auto& t : prog.config.targets) names.push_back(t.name);
          out["ok"] = true;
          out["targets"] = names;
          out["ema_alpha"] = prog.config.ema_alpha;
        }
        return out;
      },
      py::arg("source"));

  m.def(
      "default_controller", [](const std::string& task) { return loop::default_controller(sim::parse_task_id(task)); },
      py::arg("task"));

  py::class_<loop::BuiltinEnv>(m, "BuiltinEnv")
      .def(py::init([](const std::string& task) { return loop::BuiltinEnv(sim::parse_task_id(task)); }),
           py::arg("task"))
      .def("reset", [](loop::BuiltinEnv& e, std::uint64_t seed) { return observation(e.reset(seed)); },
           py::arg("seed"))
      .def(
          "step",
          [](loop::BuiltinEnv& e, double dx, double dy, double dz, double grip) {
            const auto s = e.step(sim::Action{Vec3(dx, dy, dz), grip});
            return py::make_tuple(observation(s.obs), s.reward, s.done, s.success);
          },
          py::arg("dx"), py::arg("dy"), py::arg("dz"), py::arg("grip"))
      .def_property_readonly("camera", &loop::BuiltinEnv::camera)
      .def_property_readonly("step_budget", [](const loop::BuiltinEnv& e) { return e.task().episode_step_budget; });

  m.def(
      "run_episode",
      [](const std::string& task, const std::string& source, std::uint64_t seed, std::int64_t step_budget) {
        const auto program = compile_or_throw(source);
        loop::EpisodeResult res;
        {
          py::gil_scoped_release nogil;
          loop::BuiltinEnv env(sim::parse_task_id(task));
          res = loop::run_episode(env, program, {0, seed, step_budget});
        }
        auto out = to_py(memory::to_json(res.outcome));
        out["detection_steps"] = res.detection_steps;
        out["keyframes"] = res.keyframes.size();
        return out;
      },
      py::arg("task"), py::arg("source"), py::arg("seed") = 0, py::arg("step_budget") = 0);

  m.def(
      "run_loop",
      [](const std::string& task, const std::string& out, std::uint64_t seed, int iterations, int window,
         int eval_episodes, std::int64_t step_budget) {
        loop::RunConfig config;
        config.task = sim::parse_task_id(task);
        config.out = out;
        config.seed = seed;
        config.iterations = iterations;
        config.window = window;
        config.eval_episodes = eval_episodes;
        config.step_budget = step_budget;
        config.validate();
        loop::RunResult result;
        {
          py::gil_scoped_release nogil;
          loop::MockRewriter rewriter(config.task);
          result = loop::run_loop(config, rewriter, loop::make_env_factory(config));
        }
        py::dict d;
        d["status"] = std::string(loop::to_string(result.status));
        d["exit_code"] = loop::exit_code(result.status);
        d["message"] = result.message;
        d["report"] = to_py(result.report.to_json());
        return d;
      },
      py::arg("task"), py::arg("out"), py::arg("seed") = 42, py::arg("iterations") = loop::kDefaultIterations,
      py::arg("window") = loop::kDefaultWindow, py::arg("eval_episodes") = -1, py::arg("step_budget") = 0,
      "Runs the rewrite loop with the scripted offline rewriter.");

  m.def(
      "exit_code",
      [](const std::string& status) {
        for (auto s : {loop::RunStatus::Converged, loop::RunStatus::BudgetExhausted, loop::RunStatus::BackendFailure,
                       loop::RunStatus::CredentialFailure})
          if (loop::to_string(s) == status) return loop::exit_code(s);
        throw py::value_error("unknown status: " + status);
      },
      py::arg("status"));

  m.def(
      "load_history",
      [](const std::string& dir) {
        const auto h = memory::load_history(dir);
        nlohmann::json j;
        j["episodes"] = nlohmann::json::array();
        for (const auto& e : h.episodes) j["episodes"].push_back(memory::to_json(e));
        j["diagnoses"] = nlohmann::json::array();
        for (const auto& d : h.diagnoses) j["diagnoses"].push_back(memory::to_json(d));
        j["controllers"] = nlohmann::json::array();
        for (const auto& c : h.controllers)
          j["controllers"].push_back(
              {{"version", c.version}, {"provenance", c.provenance}, {"summary", c.summary}, {"source", c.source}});
        j["warnings"] = h.warnings;
        return to_py(j);
      },
      py::arg("run_dir"));
}
