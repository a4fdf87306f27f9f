"""Python access to the simulator, perception, controller runtime and rewrite loop."""

from ._core import (  # noqa: F401
    BuiltinEnv,
    Camera,
    backproject,
    default_camera,
    exit_code,
    default_controller,
    load_history,
    project,
    run_episode,
    run_loop,
    tasks,
    validate,
)
