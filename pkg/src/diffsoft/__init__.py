"""Differentiable 2D soft-body simulation with implicit gradients."""

from .layer import BackwardError, ForwardError, Simulator, SolverConfig
from .scene import Scene, SceneError, State, builtin_scene, initial_state, load_scene, load_scene_file

__all__ = [
    "BackwardError",
    "ForwardError",
    "Scene",
    "SceneError",
    "Simulator",
    "SolverConfig",
    "State",
    "builtin_scene",
    "initial_state",
    "load_scene",
    "load_scene_file",
]
