"""Watertight surface reconstruction from oriented points with a relaxed TV indicator."""

from .field import PointCloud, PointSample, box_smooth, divergence, divergence_field, splat
from .grid import (
    ConfigurationError,
    GridDims,
    GridFrame,
    InputError,
    Pyramid,
    ScalarGrid,
    VectorGrid,
    build_frame,
    build_pyramid,
)
from .io import read_cloud, read_mesh, write_mesh
from .metrics import SyntheticCloudSpec, exhaustive_binary_min, generate_cloud, rms_distance
from .pipeline import PipelineError, RunConfig, run_pipeline
from .solver import SolveReport, SolverConfig, energy, solve_level, solve_multires
from .surface import TriangleMesh, marching_cubes, select_isovalue, smooth_binary, threshold

__all__ = [
    "ConfigurationError", "GridDims", "GridFrame", "InputError", "PipelineError", "PointCloud",
    "PointSample", "Pyramid", "RunConfig", "ScalarGrid", "SolveReport", "SolverConfig",
    "SyntheticCloudSpec", "TriangleMesh", "VectorGrid", "box_smooth", "build_frame",
    "build_pyramid", "divergence", "divergence_field", "energy", "exhaustive_binary_min",
    "generate_cloud", "marching_cubes", "read_cloud", "read_mesh", "rms_distance",
    "run_pipeline", "select_isovalue", "smooth_binary", "solve_level", "solve_multires",
    "splat", "threshold", "write_mesh",
]
