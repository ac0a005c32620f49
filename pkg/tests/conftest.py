import time
from dataclasses import dataclass

import numpy as np
import pytest

from tvrecon.field import PointCloud, divergence_field
from tvrecon.grid import Pyramid, ScalarGrid, build_frame, build_pyramid
from tvrecon.metrics import SyntheticCloudSpec, generate_cloud
from tvrecon.solver import SolveReport, SolverConfig, solve_multires
from tvrecon.surface import TriangleMesh, marching_cubes, select_isovalue, smooth_binary, threshold

# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@dataclass
class Reconstruction:
    cloud: PointCloud
    pyramid: Pyramid
    div: ScalarGrid
    u: ScalarGrid
    report: SolveReport
    u_tilde: ScalarGrid
    isovalue: float
    mesh: TriangleMesh
    seconds: float


def reconstruct(cloud: PointCloud, grid: int = 61, cfg: SolverConfig | None = None) -> Reconstruction:
    cfg = cfg or SolverConfig(lam=0.01)
    t0 = time.perf_counter()
    pyramid = build_pyramid(build_frame(cloud.points, grid, 0.05), cfg.levels)
    div = divergence_field(cloud, pyramid.finest)
    u, report = solve_multires(div, pyramid, cfg)
    u_tilde = smooth_binary(threshold(u, 0.5)[0])
    iso = select_isovalue(u_tilde, cloud)
    mesh = marching_cubes(u_tilde, iso)
    return Reconstruction(cloud, pyramid, div, u, report, u_tilde, iso, mesh, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def sphere_cloud() -> PointCloud:
    return generate_cloud(SyntheticCloudSpec(count=180, seed=0))


@pytest.fixture(scope="session")
def sphere_tv(sphere_cloud) -> Reconstruction:
    reconstruct(sphere_cloud, grid=9, cfg=SolverConfig(lam=0.01, levels=1))  # compile kernels outside the timing
    return reconstruct(sphere_cloud)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
