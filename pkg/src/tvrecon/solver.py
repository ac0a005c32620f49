"""Relaxed indicator solver: lagged-diffusivity SOR for TV, plain SOR for Poisson.

Energy (world units, ``h**3`` volume weights, forward differences)::

    E(u) = lam * sum(phi(|grad u|)) * h**3 - sum(div * u) * h**3

with ``phi(s) = s`` (TV) or ``phi(s) = s**2`` (Poisson). The sweep solves
the Euler-Lagrange equation of that energy, so its coupling coefficient is
``lam / h**2`` per edge.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np

from .grid import ConfigurationError, GridFrame, Pyramid, ScalarGrid, coarsen_dims

log = logging.getLogger(__name__)

TV = "tv"
POISSON = "poisson"
DIRICHLET = "dirichlet"
FREE = "free"
LOWER = "lower"
AVERAGE = "average"

BLOCK = 8
FULL_SWEEP_EVERY = 16
CHANGE_EPS = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 0.007
    omega: float = 1.85
    epsilon: float = 1e-3
    mode: str = TV
    g_update_stride: int = 2
    max_iters: int = 2000
    rel_energy_tol: float = 1e-6
    levels: int = 3
    boundary: str = DIRICHLET
    skip_inactive: bool = True
    edge_weight: str = LOWER

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigurationError(f"lambda must be > 0, got {self.lam}")
        if not 0 < self.omega < 2:
            raise ConfigurationError(f"omega must lie in (0, 2), got {self.omega}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.mode not in (TV, POISSON):
            raise ConfigurationError(f"mode must be 'tv' or 'poisson', got {self.mode!r}")
        if self.boundary not in (DIRICHLET, FREE):
            raise ConfigurationError(f"boundary must be 'dirichlet' or 'free', got {self.boundary!r}")
        if self.edge_weight not in (LOWER, AVERAGE):
            raise ConfigurationError(f"edge_weight must be 'lower' or 'average', got {self.edge_weight!r}")
        if self.g_update_stride < 1 or self.max_iters < 1 or self.levels < 1:
            raise ConfigurationError("g_update_stride, max_iters and levels must be >= 1")
        if not self.rel_energy_tol > 0:
            raise ConfigurationError(f"rel_energy_tol must be > 0, got {self.rel_energy_tol}")


@dataclass
class SolveReport:
    iterations_per_level: list[int] = field(default_factory=list)
    energy_trace: list[tuple[int, float]] = field(default_factory=list)
    final_energy: float = 0.0
    converged: bool = False

    def trace_csv(self) -> str:
        lines = ["iteration,energy"]
        lines += [f"{it},{e!r}" for it, e in self.energy_trace]
        return "\n".join(lines) + "\n"


def forward_gradient_norm(u: np.ndarray, h: float) -> np.ndarray:
    """|grad u| from forward differences; the difference past the last vertex is 0."""
    sq = np.zeros_like(u)
    for axis in range(3):
        d = np.diff(u, axis=axis) / h
        pad = [(0, 0)] * 3
        pad[axis] = (0, 1)
        sq += np.pad(d, pad) ** 2
    return np.sqrt(sq)


def energy(u: ScalarGrid, div: ScalarGrid, lam: float, mode: str = TV) -> float:
    """Discrete relaxed energy (no epsilon smoothing)."""
    h = u.frame.h
    grad = forward_gradient_norm(u.array, h)
    reg = grad if mode == TV else grad**2
    return float((lam * reg.sum() - np.dot(div.data, u.data)) * h**3)


def update_diffusivity(u: ScalarGrid, epsilon: float) -> ScalarGrid:
    """g = 1 / sqrt(|grad u|**2 + eps**2), same stencil as :func:`energy`."""
    if not epsilon > 0:
        raise ConfigurationError(f"epsilon must be > 0, got {epsilon}")
    grad = forward_gradient_norm(u.array, u.frame.h)
    return ScalarGrid.from_array(u.frame, 1.0 / np.sqrt(grad**2 + epsilon**2))


@nb.njit(cache=True, inline="always")
def _edge_weight(g_lo, g_hi, mode):
    # mode 0: Poisson, 1: diffusivity of the edge's lower vertex, 2: mean of both ends
    if mode == 0:
        return 2.0
    if mode == 1:
        return g_lo
    return 0.5 * (g_lo + g_hi)


@nb.njit(cache=True)
def _sweep_kernel(u, g, div, coef, omega, mode, start, active, change):
    nz, ny, nx = u.shape
    for z in range(start, nz - start):
        bz = z // BLOCK
        for y in range(start, ny - start):
            by = y // BLOCK
            for x in range(start, nx - start):
                bx = x // BLOCK
                if not active[bz, by, bx]:
                    continue
                gi = g[z, y, x]
                wsum = 0.0
                acc = 0.0
                # lower neighbours already hold this sweep's values (Gauss-Seidel order)
                if x > 0:
                    w = _edge_weight(g[z, y, x - 1], gi, mode)
                    wsum += w
                    acc += w * u[z, y, x - 1]
                if x < nx - 1:
                    w = _edge_weight(gi, g[z, y, x + 1], mode)
                    wsum += w
                    acc += w * u[z, y, x + 1]
                if y > 0:
                    w = _edge_weight(g[z, y - 1, x], gi, mode)
                    wsum += w
                    acc += w * u[z, y - 1, x]
                if y < ny - 1:
                    w = _edge_weight(gi, g[z, y + 1, x], mode)
                    wsum += w
                    acc += w * u[z, y + 1, x]
                if z > 0:
                    w = _edge_weight(g[z - 1, y, x], gi, mode)
                    wsum += w
                    acc += w * u[z - 1, y, x]
                if z < nz - 1:
                    w = _edge_weight(gi, g[z + 1, y, x], mode)
                    wsum += w
                    acc += w * u[z + 1, y, x]
                old = u[z, y, x]
                new = (1.0 - omega) * old + omega * (coef * acc + div[z, y, x]) / (coef * wsum)
                if new < 0.0:
                    new = 0.0
                elif new > 1.0:
                    new = 1.0
                u[z, y, x] = new
                d = abs(new - old)
                if d > change[bz, by, bx]:
                    change[bz, by, bx] = d


def _block_shape(shape):
    return tuple((n + BLOCK - 1) // BLOCK for n in shape)


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    for axis in range(3):
        prev = out.copy()
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        out[tuple(lo)] |= prev[tuple(hi)]
        out[tuple(hi)] |= prev[tuple(lo)]
    return out


def _block_any(values: np.ndarray) -> np.ndarray:
    """Per-block ``any`` over a boolean vertex array."""
    bshape = _block_shape(values.shape)
    padded = np.zeros(tuple(b * BLOCK for b in bshape), dtype=bool)
    padded[: values.shape[0], : values.shape[1], : values.shape[2]] = values
    return padded.reshape(bshape[0], BLOCK, bshape[1], BLOCK, bshape[2], BLOCK).any(axis=(1, 3, 5))


class _Sweeper:
    """Owns the in-place SOR state for one grid level."""

    def __init__(self, div: ScalarGrid, cfg: SolverConfig):
        self.cfg = cfg
        self.div = div.array
        self.coef = cfg.lam / div.frame.h**2
        if cfg.mode == POISSON:
            self.mode = 0
        else:
            self.mode = 1 if cfg.edge_weight == LOWER else 2
        self.start = 1 if cfg.boundary == DIRICHLET else 0
        bshape = _block_shape(self.div.shape)
        self.source_blocks = _dilate(_block_any(self.div != 0.0))
        self.active = np.ones(bshape, dtype=np.bool_)
        self.change = np.zeros(bshape)
        self.count = 0

    def sweep(self, u: np.ndarray, g: np.ndarray) -> None:
        if not self.cfg.skip_inactive or self.count % FULL_SWEEP_EVERY == 0:
            self.active[:] = True
        self.change[:] = 0.0
        _sweep_kernel(u, g, self.div, self.coef, self.cfg.omega, self.mode, self.start,
                      self.active, self.change)
        self.count += 1
        if self.cfg.skip_inactive:
            self.active = self.source_blocks | _dilate(self.change > CHANGE_EPS)


def sor_sweep(u: ScalarGrid, g: ScalarGrid, div: ScalarGrid, cfg: SolverConfig) -> None:
    """One full lexicographic SOR pass, updating ``u`` in place."""
    _check_frames(u, g, div)
    sweeper = _Sweeper(div, replace(cfg, skip_inactive=False))
    sweeper.sweep(u.array, g.array)


def solve_level(div: ScalarGrid, u0: ScalarGrid, cfg: SolverConfig) -> tuple[ScalarGrid, SolveReport]:
    """Iterate SOR sweeps on one grid until the relative energy change drops below tolerance.

    TV mode refreshes the diffusivity every ``g_update_stride`` sweeps and
    checks the energy after each refresh block; Poisson mode uses unit
    diffusivity and checks after every sweep.
    """
    _check_frames(u0, div)
    u = u0.copy()
    np.clip(u.data, 0.0, 1.0, out=u.data)
    if cfg.boundary == DIRICHLET:
        _zero_boundary(u.array)

    tv = cfg.mode == TV
    stride = cfg.g_update_stride if tv else 1
    sweeper = _Sweeper(div, cfg)
    g = np.ones(div.frame.dims.shape)

    e_prev = energy(u, div, cfg.lam, cfg.mode)
    best, best_e = u.data.copy(), e_prev
    report = SolveReport()
    sweeps = 0
    converged = False
    while sweeps < cfg.max_iters:
        if tv:
            g = update_diffusivity(u, cfg.epsilon).array
        for _ in range(min(stride, cfg.max_iters - sweeps)):
            sweeper.sweep(u.array, g)
            sweeps += 1
        e = energy(u, div, cfg.lam, cfg.mode)
        report.energy_trace.append((sweeps, e))
        if e <= best_e:
            best, best_e = u.data.copy(), e
        if abs(e - e_prev) / max(abs(e), 1e-30) < cfg.rel_energy_tol:
            converged = True
            break
        e_prev = e

    if not converged:
        log.warning("solver stopped at max_iters=%d without reaching rel_energy_tol", cfg.max_iters)
        u.data[:] = best
        e = best_e
    report.iterations_per_level.append(sweeps)
    report.final_energy = e
    report.converged = converged
    return u, report


def downsample_sum(div: ScalarGrid, coarse: GridFrame) -> ScalarGrid:
    """Add each fine vertex into its nearest coarse vertex (ties go to the lower one)."""
    if coarse.dims != coarsen_dims(div.frame.dims):
        raise ConfigurationError("coarse frame does not match a halving of the fine frame")
    a = div.array
    for axis in range(3):
        n = a.shape[axis]
        even = np.take(a, np.arange(0, n, 2), axis=axis)
        odd = np.take(a, np.arange(1, n, 2), axis=axis)
        pad = [(0, 0)] * 3
        pad[axis] = (0, 1)
        a = even + np.pad(odd, pad)
    return ScalarGrid.from_array(coarse, a)


def upsample(u: ScalarGrid, fine: GridFrame) -> ScalarGrid:
    """Inject coincident vertices and linearly interpolate the rest, axis by axis."""
    if coarsen_dims(fine.dims) != u.frame.dims:
        raise ConfigurationError("fine frame is not a refinement of the coarse frame")
    a = u.array
    for axis in range(3):
        n = a.shape[axis]
        shape = list(a.shape)
        shape[axis] = 2 * n - 1
        out = np.empty(shape)
        sl_even = [slice(None)] * 3
        sl_even[axis] = slice(0, None, 2)
        out[tuple(sl_even)] = a
        sl_odd = [slice(None)] * 3
        sl_odd[axis] = slice(1, None, 2)
        lo = np.take(a, np.arange(0, n - 1), axis=axis)
        hi = np.take(a, np.arange(1, n), axis=axis)
        out[tuple(sl_odd)] = 0.5 * (lo + hi)
        a = out
    return ScalarGrid.from_array(fine, a)


def solve_multires(
    div_fine: ScalarGrid, pyramid: Pyramid, cfg: SolverConfig
) -> tuple[ScalarGrid, SolveReport]:
    """Coarse-to-fine cascade: solve the coarsest level from zero, upsample, refine."""
    if div_fine.frame != pyramid.finest:
        raise ConfigurationError("divergence grid is not on the finest pyramid frame")
    divs = [div_fine]
    for frame in reversed(pyramid.levels[:-1]):
        summed = downsample_sum(divs[-1], frame)
        # sums -> densities: keeps sum(div * h**3) identical across levels (exact, /8)
        divs.append(ScalarGrid(frame, summed.data / 8.0))
    divs.reverse()

    report = SolveReport()
    u = ScalarGrid.zeros(pyramid.coarsest)
    offset = 0
    for level, (frame, div) in enumerate(zip(pyramid.levels, divs)):
        if level > 0:
            u = upsample(u, frame)
        u, rep = solve_level(div, u, cfg)
        log.info("level %d %s: %d sweeps, energy %.6g, converged=%s",
                 level, frame.dims.as_tuple(), rep.iterations_per_level[0], rep.final_energy,
                 rep.converged)
        report.iterations_per_level += rep.iterations_per_level
        report.energy_trace += [(offset + it, e) for it, e in rep.energy_trace]
        offset += rep.iterations_per_level[0]
        report.final_energy = rep.final_energy
        report.converged = rep.converged
    return u, report


def _zero_boundary(a: np.ndarray) -> None:
    a[0], a[-1] = 0.0, 0.0
    a[:, 0], a[:, -1] = 0.0, 0.0
    a[:, :, 0], a[:, :, -1] = 0.0, 0.0


def _check_frames(*grids: ScalarGrid) -> None:
    frame = grids[0].frame
    if any(g.frame != frame for g in grids[1:]):
        raise ConfigurationError("grids live on different frames")
