"""``recon`` command line: surface reconstruction and a synthetic sphere generator.

Every long flag can also be given in a ``--config`` file of ``key = value``
lines (``#`` starts a comment, ``max-iters`` and ``max_iters`` are both
accepted). Flags given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

from .grid import ConfigurationError, InputError
from .io import ensure_parent, write_cloud
from .metrics import SyntheticCloudSpec, generate_cloud
from .pipeline import PipelineError, RunConfig, run_pipeline
from .solver import POISSON, TV, SolverConfig

log = logging.getLogger("tvrecon")

LAMBDA_HELP = (
    "smoothness weight (default 0.007, useful range about 0.005 to 0.01). "
    "Orientation samples are spread as one cell face of surface per cell, "
    "so lambda acts on the same scale at every grid resolution"
)


def _vec3(text: str) -> tuple[float, float, float]:
    parts = text.replace(",", " ").split()
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three numbers, got {text!r}") from None


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="recon",
        description="Reconstruct a watertight surface from oriented points via a relaxed "
        "total-variation indicator. Run 'recon gen-sphere -h' for the synthetic generator.",
    )
    p.add_argument("--config", type=Path, help="file of 'key = value' lines; flags win")
    p.add_argument("--input", type=Path, help="PLY or 3/6-column text point cloud")
    p.add_argument("--output", type=Path, help="mesh path (.obj or .ply)")
    p.add_argument("--grid", type=int, default=256, help="vertices on the longest axis (default 256)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.007, help=LAMBDA_HELP)
    p.add_argument("--mode", choices=(TV, POISSON), default=TV)
    p.add_argument("--mu", type=float, default=0.5, help="binarisation threshold (default 0.5)")
    p.add_argument("--levels", type=int, default=3, help="multiresolution levels (default 3)")
    p.add_argument("--max-iters", type=int, default=2000, help="sweep cap per level")
    p.add_argument("--tol", type=float, default=1e-6, help="relative energy change to stop at")
    p.add_argument("--omega", type=float, default=1.85, help="over-relaxation factor in (0, 2)")
    p.add_argument("--epsilon", type=float, default=1e-3, help="diffusivity regulariser")
    p.add_argument("--pad", type=float, default=0.05, help="bounding box margin per side, as a fraction")
    orient = p.add_mutually_exclusive_group()
    orient.add_argument("--viewdir", type=_vec3, help="one sensor direction X,Y,Z for all points")
    orient.add_argument("--viewdir-file", type=Path, help="one 'x y z' direction per point")
    p.add_argument("--log", dest="log_path", type=Path, help="write the energy trace as CSV")
    p.add_argument("--report", dest="report_path", type=Path, help="write inside counts per threshold")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default all)")
    p.add_argument("--seed", type=int, default=0,
                   help="recorded for reproducibility; reconstruction itself draws no random numbers")
    p.add_argument("--no-rebinarize", type=_bool, nargs="?", const=True, default=False,
                   help="debug: extract from the relaxed solution directly")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_gen_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recon gen-sphere",
                                description="Write a synthetic oriented sphere sample as 6-column text.")
    p.add_argument("--count", type=int, required=True, help="candidate samples before filtering")
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--hole-cap-deg", type=float, default=0.0,
                   help="angular radius of the removed cap around +z")
    p.add_argument("--density-skew", type=float, default=1.0,
                   help="keep x<0 samples with probability 1/skew")
    p.add_argument("--noise", type=float, default=0.0, help="radial Gaussian noise sigma")
    p.add_argument("--normal-error-deg", type=float, default=0.0, help="tilt of every normal")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--output", type=Path, required=True)
    return p


def read_config(path: Path, parser: argparse.ArgumentParser) -> dict:
    """Parse ``key = value`` lines into parser defaults, converting with each flag's type."""
    actions = {}
    for a in parser._actions:
        for opt in a.option_strings:
            if opt.startswith("--"):
                actions[opt[2:].replace("-", "_")] = a
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            action = actions.get(key.replace("-", "_"))
            if action is None or action.dest in ("config", "help"):
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                conv = action.type(value) if action.type else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigurationError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
            if action.choices and conv not in action.choices:
                raise ConfigurationError(f"{path}:{lineno}: {key} must be one of {action.choices}")
            out[action.dest] = conv
    return out


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    first = parser.parse_args(argv)
    if first.config is not None:
        try:
            defaults = read_config(first.config, parser)
        except OSError as exc:
            parser.error(f"cannot read config: {exc}")
        except ConfigurationError as exc:
            parser.error(str(exc))
        if "viewdir" in defaults and "viewdir_file" in defaults:
            parser.error("config sets both viewdir and viewdir-file")
        # a flag on the command line overrides the file's choice of orientation source
        if first.viewdir is not None or first.viewdir_file is not None:
            defaults.pop("viewdir", None)
            defaults.pop("viewdir_file", None)
        parser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    else:
        args = first
    if args.input is None or args.output is None:
        parser.error("--input and --output are required (on the command line or in --config)")
    return args


def set_threads(n: int | None) -> int:
    import numba

    limit = numba.config.NUMBA_NUM_THREADS
    if n is None:
        return limit
    if n < 1:
        raise ConfigurationError(f"--threads must be >= 1, got {n}")
    n = min(n, limit)
    with warnings.catch_warnings():
        # starting the thread pool may complain about an old TBB and fall back
        warnings.simplefilter("ignore", numba.NumbaWarning)
        numba.set_num_threads(n)
    return n


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    solver = SolverConfig(
        lam=args.lam, omega=args.omega, epsilon=args.epsilon, mode=args.mode,
        max_iters=args.max_iters, rel_energy_tol=args.tol, levels=args.levels,
    )
    if args.grid < 2:
        raise ConfigurationError(f"--grid must be >= 2, got {args.grid}")
    if not 0 < args.mu < 1:
        raise ConfigurationError(f"--mu must lie in (0, 1), got {args.mu}")
    return RunConfig(
        input=args.input, output=args.output, solver=solver, grid=args.grid,
        padding_fraction=args.pad, mu=args.mu, viewdir=args.viewdir,
        viewdir_file=args.viewdir_file, log_path=args.log_path,
        report_path=args.report_path, threads=args.threads,
        no_rebinarize=args.no_rebinarize,
    )


def gen_sphere(argv: list[str]) -> int:
    args = build_gen_parser().parse_args(argv)
    spec = SyntheticCloudSpec(
        count=args.count, radius=args.radius, hole_cap_angle=math.radians(args.hole_cap_deg),
        density_skew=args.density_skew, noise_sigma=args.noise,
        orientation_error_deg=args.normal_error_deg, seed=args.seed,
    )
    cloud = generate_cloud(spec)
    ensure_parent(args.output)
    write_cloud(cloud, args.output)
    print(f"wrote {len(cloud)} samples to {args.output}")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if argv and argv[0] == "gen-sphere":
            return gen_sphere(argv[1:])
        args = parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        cfg = run_config_from_args(args)
        threads = set_threads(cfg.threads)
        log.info("threads=%d seed=%d", threads, args.seed)
        result = run_pipeline(cfg)
    except ConfigurationError as exc:
        print(f"recon: configuration error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, InputError) as exc:
        print(f"recon: {exc}", file=sys.stderr)
        return 1
    print(result.summary())
    return 0


if __name__ == "__main__":
    sys.exit(main())
