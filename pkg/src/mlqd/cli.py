"""Command-line driver: config parsing, runs, comparisons, tables.

Subcommands:
  run         advance one configured problem, write a solution record
  compare     error curves between two recorded runs
  memtable    previous-step storage counts and reduction percentages
  sweep-ranks run every rank of both compressed schemes plus the full
              reference, writing the error-vs-rank dataset

Exit codes: 0 success, 1 usage/configuration error, 2 numerical failure.
Set MLQD_VERBOSE=1 for per-step progress on stderr.
"""

import argparse
import concurrent.futures
import configparser
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import compression, metrics
from .constants import PhysicalConstants
from .grids import TimeGrid
from .loqd import LowOrderSolveError
from .spectral import GroupStructure, default_edges
from .timestepper import ConvergenceError, Problem, SchemeConfig, fleck_cummings, run


class ConfigError(ValueError):
    """Configuration file or argument problem (exit code 1)."""


_KNOWN_KEYS = {
    "problem": {
        "width",
        "t_left",
        "t_initial",
        "cv_coefficient",
        "left_boundary",
        "right_boundary",
    },
    "grid": {"cells", "dx", "order_per_half", "groups", "edges"},
    "time": {"t_end", "dt"},
    "scheme": {"scheme", "rank", "eps_t", "eps_e", "max_outer", "max_inner"},
    "output": {"times", "directory"},
}

_SCHEME_NAMES = {"be": "full", "full": "full", "pod-i": "pod-i", "pod-rt": "pod-rt"}


@dataclass
class RunConfig:
    """Validated run setup assembled from a config file."""

    width: float = 6.0
    t_left: float = 1.0
    t_initial: float = 0.001
    cv_coefficient: float = 0.5917
    left_boundary: str = "blackbody"
    right_boundary: str = "vacuum"
    cells: int = 100
    order_per_half: int = 4
    groups: int = 17
    edges: np.ndarray = None
    t_end: float = 6.0
    dt: float = 0.02
    scheme: str = "full"
    rank: int = 0
    eps_t: float = 1e-12
    eps_e: float = 1e-12
    max_outer: int = 100
    max_inner: int = 400
    output_times: list = field(default_factory=lambda: [0.4, 1.0, 6.0])
    directory: str = "out"

    def validate(self):
        for name in ("width", "t_left", "t_initial", "cv_coefficient", "t_end", "dt"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"field {name} must be positive")
        for name in ("cells", "order_per_half", "groups"):
            if getattr(self, name) < 1:
                raise ConfigError(f"field {name} must be at least 1")
        if self.left_boundary not in ("blackbody", "vacuum"):
            raise ConfigError("left_boundary must be 'blackbody' or 'vacuum'")
        if self.right_boundary != "vacuum":
            raise ConfigError("right_boundary must be 'vacuum'")
        if self.scheme not in _SCHEME_NAMES.values():
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        d = min(self.cells, 2 * self.order_per_half)
        if self.scheme != "full" and not 1 <= self.rank <= d:
            raise ConfigError(f"rank must lie in [1, d] with d = min(J, M) = {d}")
        if self.edges is not None and self.edges.size != self.groups + 1:
            raise ConfigError("edges must list groups + 1 boundaries")
        n_steps = self.t_end / self.dt
        if abs(n_steps - round(n_steps)) > 1e-9:
            raise ConfigError("t_end must be an integer multiple of dt")
        for t_out in self.output_times:
            k = t_out / self.dt
            if t_out <= 0 or t_out > self.t_end or abs(k - round(k)) > 1e-9:
                raise ConfigError(f"output time {t_out} does not align with the time grid")
        return self

    def build_problem(self) -> Problem:
        if self.edges is not None:
            groups = GroupStructure(self.edges)
        elif self.groups == 17:
            groups = GroupStructure()
        else:
            groups = GroupStructure(default_edges(n_interior=self.groups - 1))
        return fleck_cummings(
            width=self.width,
            n_cells=self.cells,
            order_per_half=self.order_per_half,
            groups=groups,
            T_left=self.t_left,
            T_initial=self.t_initial,
            cv_coefficient=self.cv_coefficient,
            const=PhysicalConstants(),
        )

    def scheme_config(self) -> SchemeConfig:
        return SchemeConfig(
            scheme=self.scheme,
            rank=self.rank,
            eps_T=self.eps_t,
            eps_E=self.eps_e,
            max_outer=self.max_outer,
            max_inner=self.max_inner,
        )

    def time_grid(self) -> TimeGrid:
        return TimeGrid(t_end=self.t_end, dt=self.dt)


def load_config(path) -> RunConfig:
    """Parse and validate a key = value config file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    cfg = RunConfig()
    seen_required = {"problem", "grid", "time"}
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                _apply_key(cfg, section, key, raw)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from exc
        seen_required.discard(section)
    if seen_required:
        raise ConfigError(
            "missing required sections: " + ", ".join(sorted(seen_required))
        )
    return cfg.validate()


def _apply_key(cfg: RunConfig, section: str, key: str, raw: str):
    raw = raw.strip()
    if section == "problem":
        if key in ("left_boundary", "right_boundary"):
            setattr(cfg, key, raw)
        else:
            setattr(cfg, key, float(raw))
    elif section == "grid":
        if key == "dx":
            dx = float(raw)
            cells = cfg.width / dx
            if abs(cells - round(cells)) > 1e-9:
                raise ConfigError("width must be an integer multiple of dx")
            cfg.cells = int(round(cells))
        elif key == "edges":
            cfg.edges = np.array([float(tok) for tok in raw.split()])
        else:
            setattr(cfg, key, int(raw))
    elif section == "time":
        setattr(cfg, key, float(raw))
    elif section == "scheme":
        if key == "scheme":
            try:
                cfg.scheme = _SCHEME_NAMES[raw]
            except KeyError:
                raise ConfigError(f"scheme must be one of be, pod-i, pod-rt; got {raw!r}")
        elif key == "rank":
            cfg.rank = int(raw)
        elif key in ("max_outer", "max_inner"):
            setattr(cfg, key, int(raw))
        else:
            setattr(cfg, key, float(raw))
    elif section == "output":
        if key == "times":
            cfg.output_times = [float(tok) for tok in raw.split()]
        else:
            cfg.directory = raw


def bundled_config_path() -> str:
    """Path of the packaged benchmark configuration."""
    return os.path.join(os.path.dirname(__file__), "data", "fc_test.cfg")


def _progress(step, total, diag):
    print(
        f"step {step}/{total}: outer={diag.outer_iterations} inner={diag.inner_iterations}",
        file=sys.stderr,
    )


def _verbose() -> bool:
    return os.environ.get("MLQD_VERBOSE", "") not in ("", "0")


def _write_diagnostics(path, result):
    with open(path, "w") as fh:
        fh.write("step,outer_iterations,inner_iterations\n")
        for i, (o, n) in enumerate(zip(result.outer_iterations, result.inner_iterations), 1):
            fh.write(f"{i},{o},{n}\n")
        fh.write(f"# storage_elements = {result.storage_elements}\n")
        fh.write(f"# wall_seconds = {result.wall_seconds:.3f}\n")


def cmd_run(config: RunConfig, out_dir, reference_path=None, record_all=False) -> int:
    problem = config.build_problem()
    grid = config.time_grid()
    result = run(
        problem,
        grid,
        config.scheme_config(),
        output_times=config.output_times,
        record_all=record_all,
        progress=_progress if _verbose() else None,
    )
    os.makedirs(out_dir, exist_ok=True)
    rec = metrics.record_from_run(result, problem, config.scheme_config(), grid)
    metrics.save_record(os.path.join(out_dir, "solution.txt"), rec)
    _write_diagnostics(os.path.join(out_dir, "diagnostics.csv"), result)

    if reference_path is not None:
        ref = metrics.load_record(reference_path)
        err_T, err_E = metrics.record_errors(rec, ref)
        with open(os.path.join(out_dir, "errors.csv"), "w") as fh:
            fh.write("time,err_T,err_E\n")
            for t, a, b in zip(rec.times, err_T, err_E):
                fh.write(f"{t:.10g},{a:.16e},{b:.16e}\n")
    return 0


def cmd_compare(path_a, path_b, out_path) -> int:
    rec = metrics.load_record(path_a)
    ref = metrics.load_record(path_b)
    err_T, err_E = metrics.record_errors(rec, ref)
    with open(out_path, "w") as fh:
        fh.write("time,err_T,err_E\n")
        for t, a, b in zip(rec.times, err_T, err_E):
            fh.write(f"{t:.10g},{a:.16e},{b:.16e}\n")
    return 0


def cmd_memtable(J, M, G, out_path=None) -> int:
    full = compression.storage_count("full", 0, J, M, G)
    lines = [f"# full previous-step storage D = {full} elements (J={J}, M={M}, G={G})"]
    lines.append("rank,pod_i_elements,pod_i_reduction_pct,pod_rt_elements,pod_rt_reduction_pct")
    for r in range(1, min(J, M)):
        ei = compression.storage_count("pod-i", r, J, M, G)
        er = compression.storage_count("pod-rt", r, J, M, G)
        pi = compression.reduction_percent("pod-i", r, J, M, G)
        pr = compression.reduction_percent("pod-rt", r, J, M, G)
        lines.append(f"{r},{ei},{pi:.1f},{er},{pr:.1f}")
    text = "\n".join(lines) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w") as fh:
            fh.write(text)
    return 0


def _one_rank_run(config: RunConfig, scheme, rank, out_dir):
    sub = RunConfig(**{**config.__dict__, "scheme": scheme, "rank": rank})
    sub.edges = config.edges
    sub.validate()
    sub_dir = os.path.join(out_dir, f"{scheme}_r{rank}" if rank else "be")
    cmd_run(sub, sub_dir, record_all=False)
    return sub_dir


def cmd_sweep_ranks(config: RunConfig, out_dir, threads=1) -> int:
    """Full reference plus every rank of both compressed variants."""
    os.makedirs(out_dir, exist_ok=True)
    d = min(config.cells, 2 * config.order_per_half)
    jobs = [("full", 0)] + [(s, r) for s in ("pod-i", "pod-rt") for r in range(1, d + 1)]
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_one_rank_run, config, s, r, out_dir) for s, r in jobs]
            for f in futures:
                f.result()
    else:
        for s, r in jobs:
            _one_rank_run(config, s, r, out_dir)

    ref = metrics.load_record(os.path.join(out_dir, "be", "solution.txt"))
    for scheme in ("pod-i", "pod-rt"):
        with open(os.path.join(out_dir, f"errors_{scheme}.csv"), "w") as fh:
            header = ",".join(
                f"err_T_t{t:g},err_E_t{t:g}" for t in config.output_times
            )
            fh.write(f"rank,{header}\n")
            for r in range(1, d + 1):
                rec = metrics.load_record(os.path.join(out_dir, f"{scheme}_r{r}", "solution.txt"))
                err_T, err_E = metrics.record_errors(rec, ref)
                row = ",".join(f"{a:.16e},{b:.16e}" for a, b in zip(err_T, err_E))
                fh.write(f"{r},{row}\n")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mlqd",
        description="1D multigroup thermal radiative transfer with reduced-memory implicit schemes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured problem")
    p_run.add_argument("--config", default=bundled_config_path())
    p_run.add_argument("--scheme", choices=("be", "pod-i", "pod-rt"))
    p_run.add_argument("--rank", type=int)
    p_run.add_argument("--out", default="out")
    p_run.add_argument("--reference", default=None)
    p_run.add_argument("--record-all", action="store_true", help="snapshot every step")

    p_cmp = sub.add_parser("compare", help="error curves between two solution records")
    p_cmp.add_argument("run_a")
    p_cmp.add_argument("run_b")
    p_cmp.add_argument("--out", default="compare.csv")

    p_mem = sub.add_parser("memtable", help="storage reduction table")
    p_mem.add_argument("--cells", type=int, default=100)
    p_mem.add_argument("--angles", type=int, default=8)
    p_mem.add_argument("--groups", type=int, default=17)
    p_mem.add_argument("--out", default=None)

    p_swp = sub.add_parser("sweep-ranks", help="run all ranks of both compressed schemes")
    p_swp.add_argument("--config", default=bundled_config_path())
    p_swp.add_argument("--out", default="sweep")
    p_swp.add_argument("--threads", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            if args.scheme is not None:
                config.scheme = _SCHEME_NAMES[args.scheme]
            if args.rank is not None:
                config.rank = args.rank
            config.validate()
            return cmd_run(config, args.out, args.reference, args.record_all)
        if args.command == "compare":
            return cmd_compare(args.run_a, args.run_b, args.out)
        if args.command == "memtable":
            return cmd_memtable(args.cells, args.angles, args.groups, args.out)
        if args.command == "sweep-ranks":
            config = load_config(args.config)
            return cmd_sweep_ranks(config, args.out, args.threads)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, LowOrderSolveError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
