"""Error norms between runs, refinement bookkeeping, and record files.

A SolutionRecord holds the (T, E) snapshots of one run together with
the grid descriptors needed to decide whether two records are
comparable.  Records serialize to a text format with a ``# key = value``
header and one CSV block per output time, using 17-significant-digit
scientific notation so floats round-trip bitwise.
"""

from dataclasses import dataclass, field

import numpy as np

_FMT = "{:.16e}"


@dataclass
class SolutionRecord:
    """Snapshots of one run on a fixed phase-space grid."""

    n_cells: int
    n_angles: int
    n_groups: int
    dt: float
    scheme: str
    rank: int
    x: np.ndarray
    times: list
    T: list
    E: list
    meta: dict = field(default_factory=dict)

    def grid_signature(self):
        return (self.n_cells, self.n_angles, self.n_groups, round(self.dt, 15))


def record_from_run(result, problem, config, grid) -> SolutionRecord:
    """Build a record from a timestepper RunResult."""
    return SolutionRecord(
        n_cells=problem.mesh.n_cells,
        n_angles=problem.quad.n_angles,
        n_groups=problem.groups.n_groups,
        dt=grid.dt,
        scheme=config.scheme,
        rank=config.rank,
        x=problem.mesh.centers.copy(),
        times=list(result.times),
        T=[np.array(v) for v in result.T],
        E=[np.array(v) for v in result.E],
        meta={"storage_elements": result.storage_elements},
    )


def save_record(path, rec: SolutionRecord) -> None:
    with open(path, "w") as fh:
        fh.write("# mlqd solution record v1\n")
        fh.write(f"# cells = {rec.n_cells}\n")
        fh.write(f"# angles = {rec.n_angles}\n")
        fh.write(f"# groups = {rec.n_groups}\n")
        fh.write(f"# dt = {_FMT.format(rec.dt)}\n")
        fh.write(f"# scheme = {rec.scheme}\n")
        fh.write(f"# rank = {rec.rank}\n")
        for key in sorted(rec.meta):
            fh.write(f"# meta.{key} = {rec.meta[key]}\n")
        fh.write(f"# snapshots = {len(rec.times)}\n")
        for t, T, E in zip(rec.times, rec.T, rec.E):
            fh.write(f"# time = {_FMT.format(t)}\n")
            fh.write("j,x,T,E\n")
            for j in range(rec.n_cells):
                fh.write(
                    f"{j},{_FMT.format(rec.x[j])},{_FMT.format(T[j])},{_FMT.format(E[j])}\n"
                )


def load_record(path) -> SolutionRecord:
    head = {}
    meta = {}
    times, Ts, Es = [], [], []
    x = None
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("# time = "):
            times.append(float(line[len("# time = "):]))
            i += 2  # skip the column header
            xs, ts, es = [], [], []
            while i < len(lines) and lines[i] and not lines[i].startswith("#"):
                _, xv, tv, ev = lines[i].split(",")
                xs.append(float(xv))
                ts.append(float(tv))
                es.append(float(ev))
                i += 1
            x = np.array(xs)
            Ts.append(np.array(ts))
            Es.append(np.array(es))
            continue
        if line.startswith("# meta."):
            key, _, val = line[len("# meta."):].partition(" = ")
            try:
                meta[key] = int(val)
            except ValueError:
                meta[key] = val
        elif line.startswith("# ") and " = " in line:
            key, _, val = line[2:].partition(" = ")
            head[key] = val
        i += 1
    return SolutionRecord(
        n_cells=int(head["cells"]),
        n_angles=int(head["angles"]),
        n_groups=int(head["groups"]),
        dt=float(head["dt"]),
        scheme=head["scheme"],
        rank=int(head["rank"]),
        x=x,
        times=times,
        T=Ts,
        E=Es,
        meta=meta,
    )


def rel_inf_error(a: np.ndarray, b: np.ndarray) -> float:
    """max_j |a_j - b_j| / max_j |b_j| against the reference b."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    norm = float(np.max(np.abs(b)))
    if norm == 0.0:
        raise ValueError("zero reference norm")
    return float(np.max(np.abs(a - b)) / norm)


def record_errors(rec: SolutionRecord, ref: SolutionRecord):
    """Per-snapshot (err_T, err_E) of a run against its reference.

    The records must live on the identical phase-space and time grid.
    """
    if rec.grid_signature() != ref.grid_signature():
        raise ValueError("records are on different grids")
    if len(rec.times) != len(ref.times) or any(
        abs(t1 - t2) > 1e-9 for t1, t2 in zip(rec.times, ref.times)
    ):
        raise ValueError("records have different output times")
    err_T = [rel_inf_error(a, b) for a, b in zip(rec.T, ref.T)]
    err_E = [rel_inf_error(a, b) for a, b in zip(rec.E, ref.E)]
    return err_T, err_E


def error_ratio(num_errors, den_errors):
    """Elementwise ratio of two error curves (typically remainder-POD
    over intensity-POD at matching ranks).

    Zero-over-zero reports 1.0; a zero denominator with a nonzero
    numerator reports inf.  Both cases are flagged.
    """
    num = np.asarray(num_errors, float)
    den = np.asarray(den_errors, float)
    if num.shape != den.shape:
        raise ValueError("mismatched error vectors")
    flagged = den == 0.0
    out = np.empty_like(num)
    ok = ~flagged
    out[ok] = num[ok] / den[ok]
    both_zero = flagged & (num == 0.0)
    out[both_zero] = 1.0
    out[flagged & (num != 0.0)] = np.inf
    return out, flagged


@dataclass
class RefinementTable:
    """Errors against same-grid references across a refinement family.

    ``errors[i][k]`` is the error of grid i at output time k; ``ratios``
    holds successive-refinement factors errors[i]/errors[i+1].
    """

    label: str
    values: list
    times: list
    errors: np.ndarray
    ratios: np.ndarray

    def to_csv(self) -> str:
        cols = ",".join(f"err_t{t:g}" for t in self.times)
        rcols = ",".join(f"ratio_t{t:g}" for t in self.times)
        out = [f"# times = {' '.join(_FMT.format(t) for t in self.times)}"]
        out.append(f"{self.label},{cols},{rcols}")
        for i, v in enumerate(self.values):
            err = ",".join(_FMT.format(e) for e in self.errors[i])
            if i + 1 < len(self.values):
                rat = ",".join(_FMT.format(r) for r in self.ratios[i])
            else:
                rat = ",".join("" for _ in self.times)
            out.append(f"{_FMT.format(v)},{err},{rat}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "RefinementTable":
        lines = [ln for ln in text.splitlines() if ln]
        times = [float(tok) for tok in lines[0][len("# times = "):].split()]
        label = lines[1].split(",")[0]
        n_t = len(times)
        values, errors, ratios = [], [], []
        for ln in lines[2:]:
            cells = ln.split(",")
            values.append(float(cells[0]))
            errors.append([float(v) for v in cells[1 : 1 + n_t]])
            tail = cells[1 + n_t :]
            if any(tail):
                ratios.append([float(v) for v in tail])
        return cls(
            label=label,
            values=values,
            times=times,
            errors=np.array(errors),
            ratios=np.array(ratios),
        )


def refinement_table(label, values, pairs, times) -> RefinementTable:
    """Error table across grids refined in ``label`` (dx or dt).

    ``pairs`` is a list of (record, same-grid reference record), one per
    refinement value, each containing snapshots at ``times``.  Ratios
    between successive grids show how the compression error saturates.
    """
    if len(values) != len(pairs):
        raise ValueError("one (run, reference) pair per refinement value")
    errors = np.empty((len(pairs), len(times)))
    for i, (rec, ref) in enumerate(pairs):
        if rec.grid_signature() != ref.grid_signature():
            raise ValueError(f"pair {i} mixes grids")
        _, err_E = record_errors(rec, ref)
        idx = [next(k for k, t in enumerate(rec.times) if abs(t - t_out) <= 1e-9) for t_out in times]
        errors[i] = [err_E[k] for k in idx]
    ratios = errors[:-1] / errors[1:]
    return RefinementTable(
        label=label, values=list(values), times=list(times), errors=errors, ratios=ratios
    )
