"""Error norms, ratio curves, refinement tables and record files."""

import numpy as np
import pytest

from mlqd.grids import TimeGrid
from mlqd.metrics import (
    RefinementTable,
    SolutionRecord,
    error_ratio,
    load_record,
    record_errors,
    record_from_run,
    refinement_table,
    rel_inf_error,
    save_record,
)


def test_rel_inf_error_basics():
    b = np.array([1.0, 2.0, -3.0])
    assert rel_inf_error(b, b) == 0.0
    assert rel_inf_error(1.01 * b, b) == pytest.approx(0.01, rel=1e-12)
    with pytest.raises(ValueError):
        rel_inf_error(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        rel_inf_error(np.ones(3), np.zeros(3))


def test_rel_inf_error_scale_invariance():
    rng = np.random.default_rng(2)
    a = rng.normal(size=20)
    b = rng.normal(size=20) + 3.0
    base = rel_inf_error(a, b)
    for alpha in (1e-6, 0.5, 7.0, 1e8):
        assert rel_inf_error(alpha * a, alpha * b) == pytest.approx(base, rel=1e-12)


def test_error_ratio_guards():
    ratios, flagged = error_ratio([1.0, 2.0], [1.0, 2.0])
    assert np.allclose(ratios, 1.0)
    assert not flagged.any()
    ratios, flagged = error_ratio([0.0, 3.0], [0.0, 0.0])
    assert ratios[0] == 1.0 and np.isinf(ratios[1])
    assert flagged.all()
    with pytest.raises(ValueError):
        error_ratio([1.0], [1.0, 2.0])


def _toy_record(scale=1.0, n=6, times=(0.1, 0.2)):
    rng = np.random.default_rng(7)
    x = np.linspace(0.05, 0.55, n)
    return SolutionRecord(
        n_cells=n, n_angles=4, n_groups=2, dt=0.1, scheme="full", rank=0,
        x=x, times=list(times),
        T=[scale * (1 + rng.random(n)) for _ in times],
        E=[scale * (1 + rng.random(n)) for _ in times],
        meta={"storage_elements": 123},
    )


def test_record_round_trip_is_bitwise(tmp_path):
    rec = _toy_record(scale=np.pi)
    path = tmp_path / "rec.txt"
    save_record(path, rec)
    back = load_record(path)
    assert back.grid_signature() == rec.grid_signature()
    assert back.scheme == rec.scheme and back.rank == rec.rank
    assert back.times == rec.times
    assert np.array_equal(back.x, rec.x)
    for a, b in zip(back.T, rec.T):
        assert np.array_equal(a, b)
    for a, b in zip(back.E, rec.E):
        assert np.array_equal(a, b)
    assert back.meta["storage_elements"] == 123


def test_record_errors_grid_checks():
    a = _toy_record()
    b = _toy_record()
    err_T, err_E = record_errors(a, b)
    assert err_T == [0.0, 0.0] and err_E == [0.0, 0.0]
    c = _toy_record(n=5)
    with pytest.raises(ValueError):
        record_errors(a, c)


def test_record_from_run_round_trip(tmp_path):
    from conftest import make_equilibrium_problem
    from mlqd.timestepper import SchemeConfig, run

    prob = make_equilibrium_problem()
    grid = TimeGrid(t_end=0.04, dt=0.02)
    cfg = SchemeConfig(scheme="full")
    res = run(prob, grid, cfg, record_all=True)
    rec = record_from_run(res, prob, cfg, grid)
    path = tmp_path / "run.txt"
    save_record(path, rec)
    back = load_record(path)
    for a, b in zip(back.T, rec.T):
        assert np.array_equal(a, b)


def test_refinement_table_constant_errors():
    times = [0.1, 0.2]
    pairs = []
    for n in (4, 8):
        ref = _toy_record(n=n, times=times)
        rec = SolutionRecord(**{**ref.__dict__})
        rec.E = [e * 1.01 for e in ref.E]
        pairs.append((rec, ref))
    table = refinement_table("dx", [0.2, 0.1], pairs, times)
    assert np.allclose(table.errors, 0.01, rtol=1e-10)
    assert np.allclose(table.ratios, 1.0, rtol=1e-10)


def test_refinement_table_round_trip():
    table = RefinementTable(
        label="dx",
        values=[0.24, 0.12, 0.06],
        times=[0.4, 1.0],
        errors=np.array([[1e-3, 2e-3], [5e-4, 1.1e-3], [4e-4, 1e-3]]),
        ratios=np.array([[2.0, 1.818181], [1.25, 1.1]]),
    )
    back = RefinementTable.from_csv(table.to_csv())
    assert back.label == table.label
    assert back.values == table.values
    assert back.times == table.times
    assert np.array_equal(back.errors, table.errors)
    assert np.array_equal(back.ratios, table.ratios)


def test_refinement_table_missing_pair():
    with pytest.raises(ValueError):
        refinement_table("dx", [0.1, 0.2], [(_toy_record(), _toy_record())], [0.1])
