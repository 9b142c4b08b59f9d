"""Step-characteristic sweep: weighting factor, fixed points, exactness
against closed-form single-cell solves, and moment extraction."""

import mpmath as mp
import numpy as np
import pytest

from mlqd.constants import PhysicalConstants
from mlqd.grids import SpatialMesh, build_double_gauss
from mlqd.transport import (
    BoundaryCondition,
    RadiationField,
    balance_residual,
    compute_moments,
    gamma_weight,
    sweep_all_groups,
    sweep_group,
)

CONST = PhysicalConstants()
QUAD = build_double_gauss(4)


def test_gamma_limits():
    assert gamma_weight(1e-9) == pytest.approx(0.5, abs=1e-9)
    # frozen extended-precision oracle for tau = 1
    assert gamma_weight(1.0) == pytest.approx(0.41802329313067357561, rel=1e-14)
    assert gamma_weight(50.0) == pytest.approx(0.02, abs=1e-20)
    assert gamma_weight(1e12) == pytest.approx(1e-12, rel=1e-12)


def test_gamma_series_switch_continuity():
    """The series branch matches the true value to better than 1e-15 at
    the switch point; the closed form itself carries ~2e-12 relative
    cancellation noise there, which bounds the raw branch jump."""
    mp.mp.dps = 40
    tau = 1e-4
    truth = float(1 / mp.mpf(tau) - 1 / mp.expm1(mp.mpf(tau)))
    series = 0.5 - tau / 12.0 + tau**3 / 720.0
    assert series == pytest.approx(truth, rel=1e-15)
    below = gamma_weight(tau * (1 - 1e-9))
    above = gamma_weight(tau * (1 + 1e-9))
    assert below == pytest.approx(above, rel=5e-12)


def test_gamma_matches_mpmath():
    mp.mp.dps = 40
    for tau in (1e-5, 1e-3, 0.1, 1.0, 5.0, 60.0):
        want = float(1 / mp.mpf(tau) - 1 / mp.expm1(mp.mpf(tau)))
        assert gamma_weight(tau) == pytest.approx(want, rel=1e-14)


def test_gamma_bounds_and_errors():
    rng = np.random.default_rng(3)
    tau = 10.0 ** rng.uniform(-8, 10, 200)
    g = gamma_weight(tau)
    assert np.all(g > 0.0) and np.all(g <= 0.5)
    with pytest.raises(ValueError):
        gamma_weight(0.0)
    with pytest.raises(ValueError):
        gamma_weight(-1.0)


def _uniform_bc(value, G, M):
    return BoundaryCondition(left=np.full((G, M), value), right=np.full((G, M), value))


def test_sweep_equilibrium_fixed_point():
    G, M, J = 3, 8, 12
    mesh = SpatialMesh.uniform(3.0, J)
    B = np.array([0.7, 2.0, 0.1])
    kappa = np.vstack([np.full(J, 4.0), np.full(J, 1.0), np.full(J, 0.05)])
    prev = np.broadcast_to(B[:, None, None], (G, M, J)).copy()
    bc = BoundaryCondition(left=np.broadcast_to(B[:, None], (G, M)).copy(),
                           right=np.broadcast_to(B[:, None], (G, M)).copy())
    field = sweep_all_groups(kappa, kappa * B[:, None], prev, 0.02, bc, QUAD, mesh, CONST)
    assert np.max(np.abs(field.avg - B[:, None, None])) <= 1e-12 * B.max()
    assert np.max(np.abs(field.edge - B[:, None, None])) <= 1e-12 * B.max()


def test_sweep_zero_is_zero():
    G, M, J = 2, 8, 5
    mesh = SpatialMesh.uniform(1.0, J)
    kappa = np.full((G, J), 2.0)
    field = sweep_all_groups(kappa, np.zeros((G, J)), np.zeros((G, M, J)), 0.1,
                             _uniform_bc(0.0, G, M), QUAD, mesh, CONST)
    assert np.all(field.avg == 0.0)
    assert np.all(field.edge == 0.0)


def test_single_cell_steady_against_closed_form():
    """Steady single-cell solve against an independent 2x2 linear solve
    of the balance + auxiliary equations, at kappa dx / mu = 1."""
    mesh = SpatialMesh.uniform(1.0, 1)
    M = QUAD.n_angles
    mu = QUAD.mu[QUAD.positive][0]
    kappa = np.array([[mu]])  # tau_a = kappa dx / mu = 1
    i_in = 2.0
    bc = BoundaryCondition(left=np.full((1, M), i_in), right=np.full((1, M), i_in))
    big_dt = 1e30
    field = sweep_all_groups(kappa, np.zeros((1, 1)), np.zeros((1, M, 1)), big_dt,
                             bc, QUAD, mesh, CONST)

    # independent oracle: solve the 2x2 system for (I_avg, I_out)
    tau = kappa[0, 0] * mesh.dx[0] / mu + mesh.dx[0] / (CONST.c * big_dt * mu)
    gam = 1.0 / tau - 1.0 / np.expm1(tau)
    A = np.array([
        [kappa[0, 0] * mesh.dx[0] + mesh.dx[0] / (CONST.c * big_dt), mu],  # balance
        [1.0, -(1.0 - gam)],  # auxiliary
    ])
    b = np.array([mu * i_in, gam * i_in])
    i_avg, i_out = np.linalg.solve(A, b)
    m = QUAD.positive.start
    assert field.edge[0, m, 1] == pytest.approx(i_out, rel=1e-13)
    assert field.avg[0, m, 0] == pytest.approx(i_avg, rel=1e-13)
    # step characteristics is exact for this configuration
    assert field.edge[0, m, 1] == pytest.approx(i_in * np.exp(-1.0), rel=1e-12)
    assert field.avg[0, m, 0] == pytest.approx(i_in * (1 - np.exp(-1.0)), rel=1e-12)


def test_balance_residual_random_problem():
    rng = np.random.default_rng(42)
    G, M, J = 4, 8, 30
    mesh = SpatialMesh(dx=rng.uniform(0.02, 0.2, J))
    kappa = rng.uniform(0.01, 50.0, (G, J))
    source = rng.uniform(0.0, 2.0, (G, J))
    prev = rng.uniform(0.0, 2.0, (G, M, J))
    bc = BoundaryCondition(left=rng.uniform(0.0, 2.0, (G, M)),
                           right=rng.uniform(0.0, 2.0, (G, M)))
    field = sweep_all_groups(kappa, source, prev, 0.05, bc, QUAD, mesh, CONST)
    resid = balance_residual(field, kappa, source, prev, 0.05, QUAD, mesh, CONST)
    assert resid <= 1e-12


def test_sweep_positivity():
    rng = np.random.default_rng(7)
    G, M, J = 3, 8, 25
    mesh = SpatialMesh.uniform(4.0, J)
    for _ in range(5):
        kappa = 10.0 ** rng.uniform(-3, 3, (G, J))
        source = rng.uniform(0.0, 1.0, (G, J))
        prev = rng.uniform(0.0, 1.0, (G, M, J))
        bc = BoundaryCondition(left=rng.uniform(0.0, 1.0, (G, M)),
                               right=rng.uniform(0.0, 1.0, (G, M)))
        field = sweep_all_groups(kappa, source, prev, 0.02, bc, QUAD, mesh, CONST)
        assert np.all(field.avg >= 0.0)
        assert np.all(field.edge >= 0.0)


def test_sweep_group_matches_full_sweep():
    rng = np.random.default_rng(9)
    G, M, J = 3, 8, 10
    mesh = SpatialMesh.uniform(2.0, J)
    kappa = rng.uniform(0.1, 5.0, (G, J))
    source = rng.uniform(0.0, 1.0, (G, J))
    prev = rng.uniform(0.0, 1.0, (G, M, J))
    bc = BoundaryCondition(left=rng.uniform(0.0, 1.0, (G, M)),
                           right=rng.uniform(0.0, 1.0, (G, M)))
    field = sweep_all_groups(kappa, source, prev, 0.1, bc, QUAD, mesh, CONST)
    for g in range(G):
        avg, edge = sweep_group(g, kappa[g], source[g], prev[g], 0.1, bc, QUAD, mesh, CONST)
        assert np.array_equal(avg, field.avg[g])
        assert np.array_equal(edge, field.edge[g])


def test_moments_isotropic():
    G, M, J = 1, QUAD.n_angles, 6
    field = RadiationField(avg=np.ones((G, M, J)), edge=np.ones((G, M, J + 1)))
    mom = compute_moments(field, QUAD)
    assert np.allclose(mom.phi, 2.0, atol=1e-14)
    assert np.allclose(mom.flux, 0.0, atol=1e-14)
    assert np.allclose(mom.eddington, 1.0 / 3.0, atol=1e-14)
    assert np.allclose(mom.eddington_edge, 1.0 / 3.0, atol=1e-14)


def test_moments_beam_on_largest_mu():
    G, M, J = 1, QUAD.n_angles, 3
    avg = np.zeros((G, M, J))
    avg[0, -1, :] = 5.0  # largest positive mu only
    field = RadiationField(avg=avg, edge=np.zeros((G, M, J + 1)))
    mom = compute_moments(field, QUAD)
    assert np.allclose(mom.eddington, QUAD.mu[-1] ** 2, atol=1e-14)


def test_moments_linear_in_mu():
    G, M, J = 1, QUAD.n_angles, 4
    shape = (1.0 + QUAD.mu)[None, :, None]
    field = RadiationField(avg=shape * np.ones((G, M, J)),
                           edge=shape * np.ones((G, M, J + 1)))
    mom = compute_moments(field, QUAD)
    assert np.allclose(mom.phi, 2.0, atol=1e-14)
    assert np.allclose(mom.flux, 2.0 / 3.0, atol=1e-14)
    assert np.allclose(mom.eddington, 1.0 / 3.0, atol=1e-14)


def test_eddington_bounds_random_fields():
    rng = np.random.default_rng(21)
    mu2 = QUAD.mu**2
    for _ in range(20):
        I = rng.uniform(0.0, 1.0, (2, QUAD.n_angles, 5))
        field = RadiationField(avg=I, edge=rng.uniform(0.0, 1.0, (2, QUAD.n_angles, 6)))
        mom = compute_moments(field, QUAD)
        assert np.all(mom.eddington >= mu2.min() - 1e-14)
        assert np.all(mom.eddington <= mu2.max() + 1e-14)


def test_moment_guard_on_zero_field():
    G, M, J = 1, QUAD.n_angles, 3
    field = RadiationField(avg=np.zeros((G, M, J)), edge=np.zeros((G, M, J + 1)))
    mom = compute_moments(field, QUAD)
    assert np.allclose(mom.eddington, 1.0 / 3.0)
    assert np.allclose(mom.c_left, 0.0)
    assert np.allclose(mom.c_right, 0.0)
    assert mom.guard_count > 0


def test_boundary_factor_split():
    """C factors close only the non-prescribed part of the edge flux."""
    G, M, J = 1, QUAD.n_angles, 4
    mesh = SpatialMesh.uniform(1.0, J)
    kappa = np.full((G, J), 1.0)
    bc = BoundaryCondition(left=np.full((G, M), 3.0), right=np.zeros((G, M)))
    field = sweep_all_groups(kappa, np.zeros((G, J)), np.zeros((G, M, J)), 1e20,
                             bc, QUAD, mesh, CONST)
    mom = compute_moments(field, QUAD)
    wmu = QUAD.w * QUAD.mu
    fin = float(field.edge[0, QUAD.positive, 0] @ wmu[QUAD.positive])
    assert mom.flux_in_left[0] == pytest.approx(fin, rel=1e-14)
    # closure identity: F_edge = F_in + C * phi_edge
    assert mom.flux_edge[0, 0] == pytest.approx(
        fin + mom.c_left[0] * mom.phi_edge[0, 0], rel=1e-12
    )
    # vacuum right edge reduces to the plain flux ratio
    assert mom.flux_in_right[0] == 0.0
    assert mom.c_right[0] == pytest.approx(mom.flux_edge[0, -1] / mom.phi_edge[0, -1], rel=1e-12)


def test_sweep_input_validation():
    mesh = SpatialMesh.uniform(1.0, 2)
    kappa = np.full((1, 2), np.nan)
    with pytest.raises(ValueError):
        sweep_all_groups(kappa, np.zeros((1, 2)), np.zeros((1, 8, 2)), 0.1,
                         _uniform_bc(0.0, 1, 8), QUAD, mesh, CONST)
    with pytest.raises(ValueError):
        sweep_all_groups(np.ones((1, 2)), np.zeros((1, 2)), np.zeros((1, 8, 2)), -0.1,
                         _uniform_bc(0.0, 1, 8), QUAD, mesh, CONST)
    with pytest.raises(ValueError):
        BoundaryCondition(left=np.full((1, 8), -1.0), right=np.zeros((1, 8)))
