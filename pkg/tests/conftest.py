"""Shared fixtures: small problems and the expensive benchmark runs."""

import numpy as np
import pytest

from mlqd.constants import PhysicalConstants
from mlqd.grids import TimeGrid, build_double_gauss, SpatialMesh
from mlqd.spectral import GroupStructure, group_emission
from mlqd.timestepper import Problem, SchemeConfig, fleck_cummings, run
from mlqd.transport import BoundaryCondition


def make_equilibrium_problem(T0=0.5, n_cells=10, n_groups=3, order=4):
    """Uniform slab in radiative equilibrium: black-body inflow at the
    material temperature on both sides."""
    edges = np.concatenate(([0.0], np.geomspace(0.5, 4.0, n_groups - 1), [np.inf]))
    groups = GroupStructure(edges)
    quad = build_double_gauss(order)
    const = PhysicalConstants()
    B = group_emission(T0, groups, const)
    inflow = np.broadcast_to(B[:, None], (groups.n_groups, quad.n_angles)).copy()
    return Problem(
        mesh=SpatialMesh.uniform(2.0, n_cells),
        quad=quad,
        groups=groups,
        bc=BoundaryCondition(left=inflow, right=inflow.copy()),
        cv=0.01,
        T_initial=T0,
        const=const,
    )


def small_fc_problem(n_cells=20, order=2, n_groups=5):
    """Reduced benchmark slab for fast solver tests."""
    edges = np.concatenate(([0.0], np.geomspace(0.7075, 20.0, n_groups - 1), [np.inf]))
    return fleck_cummings(n_cells=n_cells, order_per_half=order, groups=GroupStructure(edges))


@pytest.fixture(scope="session")
def fc_problem():
    """The full benchmark problem grid."""
    return fleck_cummings()


@pytest.fixture(scope="session")
def fc_reference(fc_problem):
    """Full-horizon uncompressed benchmark run, every step recorded."""
    grid = TimeGrid(t_end=6.0, dt=0.02)
    return run(fc_problem, grid, SchemeConfig(scheme="full"), record_all=True)
