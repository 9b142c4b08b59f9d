"""Per-step multilevel iteration and the outer time loop.

Each time step runs a fixed-point loop: evaluate opacities and emission
at the latest temperature iterate, sweep the transport equation for all
groups, close and solve the multigroup moment system, average its
solution into grey coefficients, and solve the coupled grey/material
update.  On convergence the cell-average intensity is stored for the
next step either in full or compressed per group (low-rank SVD of the
intensity, or of its P2 remainder).
"""

import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import compression, loqd, spectral, transport
from .compression import VARIANT_FULL, VARIANT_POD_I, VARIANT_POD_RT
from .constants import PhysicalConstants
from .grids import AngularQuadrature, SpatialMesh, TimeGrid, build_double_gauss
from .loqd import GreyState, GroupMoments, MaterialState
from .spectral import GroupStructure
from .transport import BoundaryCondition

SCHEMES = (VARIANT_FULL, VARIANT_POD_I, VARIANT_POD_RT)


class ConvergenceError(RuntimeError):
    """Outer fixed-point iteration failed; carries the residual trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SchemeConfig:
    """Time-integration scheme selection and iteration controls.

    ``max_outer`` bounds the transport (sweep) iterations per step and
    ``max_inner`` the low-order multigroup/grey/material cycles nested
    inside each of them.
    """

    scheme: str = VARIANT_FULL
    rank: int = 0
    eps_T: float = 1e-12
    eps_E: float = 1e-12
    max_outer: int = 100
    max_inner: int = 400

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.eps_T <= 0.0 or self.eps_E <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.scheme != VARIANT_FULL and self.rank < 1:
            raise ValueError("compressed schemes need rank >= 1")


@dataclass(frozen=True)
class Problem:
    """Static description of a slab problem."""

    mesh: SpatialMesh
    quad: AngularQuadrature
    groups: GroupStructure
    bc: BoundaryCondition
    cv: float
    T_initial: float
    const: PhysicalConstants = PhysicalConstants()


def fleck_cummings(
    width: float = 6.0,
    n_cells: int = 100,
    order_per_half: int = 4,
    groups: GroupStructure = None,
    T_left: float = 1.0,
    T_initial: float = 0.001,
    cv_coefficient: float = 0.5917,
    const: PhysicalConstants = PhysicalConstants(),
) -> Problem:
    """The benchmark slab: black-body inflow on the left into a cold
    medium with the 27/(hnu)^3 opacity, vacuum on the right.

    cv = cv_coefficient * a * T_left^3 keeps the material heat capacity
    tied to the drive temperature.
    """
    groups = groups if groups is not None else GroupStructure()
    quad = build_double_gauss(order_per_half)
    mesh = SpatialMesh.uniform(width, n_cells)
    G, M = groups.n_groups, quad.n_angles
    left = np.zeros((G, M))
    left[:, :] = spectral.group_emission(T_left, groups, const)[:, np.newaxis]
    bc = BoundaryCondition(left=left, right=np.zeros((G, M)))
    cv = cv_coefficient * const.a_rad * T_left**3
    return Problem(
        mesh=mesh, quad=quad, groups=groups, bc=bc, cv=cv, T_initial=T_initial, const=const
    )


@dataclass
class SimulationState:
    """Everything carried from one time level to the next.

    The transient full radiation field never lives here: between steps
    only the (possibly compressed) intensity store, the low-order moment
    solutions, and the temperature remain.  ``prev_eddington`` is kept
    only for the P2-remainder scheme, which rebuilds its stored
    expansion with the QD factor persisted by the low-order system.
    """

    t: float
    step: int
    material: MaterialState
    group: GroupMoments
    grey: GreyState
    store: list
    prev_eddington: np.ndarray = None

    def persisted_element_count(self) -> int:
        """Floats persisted between steps under the storage accounting
        model: the intensity store, the multigroup moment solution
        (E_g, F_g per group) and its grey counterpart.  The temperature
        field is bookkept with the material model, outside this count.
        """
        G, J = self.group.E.shape
        n = sum(ci.element_count() for ci in self.store)
        n += G * (2 * J + 1)
        n += 2 * J + 1
        return n


@dataclass
class StepDiagnostics:
    outer_iterations: int
    inner_iterations: int
    convergence_trace: list
    moment_guards: int
    average_fallbacks: int


def _build_store(config, avg, moments, quad):
    """Compress the converged cell-average intensity (G, M, J)."""
    A = np.swapaxes(avg, 1, 2)  # (G, J, M)
    if config.scheme == VARIANT_FULL:
        return [compression.store_full(A[g]) for g in range(A.shape[0])]
    if config.scheme == VARIANT_POD_I:
        return compression.compress_full_intensity_stack(A, config.rank)
    return compression.compress_remainder_stack(
        A, moments.phi, moments.flux, moments.eddington, quad, config.rank
    )


def _reconstruct_prev(state: SimulationState, problem: Problem) -> np.ndarray:
    """Previous-step intensity (G, M, J) from the store."""
    out = []
    for g, ci in enumerate(state.store):
        if ci.variant == VARIANT_POD_RT:
            A = compression.reconstruct(ci, problem.quad, state.prev_eddington[g])
        else:
            A = compression.reconstruct(ci)
        out.append(A.T)
    return np.array(out)


def initial_state(problem: Problem, config: SchemeConfig) -> SimulationState:
    """Cold-start state: isotropic black-body intensity at T_initial."""
    G = problem.groups.n_groups
    M = problem.quad.n_angles
    J = problem.mesh.n_cells
    const = problem.const
    T0 = np.full(J, problem.T_initial)
    B0 = spectral.group_emission(T0, problem.groups, const)  # (G, J)

    avg = np.broadcast_to(B0[:, np.newaxis, :], (G, M, J)).copy()
    phi0 = 2.0 * B0
    flux0 = np.zeros((G, J))
    f0 = np.full((G, J), 1.0 / 3.0)

    class _InitMoments:
        phi = phi0
        flux = flux0
        eddington = f0

    store = _build_store(config, avg, _InitMoments, problem.quad)
    E0 = 2.0 * B0 / const.c
    group = GroupMoments(
        E=E0,
        F=np.zeros((G, J + 1)),
        E_left=E0[:, 0].copy(),
        E_right=E0[:, -1].copy(),
    )
    grey = GreyState(
        E=E0.sum(axis=0),
        F=np.zeros(J + 1),
        E_left=float(E0[:, 0].sum()),
        E_right=float(E0[:, -1].sum()),
    )
    prev_f = f0 if config.scheme == VARIANT_POD_RT else None
    return SimulationState(
        t=0.0,
        step=0,
        material=MaterialState(T=T0, cv=problem.cv),
        group=group,
        grey=grey,
        store=store,
        prev_eddington=prev_f,
    )


def _low_order_cycles(state, problem, dt, mom, T_start, E_start, tol, max_inner):
    """Iterate multigroup LOQD + grey/material updates to a fixed point.

    The transport closure ``mom`` stays frozen; opacities, emission and
    the grey averages are refreshed at each temperature iterate.  The
    temperature sequence is extrapolated by a secant (Anderson-style)
    mixing step, which collapses the geometric crawl caused by the
    strong temperature dependence of the absorption coefficients.  The
    fixed point itself is untouched by the mixing.

    Returns (T, E, group_moments, grey_state, cycles, fallbacks).
    """
    mesh, const = problem.mesh, problem.const
    T_prev = state.material.T
    cv = problem.cv
    T_k = T_start.copy()
    E_k = E_start.copy()
    r_prev = None
    gT_prev = None
    fallbacks = 0
    P_slope = None
    dT = 1.0

    for inner in range(1, max_inner + 1):
        kappa, B = spectral.group_tables(T_k, problem.groups, const)
        P_ref = loqd.grey_planck_emission(kappa, B, T_k, const)
        if P_slope is None or dT > 1e-3:
            # emission slope by finite differences; nearly constant in T
            # for this material, so reuse it once the iterate settles
            d_fd = np.maximum(1e-6 * T_k, 1e-14)
            kappa2, B2 = spectral.group_tables(T_k + d_fd, problem.groups, const)
            P_slope = (loqd.grey_planck_emission(kappa2, B2, T_k + d_fd, const) - P_ref) / d_fd

        gm = loqd.solve_all_groups(mom, state.group, 2.0 * kappa * B, kappa, dt, mesh, const)
        co = loqd.grey_average(gm, kappa, B, mom, mesh, const)
        fallbacks += co.fallbacks
        E, F, e_l, e_r, gT = loqd.grey_meb_step(
            co, P_ref, P_slope, T_k, state.grey.E, state.grey.F, T_prev, cv, dt, mesh, const
        )
        grey = loqd.GreyState(E=E, F=F, E_left=e_l, E_right=e_r)

        r = gT - T_k
        dT = float(np.max(np.abs(r)) / np.max(np.abs(gT)))
        dE = float(np.max(np.abs(E - E_k)) / np.max(np.abs(E)))
        E_k = E
        if dT < tol and dE < tol:
            return gT, E_k, gm, grey, inner, fallbacks

        if r_prev is None:
            T_next = gT
        else:
            dr = r - r_prev
            nrm = float(dr @ dr)
            theta = float(r @ dr) / nrm if nrm > 0.0 else 0.0
            theta = min(max(theta, -50.0), 0.5)
            T_next = gT - theta * (gT - gT_prev)
            T_next = np.clip(T_next, 0.2 * gT, 5.0 * gT)
        r_prev = r
        gT_prev = gT
        T_k = T_next

    raise ConvergenceError(
        f"low-order cycles exceeded {max_inner} (last dT = {dT:.3e})", [(dT, dE)]
    )


def advance_step(
    state: SimulationState, dt: float, problem: Problem, config: SchemeConfig
):
    """Advance one time step; returns (new_state, StepDiagnostics)."""
    mesh, quad, const = problem.mesh, problem.quad, problem.const
    prev_I = _reconstruct_prev(state, problem)
    T_prev = state.material.T

    T_it = T_prev.copy()
    E_it = state.grey.E.copy()
    trace = []
    inner_total = 0
    guards = 0
    fallbacks = 0
    eps_floor = 0.1 * min(config.eps_T, config.eps_E)
    last_dT = 1.0

    converged = False
    for outer in range(1, config.max_outer + 1):
        kappa, B = spectral.group_tables(T_it, problem.groups, const)
        source = kappa * B
        fld = transport.sweep_all_groups(
            kappa, source, prev_I, dt, problem.bc, quad, mesh, const
        )
        mom = transport.compute_moments(fld, quad)
        guards += mom.guard_count

        inner_tol = max(eps_floor, 0.05 * last_dT)
        T_new, E_new, gm, grey, cycles, fb = _low_order_cycles(
            state, problem, dt, mom, T_it, E_it, inner_tol, config.max_inner
        )
        inner_total += cycles
        fallbacks += fb

        dT = float(np.max(np.abs(T_new - T_it)) / np.max(np.abs(T_new)))
        dE = float(np.max(np.abs(E_new - E_it)) / np.max(np.abs(E_new)))
        trace.append((dT, dE))
        T_it = T_new
        E_it = E_new
        last_dT = max(dT, dE)
        if dT < config.eps_T and dE < config.eps_E:
            converged = True
            break

    if not converged:
        raise ConvergenceError(
            f"step {state.step + 1}: outer iteration exceeded "
            f"{config.max_outer} cycles (last dT,dE = {trace[-1]})",
            trace,
        )

    mat = MaterialState(T=T_it, cv=problem.cv)
    store = _build_store(config, fld.avg, mom, quad)
    new_state = SimulationState(
        t=state.t + dt,
        step=state.step + 1,
        material=mat,
        group=gm,
        grey=grey,
        store=store,
        prev_eddington=mom.eddington.copy() if config.scheme == VARIANT_POD_RT else None,
    )
    diag = StepDiagnostics(
        outer_iterations=outer,
        inner_iterations=inner_total,
        convergence_trace=trace,
        moment_guards=guards,
        average_fallbacks=fallbacks,
    )
    return new_state, diag


@dataclass
class RunResult:
    """Recorded solution snapshots plus per-step diagnostics."""

    times: list
    T: list
    E: list
    outer_iterations: list
    inner_iterations: list
    storage_elements: int
    wall_seconds: float
    final_state: SimulationState = field(repr=False, default=None)


def run(
    problem: Problem,
    grid: TimeGrid,
    config: SchemeConfig,
    output_times=None,
    record_all: bool = False,
    progress=None,
) -> RunResult:
    """March the multilevel solver over the time grid.

    Snapshots of (T, E) are taken at ``output_times`` (which must align
    with time levels), at every step if ``record_all``, or only at the
    final time by default.  Zero steps echoes the initial state.
    """
    d = min(problem.mesh.n_cells, problem.quad.n_angles)
    if config.scheme != VARIANT_FULL and config.rank > d:
        raise ValueError(f"rank {config.rank} exceeds d = min(J, M) = {d}")

    times = grid.times()
    if output_times is not None:
        requested = list(output_times)
        for t_out in requested:
            if not np.any(np.abs(times - t_out) <= 1e-9 * max(1.0, abs(t_out))):
                raise ValueError(f"output time {t_out} does not align with the time grid")
    else:
        requested = []

    def want(t):
        if record_all:
            return True
        if output_times is None:
            return t == times[-1]
        return any(abs(t - t_out) <= 1e-9 * max(1.0, abs(t_out)) for t_out in requested)

    started = _time.perf_counter()
    state = initial_state(problem, config)
    out_t, out_T, out_E = [], [], []
    outer_hist, inner_hist = [], []
    if want(state.t) or grid.n_steps == 0:
        out_t.append(state.t)
        out_T.append(state.material.T.copy())
        out_E.append(state.grey.E.copy())

    for n in range(grid.n_steps):
        state, diag = advance_step(state, grid.dt, problem, config)
        outer_hist.append(diag.outer_iterations)
        inner_hist.append(diag.inner_iterations)
        if want(state.t):
            out_t.append(state.t)
            out_T.append(state.material.T.copy())
            out_E.append(state.grey.E.copy())
        if progress is not None:
            progress(n + 1, grid.n_steps, diag)

    return RunResult(
        times=out_t,
        T=out_T,
        E=out_E,
        outer_iterations=outer_hist,
        inner_iterations=inner_hist,
        storage_elements=state.persisted_element_count(),
        wall_seconds=_time.perf_counter() - started,
        final_state=state,
    )
