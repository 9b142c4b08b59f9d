"""Previous-step intensity storage: full, low-rank SVD, or P2 + remainder.

Each group's cell-average intensity is a J x M matrix (columns are
directions).  The reduced SVD is computed through the Gram matrix of the
small side (M = 8 in the benchmark), diagonalized by cyclic Jacobi
rotations; the left vectors follow from u = A v / ||A v||, which keeps
the full-rank reconstruction A V V^T exact to roundoff.

Storage accounting (element counts of the data persisted between steps):

    full          G (J M + 2J + 1) + 2J + 1
    rank-r SVD    G (r (J+M+1) + 2J + 1) + 2J + 1
    P2 remainder  G (r (J+M+1) + 2J + 2J + 1) + 2J + 1

where 2J+1 per group is the low-order moment solution (J cell energies,
J+1 edge fluxes) and the trailing 2J+1 is its grey counterpart.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .grids import AngularQuadrature

VARIANT_FULL = "full"
VARIANT_POD_I = "pod-i"
VARIANT_POD_RT = "pod-rt"

# Left singular vectors with singular value below this fraction of the
# largest are re-orthogonalized against the preceding columns.
_REORTH_FRACTION = 1e-10


def _jacobi_eigh_stack(S: np.ndarray, sweeps: int = 30):
    """Cyclic Jacobi diagonalization of a stack of symmetric matrices.

    ``S`` has shape (..., n, n); every matrix follows the same rotation
    schedule, with the rotation angles computed elementwise over the
    stack, so the whole batch vectorizes.  Returns (eigenvalues,
    eigenvectors) sorted descending per matrix.  Convergence is
    quadratic; the stop threshold sits at the roundoff floor of the
    off-diagonal norm.
    """
    a = np.array(S, dtype=float)
    n = a.shape[-1]
    lead = a.shape[:-2]
    v = np.broadcast_to(np.eye(n), lead + (n, n)).copy()
    if n == 1:
        return a[..., 0, :].copy(), v
    scale = np.max(np.abs(a))
    if scale == 0.0:
        return np.zeros(lead + (n,)), v
    for _ in range(sweeps):
        lower = np.tril(a, -1)
        if np.sqrt(np.sum(lower * lower)) <= 1e-15 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[..., p, q]
                active = np.abs(apq) > 1e-300
                safe = np.where(active, apq, 1.0)
                theta = 0.5 * (a[..., q, q] - a[..., p, p]) / safe
                t = np.where(
                    theta == 0.0,
                    1.0,
                    np.sign(theta) / (np.abs(theta) + np.hypot(1.0, theta)),
                )
                c = np.where(active, 1.0 / np.hypot(1.0, t), 1.0)
                s = np.where(active, t * c, 0.0)
                c = c[..., np.newaxis]
                s = s[..., np.newaxis]
                rp = a[..., p, :].copy()
                rq = a[..., q, :].copy()
                a[..., p, :] = c * rp - s * rq
                a[..., q, :] = s * rp + c * rq
                cp = a[..., :, p].copy()
                cq = a[..., :, q].copy()
                a[..., :, p] = c * cp - s * cq
                a[..., :, q] = s * cp + c * cq
                vp = v[..., :, p].copy()
                vq = v[..., :, q].copy()
                v[..., :, p] = c * vp - s * vq
                v[..., :, q] = s * vp + c * vq
    eigvals = np.diagonal(a, axis1=-2, axis2=-1).copy()
    order = np.argsort(eigvals, axis=-1)[..., ::-1]
    eigvals = np.take_along_axis(eigvals, order, axis=-1)
    v = np.take_along_axis(v, order[..., np.newaxis, :], axis=-1)
    return eigvals, v


def _jacobi_eigh(S: np.ndarray, sweeps: int = 60):
    """Single-matrix convenience wrapper around the stacked Jacobi."""
    eigvals, v = _jacobi_eigh_stack(S[np.newaxis], sweeps)
    return eigvals[0], v[0]


def _orthonormal_fill(U: np.ndarray, col: int, seed_vec=None) -> np.ndarray:
    """A unit vector orthogonal to the first ``col`` columns of U."""
    n = U.shape[0]
    candidates = [seed_vec] if seed_vec is not None else []
    candidates += [np.eye(n)[:, i] for i in range(n)]
    for cand in candidates:
        u = np.array(cand, dtype=float)
        for i in range(col):
            u -= (U[:, i] @ u) * U[:, i]
        nrm = np.linalg.norm(u)
        if nrm > 1e-8:
            return u / nrm
    raise RuntimeError("failed to complete orthonormal basis")


def svd_reduced(A: np.ndarray):
    """Reduced SVD A = U diag(lam) V^T with d = min(J, M) columns.

    Singular values are nonnegative descending; the sign convention
    makes the first nonzero component of each right vector positive so
    serialized snapshots are reproducible.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("expected a matrix")
    U, lam, V = svd_reduced_stack(A[np.newaxis])
    return U[0], lam[0], V[0]


def svd_reduced_stack(A: np.ndarray):
    """Reduced SVDs of a stack of same-shaped matrices, (..., J, M).

    The Gram matrices of the small side are diagonalized together by
    the stacked Jacobi sweep; the left factors follow from the products
    with the right vectors, which keeps full-rank reconstructions exact
    to roundoff.  Same conventions as :func:`svd_reduced`.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim < 2:
        raise ValueError("expected matrices")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    J, M = A.shape[-2:]
    transposed = J < M
    B = np.swapaxes(A, -1, -2) if transposed else A  # tall: rows >= cols
    d = B.shape[-1]

    gram = np.einsum("...jm,...jn->...mn", B, B)
    _, V = _jacobi_eigh_stack(gram)

    prod = np.einsum("...jm,...mk->...jk", B, V)
    lam = np.sqrt(np.einsum("...jk,...jk->...k", prod, prod))
    # Jacobi returns eigenvalue order of the Gram matrix; the recomputed
    # norms can swap near-degenerate pairs, so re-sort on them.
    order = np.argsort(lam, axis=-1)[..., ::-1]
    lam = np.take_along_axis(lam, order, axis=-1)
    V = np.take_along_axis(V, order[..., np.newaxis, :], axis=-1)
    prod = np.take_along_axis(prod, order[..., np.newaxis, :], axis=-1)

    safe = np.where(lam > 0.0, lam, 1.0)
    U = prod / safe[..., np.newaxis, :]

    # columns with tiny or vanishing singular values need cleanup
    lam_max = lam[..., :1]
    weak = (lam == 0.0) | (lam < _REORTH_FRACTION * lam_max)
    if np.any(weak):
        flat_U = U.reshape((-1,) + U.shape[-2:])
        flat_lam = lam.reshape((-1, d))
        flat_weak = weak.reshape((-1, d))
        for g in np.nonzero(flat_weak.any(axis=-1))[0]:
            Ug = flat_U[g]
            for k in np.nonzero(flat_weak[g])[0]:
                if flat_lam[g, k] > 0.0:
                    u = Ug[:, k].copy()
                    for i in range(k):
                        u -= (Ug[:, i] @ u) * Ug[:, i]
                    nrm = np.linalg.norm(u)
                    Ug[:, k] = u / nrm if nrm > 1e-8 else _orthonormal_fill(Ug, k)
                else:
                    Ug[:, k] = _orthonormal_fill(Ug, k)
        U = flat_U.reshape(U.shape)

    if transposed:
        U, V = V, U

    # make the first nonzero component of each right vector positive
    nz = np.abs(V) > 0.0
    first = np.argmax(nz, axis=-2)
    lead = np.take_along_axis(V, first[..., np.newaxis, :], axis=-2)[..., 0, :]
    flip = np.where((lead < 0.0) & nz.any(axis=-2), -1.0, 1.0)
    V = V * flip[..., np.newaxis, :]
    U = U * flip[..., np.newaxis, :]
    return U, lam, V


@dataclass
class CompressedIntensity:
    """One group's stored previous-step intensity.

    variant 'full' keeps the J x M matrix; 'pod-i' keeps the leading r
    SVD triples of it; 'pod-rt' keeps the triples of the P2-expansion
    remainder together with the two moment vectors phi (J,) and
    flux (J,).  The Eddington factor needed to rebuild the P2 part is
    not stored here: reconstruction reuses the factor persisted by the
    low-order solver.
    """

    variant: str
    shape: tuple
    matrix: np.ndarray = None
    lam: np.ndarray = None
    left: np.ndarray = None
    right: np.ndarray = None
    phi: np.ndarray = None
    flux: np.ndarray = None

    def element_count(self) -> int:
        """Number of stored floats charged to this group's record."""
        J, M = self.shape
        if self.variant == VARIANT_FULL:
            return J * M
        r = self.lam.size
        n = r * (J + M + 1)
        if self.variant == VARIANT_POD_RT:
            n += 2 * J
        return n


def compress_full_intensity(A: np.ndarray, r: int) -> CompressedIntensity:
    """Rank-r SVD truncation of the intensity matrix itself."""
    A = np.asarray(A, dtype=float)
    d = min(A.shape)
    if not 1 <= r <= d:
        raise ValueError(f"rank must be in [1, {d}], got {r}")
    U, lam, V = svd_reduced(A)
    return CompressedIntensity(
        variant=VARIANT_POD_I,
        shape=A.shape,
        lam=lam[:r].copy(),
        left=U[:, :r].copy(),
        right=V[:, :r].copy(),
    )


def p2_expansion(phi: np.ndarray, flux: np.ndarray, eddington: np.ndarray, quad: AngularQuadrature) -> np.ndarray:
    """J x M matrix of the P2 angular form matching (phi, F, f phi).

    Evaluates 0.5 (phi + 3 mu F + (5/4)(3 mu^2 - 1)(3 f - 1) phi) at the
    quadrature nodes; its discrete moments reproduce the inputs exactly
    for double-Gauss sets of order >= 3 per half range.
    """
    phi = np.asarray(phi, float)[:, np.newaxis]
    flux = np.asarray(flux, float)[:, np.newaxis]
    f = np.asarray(eddington, float)[:, np.newaxis]
    mu = quad.mu[np.newaxis, :]
    return 0.5 * (phi + 3.0 * mu * flux + 1.25 * (3.0 * mu**2 - 1.0) * (3.0 * f - 1.0) * phi)


def compress_remainder(
    A: np.ndarray,
    phi: np.ndarray,
    flux: np.ndarray,
    eddington: np.ndarray,
    quad: AngularQuadrature,
    r: int,
) -> CompressedIntensity:
    """Rank-r SVD of the residual after removing the P2 expansion.

    r = 0 keeps the pure P2 representation (an extension beyond the
    tabulated storage variants, occasionally useful in experiments).
    """
    A = np.asarray(A, dtype=float)
    d = min(A.shape)
    if not 0 <= r <= d:
        raise ValueError(f"rank must be in [0, {d}], got {r}")
    delta = A - p2_expansion(phi, flux, eddington, quad)
    U, lam, V = svd_reduced(delta)
    return CompressedIntensity(
        variant=VARIANT_POD_RT,
        shape=A.shape,
        lam=lam[:r].copy(),
        left=U[:, :r].copy(),
        right=V[:, :r].copy(),
        phi=np.array(phi, dtype=float),
        flux=np.array(flux, dtype=float),
    )


def store_full(A: np.ndarray) -> CompressedIntensity:
    """Uncompressed storage of a group intensity matrix."""
    A = np.asarray(A, dtype=float)
    return CompressedIntensity(variant=VARIANT_FULL, shape=A.shape, matrix=A.copy())


def compress_full_intensity_stack(A: np.ndarray, r: int):
    """Per-group records of the rank-r SVD of a (G, J, M) stack.

    Identical algorithm to :func:`compress_full_intensity`, batched over
    groups so the per-step compression cost stays small.
    """
    A = np.asarray(A, dtype=float)
    d = min(A.shape[-2:])
    if not 1 <= r <= d:
        raise ValueError(f"rank must be in [1, {d}], got {r}")
    U, lam, V = svd_reduced_stack(A)
    return [
        CompressedIntensity(
            variant=VARIANT_POD_I,
            shape=A.shape[-2:],
            lam=lam[g, :r].copy(),
            left=U[g, :, :r].copy(),
            right=V[g, :, :r].copy(),
        )
        for g in range(A.shape[0])
    ]


def compress_remainder_stack(A, phi, flux, eddington, quad, r: int):
    """Per-group P2-remainder records of a (G, J, M) stack; moment
    arrays have shape (G, J)."""
    A = np.asarray(A, dtype=float)
    d = min(A.shape[-2:])
    if not 0 <= r <= d:
        raise ValueError(f"rank must be in [0, {d}], got {r}")
    G = A.shape[0]
    delta = np.stack([A[g] - p2_expansion(phi[g], flux[g], eddington[g], quad) for g in range(G)])
    U, lam, V = svd_reduced_stack(delta)
    return [
        CompressedIntensity(
            variant=VARIANT_POD_RT,
            shape=A.shape[-2:],
            lam=lam[g, :r].copy(),
            left=U[g, :, :r].copy(),
            right=V[g, :, :r].copy(),
            phi=np.array(phi[g], dtype=float),
            flux=np.array(flux[g], dtype=float),
        )
        for g in range(G)
    ]


def reconstruct(
    ci: CompressedIntensity,
    quad: AngularQuadrature = None,
    eddington: np.ndarray = None,
) -> np.ndarray:
    """Rebuild the J x M previous-step intensity from a stored record.

    The remainder variant needs the quadrature and the persisted
    Eddington factor used when the record was built.
    """
    if ci.variant == VARIANT_FULL:
        return ci.matrix.copy()
    low_rank = (ci.left * ci.lam[np.newaxis, :]) @ ci.right.T
    if ci.variant == VARIANT_POD_I:
        return low_rank
    if ci.variant == VARIANT_POD_RT:
        if quad is None or eddington is None:
            raise ValueError("remainder reconstruction needs quadrature and Eddington factor")
        return p2_expansion(ci.phi, ci.flux, eddington, quad) + low_rank
    raise ValueError(f"unknown variant {ci.variant!r}")


_SCHEME_ALIASES = {
    "be": VARIANT_FULL,
    "be-sc": VARIANT_FULL,
    VARIANT_FULL: VARIANT_FULL,
    VARIANT_POD_I: VARIANT_POD_I,
    "pod_i": VARIANT_POD_I,
    VARIANT_POD_RT: VARIANT_POD_RT,
    "pod_rt": VARIANT_POD_RT,
}


def storage_count(scheme: str, r: int, J: int, M: int, G: int) -> int:
    """Total persisted element count of a scheme between time steps."""
    if min(J, M, G) < 1:
        raise ValueError("dimensions must be positive")
    variant = _SCHEME_ALIASES.get(scheme)
    if variant is None:
        raise ValueError(f"unknown scheme {scheme!r}")
    low_order = 2 * J + 1
    if variant == VARIANT_FULL:
        per_group = J * M + low_order
    elif variant == VARIANT_POD_I:
        per_group = r * (J + M + 1) + low_order
    else:
        per_group = r * (J + M + 1) + 2 * J + low_order
    return G * per_group + low_order


def reduction_percent(scheme: str, r: int, J: int, M: int, G: int) -> float:
    """Percent storage reduction relative to full previous-step data."""
    full = storage_count(VARIANT_FULL, 0, J, M, G)
    return 100.0 * (1.0 - storage_count(scheme, r, J, M, G) / full)


# --- snapshot serialization -------------------------------------------------
#
# Binary layout (little-endian), documented field order:
#   magic b'MLQDSTORE1', uint32 group count, then per group:
#     uint8 variant tag (0 full, 1 pod-i, 2 pod-rt),
#     uint32 J, uint32 M, uint32 r,
#     full:   float64 matrix[J*M] (row major)
#     pod-i:  float64 lam[r], U[J*r], V[M*r] (row major)
#     pod-rt: float64 lam[r], U[J*r], V[M*r], phi[J], flux[J]

_MAGIC = b"MLQDSTORE1"
_TAGS = {VARIANT_FULL: 0, VARIANT_POD_I: 1, VARIANT_POD_RT: 2}
_TAG_NAMES = {v: k for k, v in _TAGS.items()}


def save_store(path, records) -> None:
    """Write per-group intensity records to a little-endian binary file."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(records)))
        for ci in records:
            J, M = ci.shape
            r = 0 if ci.variant == VARIANT_FULL else ci.lam.size
            fh.write(struct.pack("<BIII", _TAGS[ci.variant], J, M, r))
            if ci.variant == VARIANT_FULL:
                fh.write(ci.matrix.astype("<f8").tobytes())
            else:
                fh.write(ci.lam.astype("<f8").tobytes())
                fh.write(ci.left.astype("<f8").tobytes())
                fh.write(ci.right.astype("<f8").tobytes())
                if ci.variant == VARIANT_POD_RT:
                    fh.write(ci.phi.astype("<f8").tobytes())
                    fh.write(ci.flux.astype("<f8").tobytes())


def load_store(path):
    """Read records written by :func:`save_store`."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not an intensity store file")
        (count,) = struct.unpack("<I", fh.read(4))
        records = []
        for _ in range(count):
            tag, J, M, r = struct.unpack("<BIII", fh.read(13))
            variant = _TAG_NAMES[tag]

            def arr(n):
                return np.frombuffer(fh.read(8 * n), dtype="<f8").astype(float)

            if variant == VARIANT_FULL:
                records.append(
                    CompressedIntensity(variant, (J, M), matrix=arr(J * M).reshape(J, M))
                )
            else:
                lam = arr(r)
                left = arr(J * r).reshape(J, r)
                right = arr(M * r).reshape(M, r)
                phi = flux = None
                if variant == VARIANT_POD_RT:
                    phi = arr(J)
                    flux = arr(J)
                records.append(
                    CompressedIntensity(
                        variant, (J, M), lam=lam, left=left, right=right, phi=phi, flux=flux
                    )
                )
        return records
