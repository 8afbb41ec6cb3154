"""Metric tensor algebra: construction, decomposition, interpolation, intersection.

A metric tensor is a symmetric positive-definite 3x3 tensor whose unit ball
encodes the desired mesh edge length per direction; the spacing along a unit
vector ``u`` is ``(u^T M u)^(-1/2)``. Tensors are stored by their six
independent components ``[m11, m12, m13, m22, m23, m33]`` so symmetry holds
by construction; a metric field over ``n`` nodes is an ``(n, 6)`` array.

All operations are pure functions on immutable values and safe to call
concurrently. Every eigenvalue problem in this module goes through the same
cyclic Jacobi solver (:func:`eigh3`), including the matrix inverse square
roots and the simultaneous-reduction step of the pairwise intersection.

File format ``mfield 1``: line 1 ``mfield 1 <n_nodes>``, then per node one
line ``m11 m12 m13 m22 m23 m33`` at full precision.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "MetricError",
    "MetricFrame",
    "decompose_field",
    "decompose_metric",
    "eigh3",
    "frame_field_to_metric",
    "interpolate_in_tet",
    "interpolate_pair",
    "intersect_many",
    "intersect_pair",
    "mat_to_sym6",
    "metric_from_frame",
    "read_metric_field",
    "sym6_to_mat",
    "write_metric_field",
]

# Eigenvalues closer than this (relative to the largest) are treated as a
# degenerate group and get the axis-projection canonical basis.
DEGENERATE_GAP = 1e-8

_JACOBI_TOL = 1e-13
_MAX_SWEEPS = 50
_BARY_MIN = -1e-10


class MetricError(ValueError):
    """Invalid metric tensor or frame (non-SPD input, bad spacings, ...)."""


# -- symmetric storage ------------------------------------------------------------

_SYM6_ROWS = (0, 0, 0, 1, 1, 2)
_SYM6_COLS = (0, 1, 2, 1, 2, 2)


def sym6_to_mat(m) -> np.ndarray:
    """Expand ``(..., 6)`` component arrays to full ``(..., 3, 3)`` matrices."""
    m = np.asarray(m, dtype=float)
    out = np.empty(m.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(zip(_SYM6_ROWS, _SYM6_COLS)):
        out[..., i, j] = m[..., k]
        out[..., j, i] = m[..., k]
    return out


def mat_to_sym6(mat) -> np.ndarray:
    """Collapse ``(..., 3, 3)`` matrices to six components, symmetrising first."""
    mat = np.asarray(mat, dtype=float)
    out = np.empty(mat.shape[:-2] + (6,))
    for k, (i, j) in enumerate(zip(_SYM6_ROWS, _SYM6_COLS)):
        out[..., k] = 0.5 * (mat[..., i, j] + mat[..., j, i])
    return out


# -- eigensolver -------------------------------------------------------------------

def eigh3(mats):
    """Eigen-decomposition of symmetric 3x3 matrices by cyclic Jacobi sweeps.

    Accepts ``(3, 3)`` or ``(n, 3, 3)``; returns ``(eigvals, eigvecs)`` with
    eigenvalues ascending and eigenvectors in the columns of ``eigvecs``.
    Sweeps stop once every off-diagonal norm drops below 1e-13 of the
    matrix scale, which is robust for near-degenerate spectra.
    """
    A = np.asarray(mats, dtype=float)
    single = A.ndim == 2
    A = A.reshape(-1, 3, 3).copy()
    n = A.shape[0]
    V = np.tile(np.eye(3), (n, 1, 1))
    scale = np.sqrt(np.einsum("nij,nij->n", A, A))
    floor = np.maximum(scale, np.finfo(float).tiny)

    for _ in range(_MAX_SWEEPS):
        off = np.sqrt(A[:, 0, 1] ** 2 + A[:, 0, 2] ** 2 + A[:, 1, 2] ** 2)
        if np.all(off <= _JACOBI_TOL * floor):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = A[:, p, q]
            t = np.zeros(n)
            rot = np.abs(apq) > 0.0
            if rot.any():
                theta = (A[rot, q, q] - A[rot, p, p]) / (2.0 * apq[rot])
                big = np.abs(theta) > 1e150  # theta**2 would overflow
                safe = np.where(big, 0.0, theta)
                tr = np.copysign(1.0, theta) / (
                    np.abs(safe) + np.sqrt(safe * safe + 1.0)
                )
                tr[big] = 0.5 / theta[big]
                t[rot] = tr
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            r = 3 - p - q
            app = A[:, p, p].copy()
            aqq = A[:, q, q].copy()
            apr = A[:, p, r].copy()
            aqr = A[:, q, r].copy()
            A[:, p, p] = c * c * app - 2.0 * s * c * apq + s * s * aqq
            A[:, q, q] = s * s * app + 2.0 * s * c * apq + c * c * aqq
            A[:, p, q] = A[:, q, p] = 0.0
            A[:, p, r] = A[:, r, p] = c * apr - s * aqr
            A[:, q, r] = A[:, r, q] = s * apr + c * aqr
            vp = V[:, :, p].copy()
            vq = V[:, :, q].copy()
            V[:, :, p] = c[:, None] * vp - s[:, None] * vq
            V[:, :, q] = s[:, None] * vp + c[:, None] * vq
    else:
        raise ArithmeticError("Jacobi sweeps failed to converge on a symmetric 3x3")

    vals = np.stack([A[:, 0, 0], A[:, 1, 1], A[:, 2, 2]], axis=1)
    order = np.argsort(vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    if single:
        return vals[0], V[0]
    return vals, V


def _check_spd(vals, what="metric"):
    vmax = np.maximum(np.abs(vals).max(axis=-1), np.finfo(float).tiny)
    if np.any(vals[..., 0] <= 1e-14 * vmax):
        raise MetricError(f"{what} is not positive definite")


def _spectral_map(mats, fn):
    """Apply ``fn`` to the eigenvalues of SPD matrices, keeping eigenvectors."""
    vals, vecs = eigh3(mats)
    vals = np.atleast_2d(vals)
    vecs = vecs.reshape(-1, 3, 3)
    _check_spd(vals)
    out = np.einsum("nij,nj,nkj->nik", vecs, fn(vals), vecs)
    return out.reshape(np.asarray(mats).shape) if np.asarray(mats).ndim > 2 else out[0]


# -- frames ------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricFrame:
    """Orthonormal directions (columns of ``axes``) with per-direction spacings.

    Frames produced by :func:`decompose_metric` are canonical: spacings
    ascending, each of the first two axes flipped so its largest-magnitude
    component is positive, and the third axis forced to ``e1 x e2``.
    """

    axes: np.ndarray
    spacings: np.ndarray

    @property
    def e1(self):
        return self.axes[:, 0]

    @property
    def e2(self):
        return self.axes[:, 1]

    @property
    def e3(self):
        return self.axes[:, 2]


def metric_from_frame(frame: MetricFrame) -> np.ndarray:
    """Assemble the tensor ``R diag(1/d^2) R^T`` from a frame.

    The frame axes may carry arbitrary signs/handedness (sign flips leave the
    tensor unchanged) but must be orthonormal and the spacings positive.
    """
    R = np.asarray(frame.axes, dtype=float)
    d = np.asarray(frame.spacings, dtype=float)
    if R.shape != (3, 3) or d.shape != (3,):
        raise MetricError("frame needs (3,3) axes and 3 spacings")
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-8:
        raise MetricError("frame axes are not orthonormal")
    if not (d > 0.0).all():
        raise MetricError("spacings must be positive")
    return mat_to_sym6(np.einsum("ij,j,kj->ik", R, 1.0 / d**2, R))


def frame_field_to_metric(spacings: np.ndarray, axes: np.ndarray) -> np.ndarray:
    """Batched :func:`metric_from_frame` without per-node validation."""
    return mat_to_sym6(np.einsum("nij,nj,nkj->nik", axes, 1.0 / spacings**2, axes))


def _axis_projection_basis(vecs, lo, hi):
    """Replace eigenvector columns lo..hi by the in-subspace basis closest to
    the global axes under sequential projection."""
    sub = vecs[:, lo:hi]
    proj = sub @ sub.T
    basis = []
    for axis in np.eye(3):
        v = proj @ axis
        nrm = np.linalg.norm(v)
        if nrm > 1e-6:
            v = v / nrm
            basis.append(v)
            proj = proj - np.outer(v, v)
        if len(basis) == hi - lo:
            break
    vecs[:, lo:hi] = np.column_stack(basis)


def _canonical_frame(vals_desc, vecs):
    """Canonicalise eigenvectors (columns, matching descending eigenvalues)."""
    vmax = max(abs(vals_desc[0]), abs(vals_desc[2]), np.finfo(float).tiny)
    # group runs of near-equal eigenvalues
    start = 0
    for k in range(1, 4):
        if k == 3 or abs(vals_desc[k] - vals_desc[k - 1]) > DEGENERATE_GAP * vmax:
            if k - start > 1:
                _axis_projection_basis(vecs, start, k)
            start = k
    for j in (0, 1):
        col = vecs[:, j]
        if col[np.argmax(np.abs(col))] < 0.0:
            vecs[:, j] = -col
    vecs[:, 2] = np.cross(vecs[:, 0], vecs[:, 1])
    return vecs


def decompose_metric(m) -> MetricFrame:
    """Spectral decomposition of a metric into a canonical frame.

    Spacings are ``1/sqrt(eigenvalue)`` sorted ascending. Within groups of
    near-equal eigenvalues the eigenbasis is replaced by the deterministic
    axis-projection basis so repeated decompositions of isotropic regions
    agree; signs are fixed and right-handedness enforced.
    """
    vals, vecs = eigh3(sym6_to_mat(m))
    _check_spd(vals)
    vals_desc = vals[::-1]
    vecs = _canonical_frame(vals_desc, vecs[:, ::-1].copy())
    return MetricFrame(axes=vecs, spacings=1.0 / np.sqrt(vals_desc))


def decompose_field(field):
    """Batched :func:`decompose_metric`: returns ``(spacings (n,3), axes (n,3,3))``."""
    field = np.asarray(field, dtype=float).reshape(-1, 6)
    vals, vecs = eigh3(sym6_to_mat(field))
    _check_spd(vals)
    spac = np.empty((field.shape[0], 3))
    axes = np.empty((field.shape[0], 3, 3))
    for i in range(field.shape[0]):
        vals_desc = vals[i, ::-1]
        axes[i] = _canonical_frame(vals_desc, vecs[i, :, ::-1].copy())
        spac[i] = 1.0 / np.sqrt(vals_desc)
    return spac, axes


# -- interpolation -----------------------------------------------------------------

def interpolate_pair(m1, m2, t: float) -> np.ndarray:
    """Interpolate two metrics: ``((1-t) M1^(-1/2) + t M2^(-1/2))^(-2)``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation parameter {t} outside [0, 1]")
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    if t == 0.0:
        _check_spd(eigh3(sym6_to_mat(m1))[0])
        return m1.copy()
    if t == 1.0:
        _check_spd(eigh3(sym6_to_mat(m2))[0])
        return m2.copy()
    mix = (1.0 - t) * _inv_sqrt(m1) + t * _inv_sqrt(m2)
    return mat_to_sym6(_spectral_map(mix, lambda v: v**-2.0))


def _inv_sqrt(m6):
    return _spectral_map(sym6_to_mat(m6), lambda v: v**-0.5)


def interpolate_in_tet(m1, m2, m3, m4, bary) -> np.ndarray:
    """Metric at a point of a tet by the three-stage pairwise cascade.

    The point is first pushed along the line from vertex 4 onto the 1-2-3
    face, then from vertex 2 onto the 3-1 edge; the metric is rebuilt by
    pairwise interpolations in the reverse order. Vertex and edge limits
    where a stage parameter is indeterminate skip that stage.
    """
    b = np.asarray(bary, dtype=float)
    if b.shape != (4,):
        raise ValueError("bary must have 4 entries")
    if abs(b.sum() - 1.0) > 1e-10 or (b < _BARY_MIN).any():
        raise ValueError(f"invalid barycentric coordinates {b}")
    b = np.clip(b, 0.0, None)
    b = b / b.sum()

    face_mass = b[0] + b[1] + b[2]
    if face_mass <= 1e-14:
        _check_spd(eigh3(sym6_to_mat(m4))[0])
        return np.asarray(m4, dtype=float).copy()
    edge_mass = b[0] + b[2]
    if edge_mass <= 1e-14:
        m_face = np.asarray(m2, dtype=float)
    else:
        m_edge = interpolate_pair(m3, m1, b[0] / edge_mass)
        m_face = interpolate_pair(m2, m_edge, edge_mass / face_mass)
    return interpolate_pair(m4, m_face, face_mass)


# -- intersection ------------------------------------------------------------------

def intersect_many(m1s, m2s) -> np.ndarray:
    """Rowwise metric intersection of two ``(n, 6)`` stacks.

    Uses simultaneous reduction: with ``L = M1^(1/2)``, the symmetric problem
    ``L^-1 M2 L^-1`` supplies the eigenvectors ``P = L^-1 Q`` of
    ``M1^-1 M2``; the result is ``P^-T diag(max(p_i^T M1 p_i, p_i^T M2 p_i)) P^-1``.
    Near-identical pairs short-circuit to the first argument, where the
    generalised eigenproblem is ill-conditioned and the answer forced.
    """
    m1s = np.asarray(m1s, dtype=float).reshape(-1, 6)
    m2s = np.asarray(m2s, dtype=float).reshape(-1, 6)
    if m1s.shape != m2s.shape:
        raise ValueError("metric stacks must have matching shapes")
    out = m1s.copy()
    norm1 = np.linalg.norm(m1s, axis=1)
    norm2 = np.linalg.norm(m2s, axis=1)
    compute = np.linalg.norm(m1s - m2s, axis=1) >= 1e-10 * np.maximum(norm1, norm2)
    if not compute.any():
        return out

    M1 = sym6_to_mat(m1s[compute])
    M2 = sym6_to_mat(m2s[compute])
    vals1, vecs1 = eigh3(M1)
    _check_spd(vals1)
    root = np.sqrt(vals1)
    L = np.einsum("nij,nj,nkj->nik", vecs1, root, vecs1)
    Li = np.einsum("nij,nj,nkj->nik", vecs1, 1.0 / root, vecs1)
    A = Li @ M2 @ Li
    A = 0.5 * (A + np.transpose(A, (0, 2, 1)))
    d, Q = eigh3(A)
    _check_spd(d, "second metric")
    P = Li @ Q
    lam = np.einsum("nji,njk,nki->ni", P, M1, P)
    mu = np.einsum("nji,njk,nki->ni", P, M2, P)
    W = L @ Q  # = P^-T
    res = np.einsum("nij,nj,nkj->nik", W, np.maximum(lam, mu), W)
    out[compute] = mat_to_sym6(res)
    return out


def intersect_pair(m1, m2) -> np.ndarray:
    """Metric intersection of two tensors; Loewner-dominates both inputs."""
    return intersect_many(np.asarray(m1)[None, :], np.asarray(m2)[None, :])[0]


# -- file format -------------------------------------------------------------------

def read_metric_field(path, n_nodes: int | None = None) -> np.ndarray:
    """Read an ``mfield 1`` file into an ``(n, 6)`` array."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 3 or head[:2] != ["mfield", "1"]:
        raise ValueError(f"{path}: expected 'mfield 1 <n>' header")
    n = int(head[2])
    if n_nodes is not None and n != n_nodes:
        raise ValueError(f"{path}: field has {n} nodes, expected {n_nodes}")
    block = np.loadtxt(io.StringIO("\n".join(lines[1:1 + n])), ndmin=2)
    if block.shape != (n, 6):
        raise ValueError(f"{path}: expected {n} lines of 6 components")
    return block


def write_metric_field(path, field) -> None:
    field = np.asarray(field, dtype=float).reshape(-1, 6)
    with open(path, "w") as fh:
        fh.write(f"mfield 1 {field.shape[0]}\n")
        np.savetxt(fh, field, fmt="%.17g")
