"""Nodal gradient/Hessian recovery and the Hessian-driven target metric field.

Derivatives are recovered by volume-weighted averaging of the constant
per-element gradients of the piecewise-linear interpolant over each node's
patch, applied twice for the Hessian. The recovery is exact for globally
linear fields; boundary nodes use their one-sided patches, so accuracy
degrades towards boundaries.

The target metric assigns, per node, the Hessian eigenvectors as directions
and spacings ``sqrt(K / |lambda|)`` clamped into ``[delta_min, delta_max]``,
with ``K = S^2 delta_min^2 lambda_max`` tied to the globally largest
absolute eigenvalue; the stretching ``delta_3/delta_1`` is capped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metric import eigh3, frame_field_to_metric, sym6_to_mat, mat_to_sym6
from .tetmesh import TetMesh

__all__ = [
    "SpacingConfig",
    "recover_gradient",
    "recover_hessian",
    "target_metric_field",
]

# Recovered Hessians whose largest entry is below this fraction of the
# gradient-per-diameter scale are pure roundoff (an exactly linear field
# never produces bitwise zeros after two averaging passes) and snap to zero.
_HESSIAN_NOISE_FLOOR = 1e-10


@dataclass(frozen=True)
class SpacingConfig:
    """User bounds for the target spacing computation.

    ``scale`` is the refinement factor in ``(0, 1]``: eigenvalues within
    ``scale**2`` of the global maximum saturate at ``delta_min``.
    """

    delta_min: float
    delta_max: float
    scale: float = 0.2
    stretch_cap: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.delta_min < self.delta_max:
            raise ValueError("need 0 < delta_min < delta_max")
        if not 0.0 < self.scale <= 1.0:
            raise ValueError("scale must be in (0, 1]")
        if self.stretch_cap < 1.0:
            raise ValueError("stretch_cap must be >= 1")


def _element_gradients(mesh: TetMesh, values: np.ndarray) -> np.ndarray:
    f = values[mesh.tets]
    df = f[:, 1:] - f[:, :1]
    # bary uses T^-1 with edge columns; the gradient solves T^T g = df
    return np.einsum("tji,tj->ti", mesh._tet_inv, df)


def recover_gradient(mesh: TetMesh, values) -> np.ndarray:
    """Volume-weighted patch average of element gradients, one 3-vector per node."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_nodes,):
        raise ValueError(f"field has shape {values.shape}, mesh has {mesh.n_nodes} nodes")
    if not np.isfinite(values).all():
        raise ValueError("field values must be finite")
    g = _element_gradients(mesh, values)
    flat = mesh.tets.ravel()
    wv = mesh.volumes
    den = np.bincount(flat, weights=np.repeat(wv, 4), minlength=mesh.n_nodes)
    if (den <= 0.0).any():
        raise ValueError("mesh has nodes without incident tets")
    num = np.stack(
        [
            np.bincount(flat, weights=np.repeat(wv * g[:, k], 4), minlength=mesh.n_nodes)
            for k in range(3)
        ],
        axis=1,
    )
    return num / den[:, None]


def recover_hessian(mesh: TetMesh, values) -> np.ndarray:
    """Recovered Hessian per node as 6 components, symmetrised.

    Applies :func:`recover_gradient` to each component of the recovered
    gradient. Fields whose second derivatives are pure recovery noise
    (relative to the gradient scale) return exact zeros.
    """
    grad = recover_gradient(mesh, values)
    rows = np.stack([recover_gradient(mesh, grad[:, k]) for k in range(3)], axis=1)
    hess = mat_to_sym6(rows)  # symmetrises (H + H^T)/2
    grad_scale = float(np.linalg.norm(grad, axis=1).max())
    if np.abs(hess).max() <= _HESSIAN_NOISE_FLOOR * grad_scale / mesh.diameter:
        return np.zeros_like(hess)
    return hess


def target_metric_field(mesh: TetMesh, hessians, cfg: SpacingConfig) -> np.ndarray:
    """Target anisotropic metric field from nodal Hessians, ``(n, 6)``.

    Directions come from the Hessian eigenvectors, spacings from the
    absolute eigenvalues (Hessians are indefinite; the magnitude drives
    refinement), clamped into ``[delta_min, delta_max]`` and capped at
    ``stretch_cap`` times the smallest spacing. An all-zero Hessian field
    (undisturbed flow) yields the isotropic ``delta_max`` metric everywhere.
    """
    hessians = np.asarray(hessians, dtype=float).reshape(-1, 6)
    if hessians.shape[0] != mesh.n_nodes:
        raise ValueError("one Hessian per mesh node required")
    if not np.isfinite(hessians).all():
        raise ValueError("Hessians must be finite")

    vals, vecs = eigh3(sym6_to_mat(hessians))
    mag = np.abs(vals)
    lam_max = float(mag.max())
    iso_max = np.zeros(6)
    iso_max[[0, 3, 5]] = 1.0 / cfg.delta_max**2
    if lam_max == 0.0:
        return np.tile(iso_max, (mesh.n_nodes, 1))

    coeff = cfg.scale**2 * cfg.delta_min**2 * lam_max
    with np.errstate(divide="ignore"):
        spacing = np.sqrt(coeff / mag)
    spacing = np.where(mag > coeff / cfg.delta_min**2, cfg.delta_min, spacing)
    spacing = np.where(mag < coeff / cfg.delta_max**2, cfg.delta_max, spacing)

    order = np.argsort(spacing, axis=1, kind="stable")
    spacing = np.take_along_axis(spacing, order, axis=1)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)
    spacing[:, 1] = np.minimum(spacing[:, 1], cfg.stretch_cap * spacing[:, 0])
    spacing[:, 2] = np.minimum(spacing[:, 2], cfg.stretch_cap * spacing[:, 0])
    return frame_field_to_metric(spacing, vecs)
