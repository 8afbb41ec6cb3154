"""Doubled-angle encoding between metric tensors and network outputs.

A metric's canonical frame is reduced to three spacings and three angles:
the smallest-spacing direction in spherical coordinates (azimuth ``a1`` in
``[0, pi)``, elevation ``a2`` in ``[-pi/2, pi/2]``), and the second
direction by a single polar angle ``a3`` in ``[0, pi)`` within the plane
orthogonal to the first (the third direction is fixed by orthogonality).
Because a direction and its negation give the same metric, each angle is
only defined modulo pi; mapping it to the unit circle as
``v = (cos 2a, sin 2a)`` removes the seam, so nearly identical orientations
always encode to nearly identical vectors.

Encoding table layout per node: ``d1 d2 d3 v1x v1y v2x v2y v3x v3y``.
File format ``aenc 1``: line 1 ``aenc 1 <n_nodes>``, then one such line per
node.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .metric import decompose_field, frame_field_to_metric

__all__ = [
    "decode_encoding",
    "decode_field",
    "decode_frames",
    "encode_field",
    "encode_metric",
    "read_encoding",
    "write_encoding",
]

# Below this magnitude the first direction counts as the z-axis and the
# azimuth convention switches to the fixed (alpha1 = 0, alpha2 = pi/2) pole.
_POLE_TOL = 1e-12


def _reference_basis(e1):
    """Deterministic basis (u, w) of the plane orthogonal to each e1 row.

    The helper axis is the global axis with the smallest |component| in e1,
    ties resolved towards the highest index, so canonical axis frames (e1 =
    x, helper = z) yield u = y, w = z and all-zero angles.
    """
    k_idx = 2 - np.argmin(np.abs(e1)[:, ::-1], axis=1)
    k = np.eye(3)[k_idx]
    u = np.cross(k, e1)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    w = np.cross(e1, u)
    return u, w


def encode_field(field) -> np.ndarray:
    """Encode a metric field ``(n, 6)`` into the ``(n, 9)`` output table."""
    spacings, axes = decompose_field(field)
    e1 = axes[:, :, 0].copy()
    e2 = axes[:, :, 1]

    pole = np.maximum(np.abs(e1[:, 0]), np.abs(e1[:, 1])) < _POLE_TOL
    e1[pole] = (0.0, 0.0, 1.0)
    az = np.arctan2(e1[:, 1], e1[:, 0])
    flip = (az < 0.0) | (az >= np.pi)
    e1[flip] = -e1[flip]
    az = np.arctan2(e1[:, 1], e1[:, 0])
    a1 = np.where(pole, 0.0, az)
    a2 = np.where(pole, 0.5 * np.pi, np.arcsin(np.clip(e1[:, 2], -1.0, 1.0)))

    u, w = _reference_basis(e1)
    a3 = np.arctan2(np.einsum("ni,ni->n", e2, w), np.einsum("ni,ni->n", e2, u))
    a3 = np.mod(a3, np.pi)

    out = np.empty((spacings.shape[0], 9))
    out[:, 0:3] = spacings
    for j, a in enumerate((a1, a2, a3)):
        out[:, 3 + 2 * j] = np.cos(2.0 * a)
        out[:, 4 + 2 * j] = np.sin(2.0 * a)
    return out


def encode_metric(m) -> np.ndarray:
    """Encode one metric tensor into its 9-value row."""
    return encode_field(np.asarray(m, dtype=float).reshape(1, 6))[0]


def decode_frames(enc):
    """Frames from encoding rows: ``(spacings (n,3), axes (n,3,3))``.

    Circle vectors are normalised first (network outputs are unconstrained);
    spacings are sorted ascending. Zero-magnitude vectors signal a
    degenerate prediction and raise.
    """
    enc = np.asarray(enc, dtype=float).reshape(-1, 9)
    d = np.sort(enc[:, 0:3], axis=1)
    if not (d > 0.0).all():
        raise ValueError("encoded spacings must be positive")
    v = enc[:, 3:].reshape(-1, 3, 2)
    norms = np.linalg.norm(v, axis=2)
    if (norms < 1e-12).any():
        bad = int(np.argwhere(norms < 1e-12)[0, 0])
        raise ValueError(f"zero-magnitude direction vector at row {bad}")
    v = v / norms[:, :, None]

    ang = 0.5 * np.arctan2(v[:, :, 1], v[:, :, 0])
    a1 = np.where(ang[:, 0] < 0.0, ang[:, 0] + np.pi, ang[:, 0])
    a2 = ang[:, 1]
    a3 = np.where(ang[:, 2] < 0.0, ang[:, 2] + np.pi, ang[:, 2])

    cos2 = np.cos(a2)
    e1 = np.column_stack([cos2 * np.cos(a1), cos2 * np.sin(a1), np.sin(a2)])
    u, w = _reference_basis(e1)
    e2 = np.cos(a3)[:, None] * u + np.sin(a3)[:, None] * w
    e3 = np.cross(e1, e2)
    axes = np.stack([e1, e2, e3], axis=2)
    return d, axes


def decode_field(enc) -> np.ndarray:
    """Decode encoding rows back into a metric field ``(n, 6)``."""
    d, axes = decode_frames(enc)
    return frame_field_to_metric(d, axes)


def decode_encoding(enc9) -> np.ndarray:
    """Decode one 9-value row into a metric tensor."""
    return decode_field(np.asarray(enc9, dtype=float).reshape(1, 9))[0]


def read_encoding(path, n_nodes: int | None = None) -> np.ndarray:
    """Read an ``aenc 1`` table into an ``(n, 9)`` array."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = lines[0].split() if lines else []
    if len(head) != 3 or head[:2] != ["aenc", "1"]:
        raise ValueError(f"{path}: expected 'aenc 1 <n>' header")
    n = int(head[2])
    if n_nodes is not None and n != n_nodes:
        raise ValueError(f"{path}: table has {n} nodes, expected {n_nodes}")
    block = np.loadtxt(io.StringIO("\n".join(lines[1:1 + n])), ndmin=2)
    if block.shape != (n, 9):
        raise ValueError(f"{path}: expected {n} lines of 9 values")
    return block


def write_encoding(path, enc) -> None:
    enc = np.asarray(enc, dtype=float).reshape(-1, 9)
    with open(path, "w") as fh:
        fh.write(f"aenc 1 {enc.shape[0]}\n")
        np.savetxt(fh, enc, fmt="%.17g")
