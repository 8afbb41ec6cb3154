"""Synthetic meshes and solution fields for self-contained pipeline runs.

Stands in for external CFD data: a structured box is split into tets and a
steep tanh layer plays the role of a shock, with two parameters moving the
layer position and tilting its normal so the target metric field varies
anisotropically across cases.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .tetmesh import TetMesh

__all__ = ["TanhLayerConfig", "SyntheticCaseSpec", "box_tet_mesh", "tanh_layer_field"]

# Corner paths of the six-tet (Kuhn) cube subdivision: every permutation of
# the axes gives one tet from corner (0,0,0) to corner (1,1,1).
_KUHN_PERMS = list(itertools.permutations(range(3)))


def box_tet_mesh(cells, origin=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0)) -> TetMesh:
    """Structured tet mesh of a box: ``cells`` cubes per axis, 6 tets per cube."""
    if isinstance(cells, int):
        cells = (cells, cells, cells)
    nx, ny, nz = cells
    if min(nx, ny, nz) < 1:
        raise ValueError("need at least one cell per axis")
    origin = np.asarray(origin, dtype=float)
    size = np.asarray(size, dtype=float)

    xs = [np.linspace(origin[k], origin[k] + size[k], cells[k] + 1) for k in range(3)]
    X, Y, Z = np.meshgrid(*xs, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    base = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1)
    tets = []
    for perm in _KUHN_PERMS:
        corners = [base.copy()]
        cur = base.copy()
        for axis in perm:
            cur = cur.copy()
            cur[:, axis] += 1
            corners.append(cur)
        tets.append(np.stack([nid(c[:, 0], c[:, 1], c[:, 2]) for c in corners], axis=1))
    return TetMesh(nodes, np.concatenate(tets, axis=0))


@dataclass(frozen=True)
class TanhLayerConfig:
    """Steep-layer field family ``tanh(sigma * (x - x0(a) - c(b) * y))``.

    ``a`` places the layer along x within ``[x0_lo, x0_hi]``; ``b`` tilts its
    normal by choosing the slope ``c`` within ``[c_lo, c_hi]``.
    """

    sigma: float = 20.0
    x0_lo: float = 0.3
    x0_hi: float = 0.7
    c_lo: float = -0.4
    c_hi: float = 0.4

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")

    def layer_position(self, a: float) -> float:
        return self.x0_lo + a * (self.x0_hi - self.x0_lo)

    def layer_slope(self, b: float) -> float:
        return self.c_lo + b * (self.c_hi - self.c_lo)


@dataclass(frozen=True)
class SyntheticCaseSpec:
    """One synthetic case: parameters in the unit square plus the field family."""

    a: float
    b: float
    field: TanhLayerConfig

    def __post_init__(self):
        if not (0.0 <= self.a <= 1.0 and 0.0 <= self.b <= 1.0):
            raise ValueError("case parameters must lie in [0, 1]")


def tanh_layer_field(points, a: float, b: float, cfg: TanhLayerConfig) -> np.ndarray:
    """Evaluate the tanh layer at the given points (or mesh nodes)."""
    if isinstance(points, TetMesh):
        points = points.nodes
    points = np.asarray(points, dtype=float)
    x0 = cfg.layer_position(a)
    c = cfg.layer_slope(b)
    return np.tanh(cfg.sigma * (points[:, 0] - x0 - c * points[:, 1]))
