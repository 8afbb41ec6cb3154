"""Conservative transfer of nodal spacing data onto a background mesh.

Each computational-mesh node is located in the background mesh and feeds the
patches of the four vertices of its containing element; nodes outside the
background mesh (curved-boundary gaps) are attached to the closest element
so no metric is lost. Each background node then folds the metrics of the
computational nodes collected in its patch with the pairwise intersection
(or, for the isotropic baseline, takes their minimum spacing). Background
nodes whose patch stays empty fall back to the vertex metrics of the
computational element containing (or closest to) them.

Folds run in ascending computational-node-id order so the output is
deterministic; intersection is commutative/associative up to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metric import intersect_many
from .tetmesh import TetMesh, locate_points

__all__ = [
    "TransferAssignment",
    "TransferReport",
    "assign_nodes",
    "transfer_isotropic",
    "transfer_metric",
]


@dataclass(frozen=True)
class TransferAssignment:
    """Background element owning each computational node.

    ``exterior`` marks orphan nodes assigned to their closest background
    element rather than a containing one.
    """

    elem_ids: np.ndarray
    exterior: np.ndarray

    @property
    def n_orphans(self) -> int:
        return int(self.exterior.sum())


@dataclass(frozen=True)
class TransferReport:
    """Bookkeeping for one transfer: degenerate-case counts for auditing."""

    n_comp_nodes: int
    n_bg_nodes: int
    orphan_comp_nodes: int
    empty_patches: int
    exterior_bg_nodes: int

    def to_text(self) -> str:
        return (
            "transfer report\n"
            f"computational nodes      {self.n_comp_nodes}\n"
            f"background nodes         {self.n_bg_nodes}\n"
            f"orphan comp nodes        {self.orphan_comp_nodes}\n"
            f"empty background patches {self.empty_patches}\n"
            f"exterior background nodes {self.exterior_bg_nodes}\n"
        )


def assign_nodes(comp_mesh: TetMesh, bg_mesh: TetMesh) -> TransferAssignment:
    """Locate every computational node in the background mesh."""
    elems, _, exterior = locate_points(bg_mesh, comp_mesh.nodes)
    return TransferAssignment(elem_ids=elems, exterior=exterior)


def patch_members(assignment: TransferAssignment, bg_mesh: TetMesh):
    """CSR arrays (offsets, comp ids) of each background node's patch set.

    Member ids are ascending within each patch, fixing the fold order.
    """
    n_comp = assignment.elem_ids.shape[0]
    bg_ids = bg_mesh.tets[assignment.elem_ids].ravel()
    comp_ids = np.repeat(np.arange(n_comp, dtype=np.int64), 4)
    order = np.lexsort((comp_ids, bg_ids))
    counts = np.bincount(bg_ids, minlength=bg_mesh.n_nodes)
    offsets = np.concatenate(([0], np.cumsum(counts)))
    return offsets, comp_ids[order]


def _fold_rounds(values, offsets, members, rows, combine):
    """Left-fold ``combine`` over each row's member list, batched by rounds."""
    counts = offsets[rows + 1] - offsets[rows]
    out = values[members[offsets[rows]]]
    for r in range(1, int(counts.max(initial=0))):
        sel = counts > r
        entries = members[offsets[rows[sel]] + r]
        out[sel] = combine(out[sel], values[entries])
    return out


def _empty_patch_values(bg_nodes, comp_mesh, values, combine):
    """Fold the vertex values of the computational element containing each node."""
    elems, _, exterior = locate_points(comp_mesh, bg_nodes)
    verts = np.sort(comp_mesh.tets[elems], axis=1)
    out = values[verts[:, 0]]
    for k in (1, 2, 3):
        out = combine(out, values[verts[:, k]])
    return out, exterior


def transfer_metric(comp_field, assignment: TransferAssignment, bg_mesh: TetMesh,
                    comp_mesh: TetMesh):
    """Intersection-fold a computational metric field onto background nodes.

    Returns ``(field, report)`` where ``field`` is ``(n_bg, 6)``. The result
    at each background node Loewner-dominates every contributing metric: the
    transferred spacing never exceeds any contributor in any direction.
    """
    comp_field = np.asarray(comp_field, dtype=float).reshape(-1, 6)
    if comp_field.shape[0] != comp_mesh.n_nodes:
        raise ValueError("one metric per computational node required")
    offsets, members = patch_members(assignment, bg_mesh)
    counts = np.diff(offsets)
    out = np.empty((bg_mesh.n_nodes, 6))

    filled = np.flatnonzero(counts > 0)
    out[filled] = _fold_rounds(comp_field, offsets, members, filled, intersect_many)

    empty = np.flatnonzero(counts == 0)
    n_ext = 0
    if empty.size:
        vals, exterior = _empty_patch_values(
            bg_mesh.nodes[empty], comp_mesh, comp_field, intersect_many
        )
        out[empty] = vals
        n_ext = int(exterior.sum())

    report = TransferReport(
        n_comp_nodes=comp_mesh.n_nodes,
        n_bg_nodes=bg_mesh.n_nodes,
        orphan_comp_nodes=assignment.n_orphans,
        empty_patches=int(empty.size),
        exterior_bg_nodes=n_ext,
    )
    return out, report


def transfer_isotropic(comp_spacing, assignment: TransferAssignment,
                       bg_mesh: TetMesh, comp_mesh: TetMesh):
    """Min-fold a scalar spacing field onto background nodes (isotropic baseline)."""
    comp_spacing = np.asarray(comp_spacing, dtype=float).reshape(-1)
    if comp_spacing.shape[0] != comp_mesh.n_nodes:
        raise ValueError("one spacing per computational node required")
    if not (comp_spacing > 0.0).all():
        raise ValueError("spacings must be positive")
    offsets, members = patch_members(assignment, bg_mesh)
    counts = np.diff(offsets)
    out = np.empty(bg_mesh.n_nodes)

    filled = np.flatnonzero(counts > 0)
    out[filled] = _fold_rounds(comp_spacing, offsets, members, filled, np.minimum)

    empty = np.flatnonzero(counts == 0)
    n_ext = 0
    if empty.size:
        vals, exterior = _empty_patch_values(
            bg_mesh.nodes[empty], comp_mesh, comp_spacing, np.minimum
        )
        out[empty] = vals
        n_ext = int(exterior.sum())

    report = TransferReport(
        n_comp_nodes=comp_mesh.n_nodes,
        n_bg_nodes=bg_mesh.n_nodes,
        orphan_comp_nodes=assignment.n_orphans,
        empty_patches=int(empty.size),
        exterior_bg_nodes=n_ext,
    )
    return out, report
