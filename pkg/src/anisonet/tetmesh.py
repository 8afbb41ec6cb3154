"""Tetrahedral mesh container, ASCII formats, node patches and point location.

A mesh is immutable after construction: coordinate and connectivity arrays
are marked read-only and derived structures (element volumes, face
neighbours, node patches) are computed once up front. Point-location walks
keep their state in the query, so concurrent lookups on a shared mesh are
safe.

File formats (whitespace separated, UTF-8):

``tmesh 1``
    Line 1: ``tmesh 1``. Line 2: ``<n_nodes> <n_tets>``. Then ``n_nodes``
    lines ``x y z [b]`` with an optional 0/1 boundary flag ``b`` (all lines
    must agree on whether the flag is present), then ``n_tets`` lines
    ``i0 i1 i2 i3`` of 0-based node indices.

``nfield 1``
    Line 1: ``nfield 1 <n_nodes> <n_components>``, then one line of
    ``n_components`` values per node.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "BARY_SLACK",
    "MeshFormatError",
    "MeshTopologyError",
    "NodePatch",
    "PointLocation",
    "TetMesh",
    "build_node_patches",
    "locate_point",
    "locate_points",
    "read_mesh",
    "read_nodal_field",
    "write_mesh",
    "write_nodal_field",
]

# Barycentric coordinates down to this value still count as "inside": points
# sitting exactly on faces must not be rejected by roundoff.
BARY_SLACK = -1e-10

# Local corner indices of the face opposite each tet vertex.
_FACE_CORNERS = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


class MeshFormatError(ValueError):
    """A mesh or field file could not be parsed."""


class MeshTopologyError(ValueError):
    """Mesh connectivity is inconsistent with its node set."""


def signed_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volume of each tet under the (v1-v0, v2-v0, v3-v0) convention."""
    a = nodes[tets[:, 0]]
    e1 = nodes[tets[:, 1]] - a
    e2 = nodes[tets[:, 2]] - a
    e3 = nodes[tets[:, 3]] - a
    return np.einsum("ij,ij->i", e1, np.cross(e2, e3)) / 6.0


class TetMesh:
    """Unstructured tetrahedral mesh with positively oriented elements.

    Parameters
    ----------
    nodes : (n_nodes, 3) array of coordinates.
    tets : (n_tets, 4) array of node indices. Negatively oriented tets are
        reordered on construction.
    boundary : optional (n_nodes,) boolean array. When omitted, a node is
        flagged as boundary if it belongs to a face referenced by exactly
        one tet.
    """

    def __init__(self, nodes, tets, boundary=None):
        nodes = np.ascontiguousarray(nodes, dtype=float)
        tets = np.ascontiguousarray(tets, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise MeshTopologyError(f"nodes must be (n, 3), got {nodes.shape}")
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise MeshTopologyError(f"tets must be (m, 4), got {tets.shape}")
        if nodes.shape[0] < 4 or tets.shape[0] < 1:
            raise MeshTopologyError("mesh needs at least 4 nodes and 1 tet")
        if not np.isfinite(nodes).all():
            raise MeshTopologyError("node coordinates must be finite")
        if tets.min() < 0 or tets.max() >= nodes.shape[0]:
            raise MeshTopologyError("tet references a node index out of range")
        sorted_rows = np.sort(tets, axis=1)
        if (sorted_rows[:, :-1] == sorted_rows[:, 1:]).any():
            raise MeshTopologyError("tet references a repeated node index")

        vols = signed_volumes(nodes, tets)
        flip = vols < 0.0
        if flip.any():
            tets = tets.copy()
            tets[np.ix_(flip, [2, 3])] = tets[np.ix_(flip, [3, 2])]
            vols = np.abs(vols)

        lo = nodes.min(axis=0)
        hi = nodes.max(axis=0)
        diameter = float(np.linalg.norm(hi - lo))
        vol_tol = 1e-14 * max(diameter, np.finfo(float).tiny) ** 3
        if (vols <= vol_tol).any():
            bad = int(np.argmax(vols <= vol_tol))
            raise MeshTopologyError(f"tet {bad} is degenerate (|volume| <= {vol_tol:g})")

        self.nodes = nodes
        self.tets = tets
        self.volumes = vols
        self.diameter = diameter
        self._bbox = (lo, hi)

        self._build_faces(boundary)
        self._build_patches()
        self._build_bary()
        for arr in (self.nodes, self.tets, self.volumes, self.boundary, self.neighbors):
            arr.flags.writeable = False

    # -- construction helpers -------------------------------------------------

    def _build_faces(self, boundary):
        faces = np.sort(self.tets[:, _FACE_CORNERS], axis=2).reshape(-1, 3)
        order = np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))
        fs = faces[order]
        same = np.all(fs[1:] == fs[:-1], axis=1)
        if (same[1:] & same[:-1]).any():
            raise MeshTopologyError("a face is shared by more than two tets")

        neighbors = np.full((self.n_tets, 4), -1, dtype=np.int64)
        tet_of = order // 4
        local = order % 4
        pair = np.flatnonzero(same)
        neighbors[tet_of[pair], local[pair]] = tet_of[pair + 1]
        neighbors[tet_of[pair + 1], local[pair + 1]] = tet_of[pair]
        self.neighbors = neighbors

        if boundary is not None:
            boundary = np.ascontiguousarray(boundary, dtype=bool)
            if boundary.shape != (self.n_nodes,):
                raise MeshTopologyError("boundary flags must be one per node")
            self.boundary = boundary
            return
        single = np.ones(len(fs), dtype=bool)
        single[np.flatnonzero(same)] = False
        single[np.flatnonzero(same) + 1] = False
        flags = np.zeros(self.n_nodes, dtype=bool)
        flags[fs[single].ravel()] = True
        self.boundary = flags

    def _build_patches(self):
        flat = self.tets.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.n_nodes)
        self._patch_offsets = np.concatenate(([0], np.cumsum(counts)))
        self._patch_elems = order // 4  # ascending tet ids per node

    def _build_bary(self):
        a = self.nodes[self.tets[:, 0]]
        edges = np.stack(
            [self.nodes[self.tets[:, k]] - a for k in (1, 2, 3)], axis=2
        )
        self._tet_origin = a
        self._tet_inv = np.linalg.inv(edges)

    # -- basic queries ---------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_tets(self) -> int:
        return self.tets.shape[0]

    def patch(self, node_id: int) -> np.ndarray:
        """Tet ids incident to ``node_id``, ascending."""
        o = self._patch_offsets
        return self._patch_elems[o[node_id]:o[node_id + 1]]

    def bary(self, points: np.ndarray, tet_ids: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of each point w.r.t. the paired tet."""
        points = np.asarray(points, dtype=float)
        tet_ids = np.asarray(tet_ids, dtype=np.int64)
        lam = np.einsum(
            "kij,kj->ki",
            self._tet_inv[tet_ids],
            points - self._tet_origin[tet_ids],
        )
        return np.column_stack([1.0 - lam.sum(axis=1), lam])


@dataclass(frozen=True)
class NodePatch:
    """Tets incident to one node."""

    node_id: int
    elems: np.ndarray


@dataclass(frozen=True)
class PointLocation:
    """Result of locating a point: element, barycentric weights, exterior flag.

    For exterior points ``elem_id`` is the tet minimising the most negative
    barycentric coordinate.
    """

    elem_id: int
    bary: np.ndarray
    exterior: bool


def build_node_patches(mesh: TetMesh) -> list[NodePatch]:
    """One patch per node; patch i holds exactly the tets incident to node i."""
    return [NodePatch(i, mesh.patch(i)) for i in range(mesh.n_nodes)]


def _brute_force_locate(mesh, points):
    q = points.shape[0]
    best_val = np.full(q, -np.inf)
    best_tet = np.zeros(q, dtype=np.int64)
    chunk = max(1, int(1_000_000 // max(q, 1)))
    for t0 in range(0, mesh.n_tets, chunk):
        inv = mesh._tet_inv[t0:t0 + chunk]
        org = mesh._tet_origin[t0:t0 + chunk]
        lam = np.einsum("tij,qtj->qti", inv, points[:, None, :] - org[None, :, :])
        bmin = np.minimum(lam.min(axis=2), 1.0 - lam.sum(axis=2))
        idx = np.argmax(bmin, axis=1)
        val = bmin[np.arange(q), idx]
        better = val > best_val
        best_val[better] = val[better]
        best_tet[better] = t0 + idx[better]
    bary = mesh.bary(points, best_tet)
    return best_tet, bary, best_val < BARY_SLACK


def locate_points(mesh: TetMesh, points, seeds=None):
    """Locate many points by lock-step walking with brute-force fallback.

    Returns ``(elem_ids, bary, exterior)`` arrays. Walks start from ``seeds``
    (tet ids, default 0) and move across the face of the most negative
    barycentric coordinate; queries that hit a boundary face or walk longer
    than the mesh has tets fall back to an exhaustive scan.
    """
    points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
    q = points.shape[0]
    if seeds is None:
        cur = np.zeros(q, dtype=np.int64)
    else:
        cur = np.broadcast_to(np.asarray(seeds, dtype=np.int64), (q,)).copy()
        cur = np.clip(cur, 0, mesh.n_tets - 1)

    elem = np.zeros(q, dtype=np.int64)
    bary_out = np.zeros((q, 4))
    exterior = np.zeros(q, dtype=bool)
    need_fallback = np.zeros(q, dtype=bool)
    active = np.arange(q)

    for _ in range(mesh.n_tets + 4):
        if active.size == 0:
            break
        b = mesh.bary(points[active], cur[active])
        worst = np.argmin(b, axis=1)
        inside = b[np.arange(active.size), worst] >= BARY_SLACK
        done = active[inside]
        elem[done] = cur[done]
        bary_out[done] = b[inside]

        moving = active[~inside]
        nxt = mesh.neighbors[cur[moving], worst[~inside]]
        dead = nxt < 0
        need_fallback[moving[dead]] = True
        cur[moving[~dead]] = nxt[~dead]
        active = moving[~dead]
    need_fallback[active] = True  # walked too far: likely cycling

    todo = np.flatnonzero(need_fallback)
    if todo.size:
        t, b, ext = _brute_force_locate(mesh, points[todo])
        elem[todo] = t
        bary_out[todo] = b
        exterior[todo] = ext
    return elem, bary_out, exterior


def locate_point(mesh: TetMesh, x, seed: int = 0) -> PointLocation:
    """Locate a single point; see :func:`locate_points`."""
    elem, bary, ext = locate_points(mesh, np.asarray(x, dtype=float), seeds=seed)
    return PointLocation(int(elem[0]), bary[0], bool(ext[0]))


# -- file formats ---------------------------------------------------------------


def _load_block(lines, start, count, what):
    if start + count > len(lines):
        raise MeshFormatError(f"file ends before the {what} block is complete")
    text = "\n".join(lines[start:start + count])
    try:
        block = np.loadtxt(io.StringIO(text), ndmin=2)
    except ValueError as exc:
        raise MeshFormatError(f"malformed {what} block: {exc}") from None
    if block.shape[0] != count:
        raise MeshFormatError(f"expected {count} {what} lines, got {block.shape[0]}")
    return block


def read_mesh(path) -> TetMesh:
    """Read a ``tmesh 1`` file."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0].split() != ["tmesh", "1"]:
        raise MeshFormatError(f"{path}: expected 'tmesh 1' header")
    try:
        n_nodes, n_tets = (int(tok) for tok in lines[1].split())
    except ValueError:
        raise MeshFormatError(f"{path}: bad count line {lines[1]!r}") from None

    node_block = _load_block(lines, 2, n_nodes, "node")
    if node_block.shape[1] == 3:
        nodes, boundary = node_block, None
    elif node_block.shape[1] == 4:
        flags = node_block[:, 3]
        if not np.isin(flags, (0.0, 1.0)).all():
            raise MeshFormatError(f"{path}: boundary flags must be 0 or 1")
        nodes, boundary = node_block[:, :3], flags.astype(bool)
    else:
        raise MeshFormatError(f"{path}: node lines must have 3 or 4 columns")

    tet_block = _load_block(lines, 2 + n_nodes, n_tets, "tet")
    if tet_block.shape[1] != 4:
        raise MeshFormatError(f"{path}: tet lines must have 4 columns")
    tets = tet_block.astype(np.int64)
    if not np.array_equal(tets, tet_block):
        raise MeshFormatError(f"{path}: tet indices must be integers")
    try:
        return TetMesh(nodes, tets, boundary)
    except MeshTopologyError as exc:
        raise MeshTopologyError(f"{path}: {exc}") from None


def write_mesh(path, mesh: TetMesh) -> None:
    with open(path, "w") as fh:
        fh.write("tmesh 1\n")
        fh.write(f"{mesh.n_nodes} {mesh.n_tets}\n")
        block = np.column_stack([mesh.nodes, mesh.boundary.astype(int)])
        np.savetxt(fh, block, fmt=["%.17g", "%.17g", "%.17g", "%d"])
        np.savetxt(fh, mesh.tets, fmt="%d")


def read_nodal_field(path, n_nodes: int | None = None) -> np.ndarray:
    """Read an ``nfield 1`` file; returns (n,) for 1 component, else (n, k)."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise MeshFormatError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 4 or head[:2] != ["nfield", "1"]:
        raise MeshFormatError(f"{path}: expected 'nfield 1 <n> <k>' header")
    n, k = int(head[2]), int(head[3])
    if n_nodes is not None and n != n_nodes:
        raise MeshFormatError(f"{path}: field has {n} nodes, mesh has {n_nodes}")
    block = _load_block(lines, 1, n, "field")
    if block.shape[1] != k:
        raise MeshFormatError(f"{path}: expected {k} components per line")
    if not np.isfinite(block).all():
        raise MeshFormatError(f"{path}: field values must be finite")
    return block[:, 0] if k == 1 else block


def write_nodal_field(path, values) -> None:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    with open(path, "w") as fh:
        fh.write(f"nfield 1 {values.shape[0]} {values.shape[1]}\n")
        np.savetxt(fh, values, fmt="%.17g")
