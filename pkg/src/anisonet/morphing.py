"""Delaunay-graph mesh morphing for geometrically parametrised domains.

A Delaunay tetrahedralisation is built over the background mesh's boundary
nodes at the reference geometry (plus an enclosing super-tet, kept internal
so point location succeeds everywhere). Every mesh node is bound to its
containing graph tet by barycentric coordinates; for a displaced boundary
configuration the node positions are re-evaluated from the stored weights,
with the super-tet vertices held fixed. Graph vertices therefore land
exactly on their displaced positions and the map commutes with affine
transformations.

Graph construction is incremental (insertion order = input order) and
sequential; binding and morphing are per-node independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DelaunayError",
    "DelaunayGraph",
    "GeometryParams",
    "MorphBinding",
    "MorphReport",
    "bind_mesh",
    "build_delaunay",
    "morph",
    "morph_report",
    "read_binding",
    "write_binding",
]

# In-sphere tolerance relative to the squared circumradius: points within
# this band of a circumsphere are treated as cospherical and stay outside
# the cavity (the first valid cavity wins).
_INSPHERE_TOL = 1e-10
_BARY_SLACK = -1e-10


class DelaunayError(ValueError):
    """Degenerate input (too few / coplanar / duplicate points) or failed insertion."""


def _circumsphere(a, b, c, d):
    rows = 2.0 * np.stack([b - a, c - a, d - a])
    rhs = np.array([b @ b - a @ a, c @ c - a @ a, d @ d - a @ a])
    center = np.linalg.solve(rows, rhs)
    return center, float(((a - center) ** 2).sum())


class _Builder:
    """Incremental Bowyer-Watson state over a growable tet store."""

    def __init__(self, pts):
        self.pts = pts
        cap = 64
        self.tets = np.zeros((cap, 4), dtype=np.int64)
        self.alive = np.zeros(cap, dtype=bool)
        self.centers = np.zeros((cap, 3))
        self.r2 = np.zeros(cap)
        self.n = 0
        self.faces = {}  # sorted vertex triple -> list of alive tet ids
        self.last = 0

    # -- storage ---------------------------------------------------------

    def _grow(self):
        cap = self.tets.shape[0] * 2
        for name in ("tets", "centers"):
            arr = getattr(self, name)
            new = np.zeros((cap,) + arr.shape[1:], dtype=arr.dtype)
            new[: self.n] = arr[: self.n]
            setattr(self, name, new)
        for name in ("alive", "r2"):
            arr = getattr(self, name)
            new = np.zeros(cap, dtype=arr.dtype)
            new[: self.n] = arr[: self.n]
            setattr(self, name, new)

    def _tet_faces(self, verts):
        v = sorted(verts)
        return (
            (v[1], v[2], v[3]),
            (v[0], v[2], v[3]),
            (v[0], v[1], v[3]),
            (v[0], v[1], v[2]),
        )

    def add_tet(self, verts):
        a, b, c, d = (self.pts[v] for v in verts)
        vol = np.dot(b - a, np.cross(c - a, d - a))
        if vol < 0.0:
            verts = (verts[0], verts[1], verts[3], verts[2])
        if self.n == self.tets.shape[0]:
            self._grow()
        tid = self.n
        self.n += 1
        self.tets[tid] = verts
        self.alive[tid] = True
        a, b, c, d = (self.pts[v] for v in self.tets[tid])
        self.centers[tid], self.r2[tid] = _circumsphere(a, b, c, d)
        for f in self._tet_faces(self.tets[tid]):
            self.faces.setdefault(f, []).append(tid)
        return tid

    def kill_tet(self, tid):
        self.alive[tid] = False
        for f in self._tet_faces(self.tets[tid]):
            entry = self.faces[f]
            entry.remove(tid)
            if not entry:
                del self.faces[f]

    # -- geometry --------------------------------------------------------

    def bary(self, p, tid):
        verts = self.pts[self.tets[tid]]
        lam = np.linalg.solve((verts[1:] - verts[0]).T, p - verts[0])
        return np.concatenate(([1.0 - lam.sum()], lam))

    def neighbor(self, tid, opposite_local):
        verts = [v for k, v in enumerate(self.tets[tid]) if k != opposite_local]
        entry = self.faces.get(tuple(sorted(verts)), ())
        for t in entry:
            if t != tid:
                return t
        return -1

    def walk(self, p, start):
        cur = start if self.alive[start] else int(np.flatnonzero(self.alive[: self.n])[0])
        for _ in range(2 * self.n + 8):
            b = self.bary(p, cur)
            worst = int(np.argmin(b))
            if b[worst] >= _BARY_SLACK:
                return cur
            nxt = self.neighbor(cur, worst)
            if nxt < 0:
                break
            cur = nxt
        # cycling or dead end: exhaustive scan over alive tets
        alive = np.flatnonzero(self.alive[: self.n])
        best, best_t = -np.inf, alive[0]
        for t in alive:
            b = self.bary(p, t)
            if b.min() > best:
                best, best_t = b.min(), t
        return int(best_t)

    # -- insertion -------------------------------------------------------

    def _cavity(self, p, seed):
        d2 = ((p - self.centers[: self.n]) ** 2).sum(axis=1)
        strict = self.alive[: self.n] & (self.r2[: self.n] - d2 > _INSPHERE_TOL * self.r2[: self.n])
        bad = set(np.flatnonzero(strict))
        bad.add(seed)
        comp = {seed}
        stack = [seed]
        while stack:
            t = stack.pop()
            for f in self._tet_faces(self.tets[t]):
                for nb in self.faces.get(f, ()):
                    if nb in bad and nb not in comp:
                        comp.add(nb)
                        stack.append(nb)
        return comp

    def _boundary_faces(self, comp):
        count = {}
        for t in comp:
            for f in self._tet_faces(self.tets[t]):
                count[f] = count.get(f, 0) + 1
        return [f for f, c in count.items() if c == 1]

    def insert(self, v):
        p = self.pts[v]
        seed = self.walk(p, self.last)
        comp = self._cavity(p, seed)
        for _ in range(self.n + 1):
            boundary = self._boundary_faces(comp)
            grow = -1
            for f in boundary:
                u0, u1, u2 = (self.pts[k] for k in f)
                vol = np.dot(u1 - u0, np.cross(u2 - u0, p - u0))
                scale = max(
                    np.linalg.norm(u1 - u0), np.linalg.norm(u2 - u0),
                    np.linalg.norm(p - u0),
                )
                if abs(vol) <= 1e-12 * scale**3:
                    others = [t for t in self.faces.get(f, ()) if t not in comp]
                    if not others:
                        raise DelaunayError(
                            "degenerate insertion (duplicate or colinear point?)"
                        )
                    grow = others[0]
                    break
            if grow < 0:
                break
            comp.add(grow)
        else:
            raise DelaunayError("cavity repair failed to terminate")

        for t in comp:
            self.kill_tet(t)
        created = [self.add_tet((f[0], f[1], f[2], v)) for f in boundary]
        self.last = created[0]


class DelaunayGraph:
    """Delaunay tetrahedralisation of a point set plus its enclosing super-tet.

    ``points_all`` holds the four super-tet vertices first, then the input
    points; ``tets`` covers the super-tet hull so every query point has a
    containing element. ``graph_tets`` exposes only tets made of input
    points, re-indexed to input ids.
    """

    N_SUPER = 4

    def __init__(self, points_all, tets):
        self.points_all = points_all
        self.tets = tets
        self._origin = points_all[tets[:, 0]]
        edges = np.stack([points_all[tets[:, k]] - self._origin for k in (1, 2, 3)], axis=2)
        self._inv = np.linalg.inv(edges)
        self._neighbors = self._build_neighbors()

    def _build_neighbors(self):
        corners = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
        faces = np.sort(self.tets[:, corners], axis=2).reshape(-1, 3)
        order = np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))
        fs = faces[order]
        same = np.all(fs[1:] == fs[:-1], axis=1)
        nbr = np.full((len(self.tets), 4), -1, dtype=np.int64)
        tet_of = order // 4
        local = order % 4
        pair = np.flatnonzero(same)
        nbr[tet_of[pair], local[pair]] = tet_of[pair + 1]
        nbr[tet_of[pair + 1], local[pair + 1]] = tet_of[pair]
        return nbr

    @property
    def n_points(self) -> int:
        return self.points_all.shape[0] - self.N_SUPER

    @property
    def graph_nodes(self) -> np.ndarray:
        return self.points_all[self.N_SUPER:]

    @property
    def graph_tets(self) -> np.ndarray:
        keep = (self.tets >= self.N_SUPER).all(axis=1)
        return self.tets[keep] - self.N_SUPER

    def locate(self, points):
        """Containing tet and barycentric weights for each point (lock-step walk)."""
        points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
        q = points.shape[0]
        cur = np.zeros(q, dtype=np.int64)
        elem = np.zeros(q, dtype=np.int64)
        bary = np.zeros((q, 4))
        active = np.arange(q)
        for _ in range(len(self.tets) + 4):
            if active.size == 0:
                return elem, bary
            lam = np.einsum(
                "kij,kj->ki", self._inv[cur[active]],
                points[active] - self._origin[cur[active]],
            )
            b = np.column_stack([1.0 - lam.sum(axis=1), lam])
            worst = np.argmin(b, axis=1)
            inside = b[np.arange(active.size), worst] >= _BARY_SLACK
            done = active[inside]
            elem[done] = cur[done]
            bary[done] = b[inside]
            moving = active[~inside]
            nxt = self._neighbors[cur[moving], worst[~inside]]
            stuck = nxt < 0
            # covering triangulation: a dead end can only be numerical noise
            done2 = moving[stuck]
            elem[done2] = cur[done2]
            bary[done2] = b[~inside][stuck]
            cur[moving[~stuck]] = nxt[~stuck]
            active = moving[~stuck]
        # cycling stragglers: exhaustive scan
        for i in active:
            best, best_t, best_b = -np.inf, 0, None
            for t in range(len(self.tets)):
                lam = self._inv[t] @ (points[i] - self._origin[t])
                b = np.concatenate(([1.0 - lam.sum()], lam))
                if b.min() > best:
                    best, best_t, best_b = b.min(), t, b
            elem[i] = best_t
            bary[i] = best_b
        return elem, bary


def build_delaunay(points) -> DelaunayGraph:
    """Incremental Delaunay tetrahedralisation of at least 4 non-coplanar points.

    Cospherical configurations are resolved deterministically by insertion
    order; the empty-circumsphere property then holds up to the in-sphere
    tolerance, which is how the brute-force oracle checks it.
    """
    points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
    m = points.shape[0]
    if m < 4:
        raise DelaunayError("need at least 4 points")
    if not np.isfinite(points).all():
        raise DelaunayError("points must be finite")
    if np.unique(points, axis=0).shape[0] < m:
        raise DelaunayError("duplicate points")
    sv = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if sv[2] <= 1e-12 * sv[0]:
        raise DelaunayError("points are coplanar")

    lo, hi = points.min(axis=0), points.max(axis=0)
    center = 0.5 * (lo + hi)
    radius = 100.0 * float((hi - lo).max())
    dirs = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) / np.sqrt(3.0)
    pts_all = np.vstack([center + radius * dirs, points])

    builder = _Builder(pts_all)
    builder.add_tet((0, 1, 2, 3))
    for v in range(DelaunayGraph.N_SUPER, pts_all.shape[0]):
        builder.insert(v)

    keep = np.flatnonzero(builder.alive[: builder.n])
    return DelaunayGraph(pts_all, builder.tets[keep].copy())


@dataclass(frozen=True)
class MorphBinding:
    """Graph tet and barycentric weights for every mesh node."""

    tet_ids: np.ndarray
    bary: np.ndarray


@dataclass(frozen=True)
class MorphReport:
    """Validity summary of a morphed mesh; inversions are warnings, not errors."""

    n_tets: int
    n_inverted: int
    min_volume: float

    def to_text(self) -> str:
        status = "OK" if self.n_inverted == 0 else "WARNING: inverted elements"
        return (
            "morph report\n"
            f"tets          {self.n_tets}\n"
            f"inverted tets {self.n_inverted}\n"
            f"min volume    {self.min_volume:.6e}\n"
            f"status        {status}\n"
        )


@dataclass(frozen=True)
class GeometryParams:
    """Geometric parameter vector with per-parameter ranges."""

    values: np.ndarray
    ranges: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        ranges = np.asarray(self.ranges, dtype=float).reshape(-1, 2)
        if values.shape[0] != ranges.shape[0]:
            raise ValueError("one (low, high) range per parameter required")
        if (ranges[:, 0] > ranges[:, 1]).any():
            raise ValueError("ranges must satisfy low <= high")
        if (values < ranges[:, 0]).any() or (values > ranges[:, 1]).any():
            raise ValueError("parameter values outside their ranges")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "ranges", ranges)

    @property
    def reference(self) -> np.ndarray:
        """Mid-range parameter vector (the configuration the graph is built on)."""
        return 0.5 * (self.ranges[:, 0] + self.ranges[:, 1])


def bind_mesh(graph: DelaunayGraph, mesh) -> MorphBinding:
    """Bind every mesh node to its containing graph tet.

    Weights below 1e-12 are snapped to zero (and the rest renormalised):
    nodes coinciding with graph vertices must carry an exact unit weight,
    or the distant super-tet vertices would amplify the residue.
    """
    elem, bary = graph.locate(mesh.nodes)
    bary = np.where(np.abs(bary) < 1e-12, 0.0, bary)
    bary /= bary.sum(axis=1, keepdims=True)
    return MorphBinding(tet_ids=elem, bary=bary)


def morph(graph: DelaunayGraph, binding: MorphBinding, displaced) -> np.ndarray:
    """Re-evaluate node positions for displaced graph-node coordinates.

    ``displaced`` must provide one coordinate triple per graph node (input
    point); the super-tet vertices stay fixed.
    """
    displaced = np.asarray(displaced, dtype=float)
    if displaced.shape != (graph.n_points, 3):
        raise ValueError(
            f"displaced coordinates must have shape ({graph.n_points}, 3), "
            f"got {displaced.shape}"
        )
    vp = np.vstack([graph.points_all[: graph.N_SUPER], displaced])
    corners = vp[graph.tets[binding.tet_ids]]
    return np.einsum("nj,njk->nk", binding.bary, corners)


def morph_report(mesh, new_coords) -> MorphReport:
    from .tetmesh import signed_volumes

    vols = signed_volumes(np.asarray(new_coords, dtype=float), mesh.tets)
    return MorphReport(
        n_tets=len(vols),
        n_inverted=int((vols <= 0.0).sum()),
        min_volume=float(vols.min()),
    )


def write_binding(path, binding: MorphBinding, n_graph_points: int) -> None:
    with open(path, "w") as fh:
        fh.write(f"morphbind 1 {binding.tet_ids.shape[0]} {n_graph_points}\n")
        block = np.column_stack([binding.tet_ids, binding.bary])
        np.savetxt(fh, block, fmt=["%d", "%.17g", "%.17g", "%.17g", "%.17g"])


def read_binding(path, n_nodes: int, n_graph_points: int) -> MorphBinding:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = lines[0].split() if lines else []
    if len(head) != 4 or head[:2] != ["morphbind", "1"]:
        raise ValueError(f"{path}: expected 'morphbind 1 <n_nodes> <n_graph>' header")
    if int(head[2]) != n_nodes or int(head[3]) != n_graph_points:
        raise ValueError(f"{path}: binding does not match this mesh/graph")
    import io

    block = np.loadtxt(io.StringIO("\n".join(lines[1:])), ndmin=2)
    if block.shape != (n_nodes, 5):
        raise ValueError(f"{path}: expected {n_nodes} binding lines")
    return MorphBinding(tet_ids=block[:, 0].astype(np.int64), bary=block[:, 1:])
