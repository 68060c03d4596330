"""2D Delaunay triangulation by incremental insertion (Bowyer-Watson).

Robustness strategy: input coordinates are normalized to the unit box and
snapped to a 2^31 grid; orientation and in-circle predicates are then
evaluated in exact (arbitrary-precision) integer arithmetic, so the
incremental construction can never be derailed by roundoff.  Points that
coincide after snapping (within ~5e-10 of the bounding box) are merged
onto the lowest input index.  Exact collinear degeneracies met during
cavity retriangulation trigger a deterministic integer jitter retry.

The super-triangle sits 2^9 bounding boxes away from the data, far beyond
any circumcircle arising from non-pathological inputs.
"""

import numpy as np

from ..errors import DegenerateInputError
from .mesh import TriMesh

_SNAP = 1 << 31
_SUPER = 1 << 40


class _DegeneracyRetry(Exception):
    pass


def _orient(pa, pb, pc):
    return (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])


def _in_circle(pa, pb, pc, pd):
    # > 0 iff pd lies strictly inside the circumcircle of CCW (pa, pb, pc)
    adx = pa[0] - pd[0]
    ady = pa[1] - pd[1]
    bdx = pb[0] - pd[0]
    bdy = pb[1] - pd[1]
    cdx = pc[0] - pd[0]
    cdy = pc[1] - pd[1]
    ad2 = adx * adx + ady * ady
    bd2 = bdx * bdx + bdy * bdy
    cd2 = cdx * cdx + cdy * cdy
    return (adx * (bdy * cd2 - cdy * bd2)
            - ady * (bdx * cd2 - cdx * bd2)
            + ad2 * (bdx * cdy - cdx * bdy))


class _BowyerWatson:
    def __init__(self, coords):
        self.p = coords          # id -> (ix, iy)
        self.tris = {}           # tid -> (a, b, c) CCW
        self.edge = {}           # directed edge (u, v) -> tid
        self.next_tid = 0
        self.last_tid = None

    def add_tri(self, a, b, c):
        tid = self.next_tid
        self.next_tid += 1
        self.tris[tid] = (a, b, c)
        self.edge[(a, b)] = tid
        self.edge[(b, c)] = tid
        self.edge[(c, a)] = tid
        self.last_tid = tid

    def remove_tri(self, tid):
        a, b, c = self.tris.pop(tid)
        for e in ((a, b), (b, c), (c, a)):
            if self.edge.get(e) == tid:
                del self.edge[e]

    def locate(self, q):
        tid = self.last_tid if self.last_tid in self.tris else next(iter(self.tris))
        steps = 0
        limit = 4 * len(self.tris) + 64
        while True:
            a, b, c = self.tris[tid]
            moved = False
            for u, v in ((a, b), (b, c), (c, a)):
                if _orient(self.p[u], self.p[v], q) < 0:
                    nxt = self.edge.get((v, u))
                    if nxt is not None:
                        tid = nxt
                        moved = True
                        break
            if not moved:
                return tid
            steps += 1
            if steps > limit:
                return self._locate_scan(q)

    def _locate_scan(self, q):
        for tid, (a, b, c) in self.tris.items():
            if (_orient(self.p[a], self.p[b], q) >= 0
                    and _orient(self.p[b], self.p[c], q) >= 0
                    and _orient(self.p[c], self.p[a], q) >= 0):
                return tid
        raise _DegeneracyRetry

    def insert(self, pid):
        q = self.p[pid]
        seed = self.locate(q)
        cavity = {seed}
        stack = [seed]
        while stack:
            a, b, c = self.tris[stack.pop()]
            for u, v in ((a, b), (b, c), (c, a)):
                nb = self.edge.get((v, u))
                if nb is None or nb in cavity:
                    continue
                na, nbv, nc = self.tris[nb]
                if _in_circle(self.p[na], self.p[nbv], self.p[nc], q) > 0:
                    cavity.add(nb)
                    stack.append(nb)
        boundary = []
        for tid in cavity:
            a, b, c = self.tris[tid]
            for u, v in ((a, b), (b, c), (c, a)):
                nb = self.edge.get((v, u))
                if nb is None or nb not in cavity:
                    boundary.append((u, v))
        for tid in list(cavity):
            self.remove_tri(tid)
        for u, v in boundary:
            if _orient(self.p[u], self.p[v], q) <= 0:
                raise _DegeneracyRetry
            self.add_tri(u, v, pid)


def _triangulate(coords, order, n_real):
    coords = dict(coords)
    s0, s1, s2 = n_real, n_real + 1, n_real + 2
    coords[s0] = (-_SUPER, -_SUPER)
    coords[s1] = (3 * _SUPER, -_SUPER)
    coords[s2] = (-_SUPER, 3 * _SUPER)
    bw = _BowyerWatson(coords)
    bw.add_tri(s0, s1, s2)
    for pid in order:
        bw.insert(pid)
    faces = [t for t in bw.tris.values() if max(t) < n_real]
    return faces


def delaunay_2d(points_xy):
    """Delaunay triangulation of 2D points (z is ignored if present).

    Returns a TriMesh whose vertices are the input points lifted with z=0
    and whose faces are counterclockwise in (x, y).  Face indices refer to
    the original input order; snapped duplicates collapse onto the lowest
    index and do not appear in any face.
    """
    pts = np.asarray(points_xy, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 2:
        raise DegenerateInputError(f"need an (N,>=2) array, got {pts.shape}")
    xy = pts[:, :2]
    n = len(xy)
    if n < 3:
        raise DegenerateInputError(f"need at least 3 points, got {n}")
    if not np.all(np.isfinite(xy)):
        raise DegenerateInputError("non-finite coordinates")

    mins = xy.min(axis=0)
    span = float(np.max(xy.max(axis=0) - mins))
    if span <= 0:
        raise DegenerateInputError("all points coincide")
    snapped = np.rint((xy - mins) / span * _SNAP).astype(np.int64)

    seen = {}
    reps = []
    for i, key in enumerate(map(tuple, snapped)):
        if key not in seen:
            seen[key] = i
            reps.append(i)
    if len(reps) < 3:
        raise DegenerateInputError("fewer than 3 distinct points after merging")

    base = {i: (int(snapped[i, 0]), int(snapped[i, 1])) for i in reps}
    p0, p1 = base[reps[0]], base[reps[1]]
    if all(_orient(p0, p1, base[i]) == 0 for i in reps[2:]):
        raise DegenerateInputError("all points are collinear")

    order = [reps[j] for j in np.random.default_rng(2654435761).permutation(len(reps))]
    for attempt in range(4):
        if attempt == 0:
            coords = base
        else:
            jit = np.random.default_rng(97531 + attempt).integers(
                -8 * attempt, 8 * attempt + 1, size=(len(reps), 2))
            coords = {i: (base[i][0] + int(jit[j, 0]), base[i][1] + int(jit[j, 1]))
                      for j, i in enumerate(reps)}
            if len(set(coords.values())) < len(reps):
                continue  # jitter collided two points, try a wider one
        try:
            faces = _triangulate(coords, order, n)
            break
        except _DegeneracyRetry:
            continue
    else:
        raise DegenerateInputError("could not reach general position by jittering")

    vertices = np.column_stack([xy, np.zeros(n)])
    return TriMesh(vertices=vertices, faces=np.array(faces, dtype=np.int64).reshape(-1, 3))


def patch_to_mesh(patch):
    """Delaunay-triangulate a height-field patch on its (x,y) projection.

    Returns (TriMesh with the patch's 3D points, kept) where kept maps mesh
    vertex index -> patch point index (duplicate projections are dropped).
    """
    tri = delaunay_2d(patch.points[:, :2])
    kept = np.unique(tri.faces)
    remap = np.full(len(patch.points), -1, dtype=np.int64)
    remap[kept] = np.arange(len(kept))
    mesh = TriMesh(vertices=patch.points[kept], faces=remap[tri.faces])
    return mesh, kept
