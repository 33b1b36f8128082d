"""Conforming triangle meshes with newest-vertex bisection.

Triangles are stored in normalized form: the refinement edge is the edge
between local vertices 0 and 1 (the edge opposite local vertex 2, which is
the newest vertex).  Bisection of (a, b, c) at the midpoint m of (a, b)
produces the children (c, a, m) and (b, c, m), both counterclockwise and
again in normalized form.

Each vertex created by bisecting an *interior* edge carries a record with
the unit tangent/normal of the bisected edge and the two triangle patches
around the vertex separated by that edge's line.  These records drive the
relaxed vertex continuity of the extended stress space.
"""

from dataclasses import dataclass

import numpy as np


class MeshError(Exception):
    """Invalid mesh topology, geometry or refinement-edge labeling."""


class MeshFormatError(MeshError):
    """Unparseable mesh file."""


@dataclass(frozen=True)
class NewVertexRecord:
    """Bookkeeping for a vertex created on an interior edge.

    ``tangent`` points along the bisected edge from the lower- to the
    higher-indexed endpoint; ``normal`` is the tangent rotated by +90
    degrees.  ``plus_patch`` / ``minus_patch`` hold the indices of the
    triangles at the vertex whose barycenter lies on the positive /
    negative side of the edge's line.  Patch indices refer to the mesh
    the record is attached to and are recomputed after every refinement.
    """

    vertex: int
    edge: tuple
    tangent: np.ndarray
    normal: np.ndarray
    plus_patch: np.ndarray
    minus_patch: np.ndarray


def _signed_areas(vertices, triangles):
    p = vertices[triangles]
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    )


class Mesh:
    """Immutable conforming triangulation with bisection ancestry.

    Parameters
    ----------
    vertices : (V, 2) float array.
    triangles : (T, 3) int array, counterclockwise.
    refedge : (T,) int array with values in {0, 1, 2}; entry i names the
        edge opposite that local vertex as the refinement edge.  Defaults
        to 2 everywhere, matching the normalized storage convention.
    """

    def __init__(self, vertices, triangles, refedge=None, *, _state=None):
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be (V, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must be (T, 3)")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshError("triangle vertex index out of range")

        if _state is None:
            if refedge is None:
                refedge = np.full(len(triangles), 2, dtype=np.int64)
            refedge = np.asarray(refedge, dtype=np.int64)
            if refedge.shape != (len(triangles),) or np.any((refedge < 0) | (refedge > 2)):
                raise MeshError("refedge must be (T,) with values in {0,1,2}")
            # rotate each triangle so the refinement edge is (v0, v1)
            rolled = triangles.copy()
            for r, order in ((0, (1, 2, 0)), (1, (2, 0, 1))):
                sel = refedge == r
                rolled[sel] = triangles[sel][:, order]
            triangles = rolled
            _state = dict(
                tri_id=np.arange(len(triangles), dtype=np.int64),
                tri_parent=np.full(len(triangles), -1, dtype=np.int64),
                tri_gen=np.zeros(len(triangles), dtype=np.int64),
                lineage={},
                next_tri_id=len(triangles),
                n_initial_vertices=len(vertices),
                records=[],
            )

        self.vertices = vertices
        self.triangles = triangles
        self.tri_id = _state["tri_id"]
        self.tri_parent = _state["tri_parent"]
        self.tri_gen = _state["tri_gen"]
        self._lineage = _state["lineage"]
        self._next_tri_id = _state["next_tri_id"]
        self.n_initial_vertices = _state["n_initial_vertices"]

        sa = _signed_areas(vertices, triangles)
        if np.any(sa <= 0):
            bad = int(np.argmax(sa <= 0))
            raise MeshError(
                f"triangle {bad} has non-positive signed area {sa[bad]:.3e} "
                "(degenerate or clockwise)"
            )
        self.areas = sa
        self.centroids = vertices[triangles].mean(axis=1)

        self._build_edges()
        self._check_labeling()
        order = np.argsort(self.triangles.ravel(), kind="stable")
        self._vert_tri_ptr = np.searchsorted(
            self.triangles.ravel()[order], np.arange(len(vertices) + 1)
        )
        self._vert_tri = order // 3
        self.records = [self._locate_patches(r) for r in _state["records"]]
        for arr in (self.vertices, self.triangles, self.tri_id, self.tri_parent,
                    self.tri_gen, self.areas, self.centroids, self.edges,
                    self.edge_tri, self.tri_edge):
            arr.setflags(write=False)

    # -- derived structure -------------------------------------------------

    def _build_edges(self):
        T = len(self.triangles)
        # local edge i is opposite local vertex i; edge 2 is the refinement edge
        pairs = np.empty((3 * T, 2), dtype=np.int64)
        for i, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
            pairs[i * T:(i + 1) * T, 0] = self.triangles[:, a]
            pairs[i * T:(i + 1) * T, 1] = self.triangles[:, b]
        keys = np.sort(pairs, axis=1)
        uniq, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        if np.any(counts > 2):
            raise MeshError("non-conforming: an edge is shared by more than two triangles")
        # duplicated triangles produce a repeated (sorted) vertex triple
        tri_keys = np.sort(self.triangles, axis=1)
        if len(np.unique(tri_keys, axis=0)) != T:
            raise MeshError("non-conforming: duplicated triangle")
        self.edges = uniq
        self.tri_edge = inverse.reshape(3, T).T.copy()
        edge_tri = np.full((len(uniq), 2), -1, dtype=np.int64)
        for loc in range(3):
            for t in range(T):
                e = self.tri_edge[t, loc]
                slot = 0 if edge_tri[e, 0] < 0 else 1
                edge_tri[e, slot] = t
        self.edge_tri = edge_tri
        self.edge_is_boundary = edge_tri[:, 1] < 0
        vb = np.zeros(len(self.vertices), dtype=bool)
        vb[self.edges[self.edge_is_boundary].ravel()] = True
        self.vertex_is_boundary = vb
        self.vertex_is_boundary.setflags(write=False)
        self.edge_is_boundary.setflags(write=False)

    def _refedge_key(self, t):
        return (min(self.triangles[t, 0], self.triangles[t, 1]),
                max(self.triangles[t, 0], self.triangles[t, 1]))

    def _check_labeling(self):
        """Reject labelings whose bisection closure cannot terminate.

        Closure recursion follows the chain t -> neighbor across t's
        refinement edge whenever that neighbor does not designate the
        shared edge itself; a cycle in this chain makes the recursion
        infinite.  Cycle-freeness is exactly what termination needs.
        """
        T = len(self.triangles)
        nxt = np.full(T, -1, dtype=np.int64)
        for t in range(T):
            e = self.tri_edge[t, 2]
            a, b = self.edge_tri[e]
            nb = b if a == t else a
            if nb >= 0 and self.tri_edge[nb, 2] != e:
                nxt[t] = nb
        color = np.zeros(T, dtype=np.int8)  # 0 unvisited, 1 on chain, 2 done
        for start in range(T):
            t = start
            chain = []
            while t >= 0 and color[t] == 0:
                color[t] = 1
                chain.append(t)
                t = nxt[t]
            if t >= 0 and color[t] == 1:
                raise MeshError(
                    "refinement-edge labeling violates the newest-vertex-bisection "
                    f"matching condition (cycle through triangle {t})"
                )
            for c in chain:
                color[c] = 2

    def triangles_at_vertex(self, x):
        """Sorted indices of the triangles having ``x`` as a vertex."""
        lo, hi = self._vert_tri_ptr[x], self._vert_tri_ptr[x + 1]
        return np.sort(self._vert_tri[lo:hi])

    def _locate_patches(self, rec):
        x = rec.vertex
        tris = self.triangles_at_vertex(x)
        side = (self.centroids[tris] - self.vertices[x]) @ rec.normal
        if np.any(side == 0.0):
            raise MeshError(f"degenerate patch split at vertex {x}")
        return NewVertexRecord(
            vertex=x,
            edge=rec.edge,
            tangent=rec.tangent,
            normal=rec.normal,
            plus_patch=tris[side > 0],
            minus_patch=tris[side < 0],
        )

    # -- basic queries ------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def triangle_coords(self):
        """(T, 3, 2) corner coordinates."""
        return self.vertices[self.triangles]

    def total_area(self):
        return float(self.areas.sum())

    def record_for_vertex(self):
        """Map vertex index -> record index, for split vertices only."""
        return {r.vertex: i for i, r in enumerate(self.records)}


# -- construction and I/O ----------------------------------------------------


def initial_lshape():
    """Six-triangle mesh of the L-shaped domain (-1,1)^2 minus [0,1]^2.

    Each of the three unit squares is split along a diagonal, and every
    refinement edge is that (longest) diagonal, which makes neighboring
    labels compatible and closure trivial on the first round.
    """
    vertices = np.array([
        [-1.0, -1.0], [0.0, -1.0], [1.0, -1.0],
        [-1.0, 0.0], [0.0, 0.0], [1.0, 0.0],
        [-1.0, 1.0], [0.0, 1.0],
    ])
    # (a, b, c) counterclockwise, refinement edge (a, b) = the square diagonal
    triangles = np.array([
        [3, 7, 6],   # top-left square, diagonal (-1,0)-(0,1)
        [7, 3, 4],
        [0, 4, 3],   # bottom-left square, diagonal (-1,-1)-(0,0)
        [4, 0, 1],
        [1, 5, 4],   # bottom-right square, diagonal (0,-1)-(1,0)
        [5, 1, 2],
    ])
    return Mesh(vertices, triangles)


PRESETS = {"lshape": initial_lshape}


def load_mesh(path):
    """Read a mesh from the whitespace text format.

    Header line ``ntri nvert``; then ``nvert`` lines ``x y``; then
    ``ntri`` lines ``v0 v1 v2 refedge`` where ``refedge`` names the edge
    opposite that vertex position.  ``#`` starts a comment.
    """
    tokens = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if len(tokens) < 2:
        raise MeshFormatError("missing header")
    try:
        ntri, nvert = int(tokens[0]), int(tokens[1])
    except ValueError as exc:
        raise MeshFormatError(f"bad header: {exc}") from None
    need = 2 + 2 * nvert + 4 * ntri
    if len(tokens) != need:
        raise MeshFormatError(f"expected {need} fields, found {len(tokens)}")
    try:
        flat = [float(t) for t in tokens[2:2 + 2 * nvert]]
        rest = [int(t) for t in tokens[2 + 2 * nvert:]]
    except ValueError as exc:
        raise MeshFormatError(f"bad field: {exc}") from None
    vertices = np.array(flat).reshape(nvert, 2)
    tri = np.array(rest).reshape(ntri, 4)
    return Mesh(vertices, tri[:, :3], tri[:, 3])


def save_mesh(mesh, path):
    """Write a mesh in the text format accepted by :func:`load_mesh`."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_triangles} {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c} 2\n")


# -- refinement ---------------------------------------------------------------


def bisect(mesh, marked):
    """Bisect every marked triangle at least once and restore conformity.

    Closure recursively bisects the neighbor across a refinement edge
    until the pair is compatibly labeled, then splits both at the shared
    midpoint; the result is the smallest conforming refinement under
    this rule.  Returns a new mesh; the input is untouched.
    """
    marked = sorted(int(m) for m in set(marked))
    if marked and (marked[0] < 0 or marked[-1] >= mesh.n_triangles):
        raise MeshError("marked triangle index out of range")

    verts = [tuple(v) for v in mesh.vertices]
    tris = [list(t) for t in mesh.triangles]
    tid = list(mesh.tri_id)
    tgen = list(mesh.tri_gen)
    alive = [True] * len(tris)
    lineage = dict(mesh._lineage)
    next_id = mesh._next_tri_id
    new_records = []

    edge_map = {}

    def ekey(a, b):
        return (a, b) if a < b else (b, a)

    for t, tri in enumerate(tris):
        for a, b in ((tri[1], tri[2]), (tri[2], tri[0]), (tri[0], tri[1])):
            edge_map.setdefault(ekey(a, b), set()).add(t)

    midpoint = {}

    def get_midpoint(a, b):
        key = ekey(a, b)
        if key in midpoint:
            return midpoint[key]
        pa, pb = verts[key[0]], verts[key[1]]
        verts.append(((pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0))
        m = len(verts) - 1
        midpoint[key] = m
        interior = len(edge_map[key]) == 2
        if interior:
            t = np.array(verts[key[1]]) - np.array(verts[key[0]])
            t = t / np.linalg.norm(t)
            nu = np.array([-t[1], t[0]])
            t.setflags(write=False)
            nu.setflags(write=False)
            new_records.append(NewVertexRecord(
                vertex=m, edge=key, tangent=t, normal=nu,
                plus_patch=np.empty(0, np.int64), minus_patch=np.empty(0, np.int64),
            ))
        return m

    def refedge_of(t):
        return ekey(tris[t][0], tris[t][1])

    def neighbor_across(t, key):
        for o in edge_map.get(key, ()):
            if o != t and alive[o]:
                return o
        return None

    def split_one(t, m):
        nonlocal next_id
        a, b, c = tris[t]
        alive[t] = False
        for ea, eb in ((a, b), (b, c), (c, a)):
            edge_map[ekey(ea, eb)].discard(t)
        for child in ((c, a, m), (b, c, m)):
            tris.append(list(child))
            alive.append(True)
            tid.append(next_id)
            tgen.append(tgen[t] + 1)
            lineage[next_id] = tid[t]
            next_id += 1
            ct = len(tris) - 1
            for ea, eb in ((child[0], child[1]), (child[1], child[2]),
                           (child[2], child[0])):
                edge_map.setdefault(ekey(ea, eb), set()).add(ct)

    def ensure_bisected(start):
        stack = [start]
        limit = len(tris) + mesh.n_triangles + 8
        while stack:
            if len(stack) > limit:
                raise MeshError("bisection closure does not terminate "
                                "(incompatible refinement-edge labeling)")
            t = stack[-1]
            if not alive[t]:
                stack.pop()
                continue
            key = refedge_of(t)
            nb = neighbor_across(t, key)
            if nb is not None and refedge_of(nb) != key:
                stack.append(nb)
                continue
            m = get_midpoint(*key)
            split_one(t, m)
            if nb is not None:
                split_one(nb, m)
            stack.pop()

    for t in marked:
        if alive[t]:
            ensure_bisected(t)

    keep = [i for i, a in enumerate(alive) if a]
    state = dict(
        tri_id=np.array([tid[i] for i in keep], dtype=np.int64),
        tri_parent=np.array([lineage.get(tid[i], -1) for i in keep], dtype=np.int64),
        tri_gen=np.array([tgen[i] for i in keep], dtype=np.int64),
        lineage=lineage,
        next_tri_id=next_id,
        n_initial_vertices=mesh.n_initial_vertices,
        records=list(mesh.records) + new_records,
    )
    return Mesh(np.array(verts), np.array([tris[i] for i in keep], dtype=np.int64),
                _state=state)


def uniform_refine(mesh, rounds=1):
    for _ in range(rounds):
        mesh = bisect(mesh, range(mesh.n_triangles))
    return mesh


# -- ancestry -----------------------------------------------------------------


def ancestor_indices(fine, coarse):
    """For each fine triangle, the index of its coarse ancestor (or self).

    Raises :class:`MeshError` if some fine triangle has no ancestor in
    the coarse mesh, i.e. ``fine`` does not refine ``coarse``.
    """
    coarse_pos = {int(i): p for p, i in enumerate(coarse.tri_id)}
    lineage = fine._lineage
    out = np.empty(fine.n_triangles, dtype=np.int64)
    for t, i in enumerate(fine.tri_id):
        i = int(i)
        while i not in coarse_pos:
            if i not in lineage:
                raise MeshError("mesh is not a refinement of the given coarse mesh")
            i = lineage[i]
        out[t] = coarse_pos[i]
    return out


def is_refinement_of(fine, coarse):
    """True iff every coarse triangle is the union of fine triangles."""
    try:
        anc = ancestor_indices(fine, coarse)
    except MeshError:
        return False
    return len(np.unique(anc)) == coarse.n_triangles
