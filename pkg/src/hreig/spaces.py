"""Stress and displacement finite element spaces.

The stress space is the extended Hu-Zhang element of degree k >= 3:
elementwise symmetric P_k matrices, H(div)-conforming, continuous at
mesh vertices, enriched with the full per-element H(div) bubble space.
At every vertex created by bisecting an interior edge, continuity of the
tangential-tangential matrix component (in the frame of the bisected
edge) is relaxed into two one-sided degrees of freedom, one per patch,
which restores nestedness of the spaces under refinement.

A unisolvent degree-of-freedom set for this space is

* the 3 matrix components at every vertex (4 one-sided values at split
  vertices),
* the two components of ``tau nu`` at the k-1 interior Lagrange nodes of
  every edge,
* ``3 dim P_{k-2}`` bubble modes per element (an orthonormal basis of
  the kernel of the edge-trace constraints, found numerically).

Symmetric 2x2 matrices are carried as 3-vectors (m11, m22, m12); the
Frobenius pairing in this representation has weights (1, 1, 2).  Local
polynomials are stored as scaled-monomial coefficients with layout
(component, monomial).

The displacement space is discontinuous vector P_{k-1}, one independent
monomial block per element with layout (monomial, component).
"""

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh


class SpaceError(Exception):
    """Basis construction failed (bad degree or degenerate element)."""


def monomial_exponents(degree):
    return [(a, t - a) for t in range(degree + 1) for a in range(t + 1)]


def n_monomials(degree):
    return (degree + 1) * (degree + 2) // 2


def monomial_values(exps, xi):
    """Evaluate monomials at scaled points ``xi`` (..., 2) -> (..., NM)."""
    out = np.empty(xi.shape[:-1] + (len(exps),))
    for j, (a, b) in enumerate(exps):
        out[..., j] = xi[..., 0] ** a * xi[..., 1] ** b
    return out


def derivative_maps(exps):
    """Coefficient maps D1, D2 with coeff(df/dxi_i) = Di @ coeff(f)."""
    index = {e: j for j, e in enumerate(exps)}
    nm = len(exps)
    D1 = np.zeros((nm, nm))
    D2 = np.zeros((nm, nm))
    for j, (a, b) in enumerate(exps):
        if a > 0:
            D1[index[(a - 1, b)], j] = a
        if b > 0:
            D2[index[(a, b - 1)], j] = b
    return D1, D2


def _lattice(degree):
    """Barycentric lattice on the reference triangle, unisolvent for P_degree."""
    if degree == 0:
        return np.array([[1 / 3, 1 / 3]])
    return np.array([(i / degree, j / degree) for i in range(degree + 1)
                     for j in range(degree + 1 - i)])


def _nn_vec(n):
    """Functional vector of nu^T tau nu in the 3-representation."""
    return np.array([n[0] ** 2, n[1] ** 2, 2.0 * n[0] * n[1]])


def _tn_vec(t, n):
    """Functional vector of t^T tau nu in the 3-representation."""
    return np.array([t[0] * n[0], t[1] * n[1], t[0] * n[1] + t[1] * n[0]])


_CANONICAL_FUNCS = np.eye(3)


@dataclass
class BasisEval:
    """Per-element basis tables at a set of points."""

    values: np.ndarray          # stress (n, nloc, 3) / displacement (n, nloc, 2)
    divergence: np.ndarray = None   # stress only (n, nloc, 2)
    grad: np.ndarray = None         # stress first partials (n, nloc, 3, 2)
    hess: np.ndarray = None         # stress second partials (n, nloc, 3, 3): xx, yy, xy
    sym_grad: np.ndarray = None     # displacement strain (n, nloc, 3)


class StressSpace:
    """Extended Hu-Zhang stress space on a mesh; built by :func:`build_stress_space`."""

    def __init__(self, mesh: Mesh, k: int):
        if k < 3:
            raise SpaceError("stress space needs polynomial degree k >= 3")
        self.mesh = mesh
        self.k = k
        self.exps = monomial_exponents(k)
        self.nm = len(self.exps)
        self.ncoef = 3 * self.nm
        self.nb = 3 * n_monomials(k - 2)
        self.n_edge_nodes = k - 1
        self.nloc = 9 + 6 * self.n_edge_nodes + self.nb

        self.centroid = mesh.centroids
        self.hscale = np.sqrt(mesh.areas)
        self.D1, self.D2 = derivative_maps(self.exps)

        self._number_dofs()
        self._build_local_bases()

    # -- DOF numbering -------------------------------------------------------

    def _number_dofs(self):
        mesh = self.mesh
        V, E, T = mesh.n_vertices, mesh.n_edges, mesh.n_triangles
        ken = self.n_edge_nodes

        split_of = mesh.record_for_vertex()
        self.n_split = len(split_of)
        vert_base = np.empty(V, dtype=np.int64)
        vert_width = np.empty(V, dtype=np.int64)
        nxt = 0
        for v in range(V):
            vert_base[v] = nxt
            vert_width[v] = 4 if v in split_of else 3
            nxt += vert_width[v]
        self.n_vertex_dofs = nxt
        self.edge_base = nxt + 2 * ken * np.arange(E, dtype=np.int64)
        nxt += 2 * ken * E
        self.bubble_base = nxt + self.nb * np.arange(T, dtype=np.int64)
        nxt += self.nb * T
        self.n_dofs = nxt
        self.vert_base = vert_base
        self.vert_width = vert_width
        self._split_of = split_of

        # per (element, local vertex): global ids and functional vectors.
        # At a split vertex the functional order is (tt one-sided, nn, tn)
        # in the record's frame; elsewhere it is (m11, m22, m12).
        tri = mesh.triangles
        gmap = np.empty((T, self.nloc), dtype=np.int64)
        vfuncs = np.empty((T, 3, 3, 3))  # (t, lv, functional, 3-rep)
        for lv in range(3):
            for t in range(T):
                v = tri[t, lv]
                base = vert_base[v]
                if vert_width[v] == 3:
                    gmap[t, 3 * lv:3 * lv + 3] = (base, base + 1, base + 2)
                    vfuncs[t, lv] = _CANONICAL_FUNCS
                else:
                    rec = mesh.records[split_of[v]]
                    side = (mesh.centroids[t] - mesh.vertices[v]) @ rec.normal
                    tt_id = base if side > 0 else base + 1
                    gmap[t, 3 * lv:3 * lv + 3] = (tt_id, base + 2, base + 3)
                    tg, nu = rec.tangent, rec.normal
                    vfuncs[t, lv, 0] = _nn_vec(tg)
                    vfuncs[t, lv, 1] = _nn_vec(nu)
                    vfuncs[t, lv, 2] = _tn_vec(tg, nu)
        self.vfuncs = vfuncs

        # edge frames and node points (global orientation: low -> high index)
        ev = mesh.vertices[mesh.edges]
        tvec = ev[:, 1] - ev[:, 0]
        elen = np.linalg.norm(tvec, axis=1)
        tvec = tvec / elen[:, None]
        nvec = np.column_stack([-tvec[:, 1], tvec[:, 0]])
        self.edge_tangent = tvec
        self.edge_normal = nvec
        self.edge_length = elen
        s = np.arange(1, self.k) / self.k
        self.edge_nodes = (ev[:, None, 0, :]
                           + s[None, :, None] * (ev[:, 1] - ev[:, 0])[:, None, :])

        off = 9
        for le in range(3):
            e = mesh.tri_edge[:, le]
            cols = self.edge_base[e][:, None] + np.arange(2 * ken)[None, :]
            gmap[:, off:off + 2 * ken] = cols
            off += 2 * ken
        gmap[:, off:] = self.bubble_base[:, None] + np.arange(self.nb)[None, :]
        self.gmap = gmap

    # -- local bases ----------------------------------------------------------

    def _edge_funcs(self, e):
        """(..., 2, 3) functional vectors (nn, tn) for edge indices ``e``."""
        nn = _nn_vec(np.moveaxis(self.edge_normal[e], -1, 0))
        tn = _tn_vec(np.moveaxis(self.edge_tangent[e], -1, 0),
                     np.moveaxis(self.edge_normal[e], -1, 0))
        return np.stack([np.moveaxis(nn, 0, -1), np.moveaxis(tn, 0, -1)], axis=-2)

    def _build_local_bases(self):
        mesh = self.mesh
        T = mesh.n_triangles
        k, nm, ncoef = self.k, self.nm, self.ncoef
        coords = mesh.triangle_coords()
        ken = self.n_edge_nodes

        def scaled(pts):
            return (pts - self.centroid[:, None, :]) / self.hscale[:, None, None]

        # bubble modes: kernel of tau*nu evaluated at k+1 points per edge
        ntr = k + 1
        s = np.linspace(0.0, 1.0, ntr)
        C = np.zeros((T, 6 * ntr, ncoef))
        for le, (i0, i1) in enumerate(((1, 2), (2, 0), (0, 1))):
            a, b = coords[:, i0], coords[:, i1]
            evec = b - a
            nrm = np.column_stack([evec[:, 1], -evec[:, 0]])
            nrm = nrm / np.linalg.norm(nrm, axis=1)[:, None]
            pts = a[:, None, :] + s[None, :, None] * evec[:, None, :]
            mono = monomial_values(self.exps, scaled(pts))  # (T, ntr, nm)
            r0 = 2 * ntr * le
            blk = C[:, r0:r0 + 2 * ntr].reshape(T, ntr, 2, 3, nm)
            blk[:, :, 0, 0] = mono * nrm[:, None, 0, None]
            blk[:, :, 0, 2] = mono * nrm[:, None, 1, None]
            blk[:, :, 1, 1] = mono * nrm[:, None, 1, None]
            blk[:, :, 1, 2] = mono * nrm[:, None, 0, None]
        _, sv, vt = np.linalg.svd(C)
        tol = 1e-8 * sv[:, :1]
        if np.any(sv[:, ncoef - self.nb - 1] <= tol[:, 0]) or np.any(
            sv[:, ncoef - self.nb:] > tol
        ):
            raise SpaceError(
                "bubble space dimension mismatch: expected "
                f"{self.nb} = 3*dim P_{k - 2} per element"
            )
        self.bubbles = vt[:, ncoef - self.nb:, :]  # (T, nb, ncoef), orthonormal rows

        # local generalized Vandermonde: functionals x monomial coefficients
        L = np.zeros((T, self.nloc, ncoef))
        mono_v = monomial_values(self.exps, scaled(coords))  # (T, 3, nm)
        Lv = L[:, :9].reshape(T, 3, 3, 3, nm)
        Lv += self.vfuncs[:, :, :, :, None] * mono_v[:, :, None, None, :]

        off = 9
        for le in range(3):
            e = mesh.tri_edge[:, le]
            pts = self.edge_nodes[e]               # (T, ken, 2)
            mono = monomial_values(self.exps, scaled(pts))
            fn = self._edge_funcs(e)               # (T, 2, 3)
            blk = L[:, off:off + 2 * ken].reshape(T, ken, 2, 3, nm)
            blk += fn[:, None, :, :, None] * mono[:, :, None, None, :]
            off += 2 * ken
        L[:, off:] = self.bubbles
        self.n_nodal = off

        ident = np.broadcast_to(np.eye(self.nloc), (T, self.nloc, self.nloc)).copy()
        try:
            coeff = np.linalg.solve(L, ident)
        except np.linalg.LinAlgError as exc:
            raise SpaceError(f"stress basis construction failed: {exc}") from None
        # (T, 3, nm, nloc): monomial coefficients of each local basis function
        self.local_basis = coeff.reshape(T, 3, nm, self.nloc)

    # -- evaluation -------------------------------------------------------------

    def _scaled(self, element, pts):
        return (pts - self.centroid[element]) / self.hscale[element]

    def tabulate(self, element, pts, derivatives=1):
        """Tables of all local basis functions of one element at ``pts``.

        ``derivatives`` in {0, 1, 2} selects how many derivative tables
        to fill (divergence and grad need 1, hess needs 2).
        """
        pts = np.atleast_2d(pts)
        N = self.local_basis[element]      # (3, nm, nloc)
        h = self.hscale[element]
        mono = monomial_values(self.exps, self._scaled(element, pts))
        out = BasisEval(values=np.einsum("qj,cjl->qlc", mono, N))
        if derivatives >= 1:
            Nx = np.einsum("ij,cjl->cil", self.D1, N) / h
            Ny = np.einsum("ij,cjl->cil", self.D2, N) / h
            gx = np.einsum("qj,cjl->qlc", mono, Nx)
            gy = np.einsum("qj,cjl->qlc", mono, Ny)
            out.grad = np.stack([gx, gy], axis=-1)
            out.divergence = np.stack(
                [gx[..., 0] + gy[..., 2], gx[..., 2] + gy[..., 1]], axis=-1
            )
        if derivatives >= 2:
            Nxx = np.einsum("ij,cjl->cil", self.D1, Nx) / h
            Nyy = np.einsum("ij,cjl->cil", self.D2, Ny) / h
            Nxy = np.einsum("ij,cjl->cil", self.D2, Nx) / h
            out.hess = np.stack(
                [np.einsum("qj,cjl->qlc", mono, M) for M in (Nxx, Nyy, Nxy)], axis=-1
            )
        return out

    def evaluate(self, coeffs, element, pts, derivatives=0):
        """Evaluate a coefficient function on one element (same tables,
        basis axis contracted)."""
        tab = self.tabulate(element, pts, derivatives)
        g = coeffs[self.gmap[element]]
        out = BasisEval(values=np.einsum("qlc,l->qc", tab.values, g))
        if derivatives >= 1:
            out.divergence = np.einsum("qld,l->qd", tab.divergence, g)
            out.grad = np.einsum("qlcd,l->qcd", tab.grad, g)
        if derivatives >= 2:
            out.hess = np.einsum("qlcd,l->qcd", tab.hess, g)
        return out

    # batched variants used by assembly and the estimator ------------------------

    def mono_at(self, phys_pts):
        """Monomial tables at (T, nq, 2) physical points."""
        xi = (phys_pts - self.centroid[:, None, :]) / self.hscale[:, None, None]
        return monomial_values(self.exps, xi)

    def values_at(self, mono):
        return np.einsum("tqj,tcjl->tqlc", mono, self.local_basis)

    def div_at(self, mono):
        h = self.hscale[:, None, None, None]
        Nx = np.einsum("ij,tcjl->tcil", self.D1, self.local_basis) / h
        Ny = np.einsum("ij,tcjl->tcil", self.D2, self.local_basis) / h
        gx = np.einsum("tqj,tcjl->tqlc", mono, Nx)
        gy = np.einsum("tqj,tcjl->tqlc", mono, Ny)
        return np.stack([gx[..., 0] + gy[..., 2], gx[..., 2] + gy[..., 1]], axis=-1)

    def gather(self, coeffs):
        """Per-element local coefficient vectors (T, nloc)."""
        return coeffs[self.gmap]

    def local_poly(self, coeffs):
        """Per-element monomial coefficients (T, 3, nm) of a coefficient function."""
        return np.einsum("tcjl,tl->tcj", self.local_basis, self.gather(coeffs))

    def identity_coefficients(self):
        """Coefficients of the constant identity matrix field.

        For semidefinite (Stokes-type) compliance this spans the common
        kernel of the compliance and divergence operators.
        """
        x = np.zeros(self.n_dofs)
        for v in range(self.mesh.n_vertices):
            base = self.vert_base[v]
            if self.vert_width[v] == 3:
                x[base] = 1.0      # m11
                x[base + 1] = 1.0  # m22
            else:
                x[base] = 1.0      # t t^T component, both sides
                x[base + 1] = 1.0
                x[base + 2] = 1.0  # nu nu^T component
        for e in range(self.mesh.n_edges):
            x[self.edge_base[e] + 2 * np.arange(self.n_edge_nodes)] = 1.0
        # bubble coordinates: the nodal part alone does not reproduce the
        # constant because the bubble gauge is coefficient-orthogonality
        bub = self.bubbles[:, :, 0] + self.bubbles[:, :, self.nm]  # (T, nb)
        x[self.bubble_base[:, None] + np.arange(self.nb)[None, :]] = bub
        return x


class DisplacementSpace:
    """Discontinuous vector P_{k-1} displacement space (monomial blocks)."""

    def __init__(self, mesh: Mesh, k: int):
        if k < 1:
            raise SpaceError("displacement space needs k >= 1")
        self.mesh = mesh
        self.k = k
        self.degree = k - 1
        self.exps = monomial_exponents(self.degree)
        self.nm = len(self.exps)
        self.nloc = 2 * self.nm
        self.n_dofs = self.nloc * mesh.n_triangles
        self.centroid = mesh.centroids
        self.hscale = np.sqrt(mesh.areas)
        self.D1, self.D2 = derivative_maps(self.exps)
        T = mesh.n_triangles
        self.gmap = (self.nloc * np.arange(T, dtype=np.int64)[:, None]
                     + np.arange(self.nloc)[None, :])

    def _scaled(self, element, pts):
        return (pts - self.centroid[element]) / self.hscale[element]

    def tabulate(self, element, pts, derivatives=1):
        pts = np.atleast_2d(pts)
        mono = monomial_values(self.exps, self._scaled(element, pts))
        h = self.hscale[element]
        nq = len(pts)
        values = np.zeros((nq, self.nloc, 2))
        values[:, 0::2, 0] = mono
        values[:, 1::2, 1] = mono
        out = BasisEval(values=values)
        if derivatives >= 1:
            mx = mono @ self.D1 / h
            my = mono @ self.D2 / h
            sg = np.zeros((nq, self.nloc, 3))
            sg[:, 0::2, 0] = mx
            sg[:, 1::2, 1] = my
            sg[:, 0::2, 2] = 0.5 * my
            sg[:, 1::2, 2] = 0.5 * mx
            out.sym_grad = sg
        return out

    def evaluate(self, coeffs, element, pts, derivatives=0):
        tab = self.tabulate(element, pts, derivatives)
        g = coeffs[self.gmap[element]]
        out = BasisEval(values=np.einsum("qlc,l->qc", tab.values, g))
        if derivatives >= 1:
            out.sym_grad = np.einsum("qlc,l->qc", tab.sym_grad, g)
        return out

    def mono_at(self, phys_pts):
        xi = (phys_pts - self.centroid[:, None, :]) / self.hscale[:, None, None]
        return monomial_values(self.exps, xi)

    def values_at(self, mono):
        T, nq = mono.shape[:2]
        values = np.zeros((T, nq, self.nloc, 2))
        values[:, :, 0::2, 0] = mono
        values[:, :, 1::2, 1] = mono
        return values

    def sym_grad_at(self, mono):
        T, nq = mono.shape[:2]
        h = self.hscale[:, None, None]
        mx = np.einsum("tqj,ji->tqi", mono, self.D1) / h
        my = np.einsum("tqj,ji->tqi", mono, self.D2) / h
        sg = np.zeros((T, nq, self.nloc, 3))
        sg[:, :, 0::2, 0] = mx
        sg[:, :, 1::2, 1] = my
        sg[:, :, 0::2, 2] = 0.5 * my
        sg[:, :, 1::2, 2] = 0.5 * mx
        return sg

    def gather(self, coeffs):
        return coeffs[self.gmap]

    def local_poly(self, coeffs):
        """Per-element monomial coefficients (T, nm, 2)."""
        return self.gather(coeffs).reshape(self.mesh.n_triangles, self.nm, 2)


def build_stress_space(mesh, k=3):
    return StressSpace(mesh, k)


def build_displacement_space(mesh, k=3):
    return DisplacementSpace(mesh, k)


def eval_stress(space, element, points, derivatives=2):
    return space.tabulate(element, np.asarray(points, float), derivatives)


def eval_displacement(space, element, points):
    return space.tabulate(element, np.asarray(points, float), derivatives=1)


# -- interpolation (synthetic fields for tests) --------------------------------


def interpolate_stress(space, fn):
    """Coefficients of an elementwise-polynomial symmetric matrix field.

    ``fn(points, element) -> (n, 3)`` must be a polynomial of degree <= k
    on every element and representable in the space (conforming wherever
    the space is continuous); shared degrees of freedom are taken from
    the lowest-numbered adjacent element.
    """
    mesh = space.mesh
    coeffs = np.zeros(space.n_dofs)
    written = np.zeros(space.n_dofs, dtype=bool)
    lat = _lattice(space.k)
    ken = space.n_edge_nodes
    for t in range(mesh.n_triangles):
        tri = mesh.triangles[t]
        loc = np.empty(space.nloc)
        vals_v = np.asarray(fn(mesh.vertices[tri], t))  # (3, 3)
        loc[:9] = np.einsum("vfc,vc->vf", space.vfuncs[t], vals_v).ravel()
        off = 9
        for le in range(3):
            e = mesh.tri_edge[t, le]
            vals = np.asarray(fn(space.edge_nodes[e], t))
            fnu = _nn_vec(space.edge_normal[e])
            ftn = _tn_vec(space.edge_tangent[e], space.edge_normal[e])
            loc[off:off + 2 * ken] = np.stack([vals @ fnu, vals @ ftn], axis=1).ravel()
            off += 2 * ken
        v0 = mesh.vertices[tri[0]]
        e1 = mesh.vertices[tri[1]] - v0
        e2 = mesh.vertices[tri[2]] - v0
        pts = v0 + lat[:, :1] * e1 + lat[:, 1:] * e2
        V = monomial_values(space.exps, space._scaled(t, pts))
        target = np.linalg.solve(V, np.asarray(fn(pts, t))).T   # (3, nm)
        nodal = np.einsum("cjl,l->cj", space.local_basis[t, :, :, :off], loc[:off])
        rem = (target - nodal).ravel()
        bco = space.bubbles[t] @ rem
        resid = np.linalg.norm(rem - space.bubbles[t].T @ bco)
        if resid > 1e-8 * max(np.linalg.norm(target), 1.0):
            raise SpaceError(
                f"field is not representable on element {t} (residual {resid:.2e})"
            )
        loc[off:] = bco
        ids = space.gmap[t]
        new = ~written[ids]
        coeffs[ids[new]] = loc[new]
        written[ids[new]] = True
    return coeffs


def interpolate_displacement(space, fn):
    """Coefficients of an elementwise vector polynomial of degree <= k-1."""
    mesh = space.mesh
    lat = _lattice(space.degree)
    coeffs = np.zeros(space.n_dofs)
    for t in range(mesh.n_triangles):
        tri = mesh.triangles[t]
        v0 = mesh.vertices[tri[0]]
        e1 = mesh.vertices[tri[1]] - v0
        e2 = mesh.vertices[tri[2]] - v0
        pts = v0 + lat[:, :1] * e1 + lat[:, 1:] * e2
        V = monomial_values(space.exps, space._scaled(t, pts))
        sol = np.linalg.solve(V, np.asarray(fn(pts, t)))
        coeffs[space.gmap[t]] = sol.reshape(-1)
    return coeffs


# -- prolongation ---------------------------------------------------------------


def _element_lattice_points(mesh, degree):
    """(T, n_lat, 2) physical lattice points, unisolvent per element."""
    lat = _lattice(degree)
    coords = mesh.triangle_coords()
    v0 = coords[:, 0]
    e1 = coords[:, 1] - v0
    e2 = coords[:, 2] - v0
    return (v0[:, None, :] + lat[None, :, :1] * e1[:, None, :]
            + lat[None, :, 1:] * e2[:, None, :])


def prolongation_matrix(coarse, fine):
    """Sparse matrix carrying coarse coefficients to a nested fine space.

    Built by applying the fine degrees of freedom to the coarse basis
    functions; nestedness of the spaces makes this exact.  Shared fine
    degrees of freedom receive the value seen from their lowest-numbered
    adjacent element (one-sided where the space is one-sided).
    """
    import scipy.sparse as sp

    from .mesh import ancestor_indices

    if isinstance(coarse, StressSpace) != isinstance(fine, StressSpace):
        raise SpaceError("prolongation needs two spaces of the same kind")
    if coarse.k != fine.k:
        raise SpaceError("prolongation needs equal polynomial degree")
    anc = ancestor_indices(fine.mesh, coarse.mesh)
    meshf = fine.mesh
    T = meshf.n_triangles

    def scaled_c(pts):
        return ((pts - coarse.centroid[anc][:, None, :])
                / coarse.hscale[anc][:, None, None])

    if isinstance(coarse, DisplacementSpace):
        pts = _element_lattice_points(meshf, max(fine.degree, 1))
        Vf = fine.mono_at(pts)
        Vc = monomial_values(coarse.exps, scaled_c(pts))
        R = np.linalg.solve(Vf, Vc)                      # (T, nm_f, nm_c)
        Z = np.zeros((T, fine.nm, 2, coarse.nm, 2))
        Z[:, :, 0, :, 0] = R
        Z[:, :, 1, :, 1] = R
        Z = Z.reshape(T, fine.nloc, coarse.nloc)
        rows = np.repeat(fine.gmap.ravel(), coarse.nloc)
        cols = np.broadcast_to(coarse.gmap[anc][:, None, :],
                               (T, fine.nloc, coarse.nloc)).ravel()
        return sp.coo_matrix((Z.ravel(), (rows, cols)),
                             shape=(fine.n_dofs, coarse.n_dofs)).tocsr()

    ken = fine.n_edge_nodes
    ncoef_c = coarse.ncoef
    A = np.zeros((T, fine.nloc, ncoef_c))
    # fine vertex functionals applied to coarse (ancestor-frame) monomials
    mono_v = monomial_values(coarse.exps, scaled_c(meshf.vertices[meshf.triangles]))
    A[:, :9] = (fine.vfuncs[:, :, :, :, None]
                * mono_v[:, :, None, None, :]).reshape(T, 9, ncoef_c)
    off = 9
    for le in range(3):
        e = meshf.tri_edge[:, le]
        mono = monomial_values(coarse.exps, scaled_c(fine.edge_nodes[e]))
        fn = fine._edge_funcs(e)                         # (T, 2, 3)
        A[:, off:off + 2 * ken] = (fn[:, None, :, :, None]
                                   * mono[:, :, None, None, :]).reshape(
                                       T, 2 * ken, ncoef_c)
        off += 2 * ken
    # re-expand coarse monomials in the fine frame for the bubble rows
    pts = _element_lattice_points(meshf, fine.k)
    Vf = monomial_values(fine.exps, (pts - fine.centroid[:, None, :])
                         / fine.hscale[:, None, None])
    Vc = monomial_values(coarse.exps, scaled_c(pts))
    R = np.linalg.solve(Vf, Vc)                          # (T, nm_f, nm_c)
    Tmat = np.zeros((T, fine.ncoef, ncoef_c))
    for c in range(3):
        Tmat[:, c * fine.nm:(c + 1) * fine.nm, c * coarse.nm:(c + 1) * coarse.nm] = R
    Nf = fine.local_basis.reshape(T, fine.ncoef, fine.nloc)
    A[:, off:] = fine.bubbles @ (Tmat - Nf[:, :, :off] @ A[:, :off])
    Nc = coarse.local_basis.reshape(coarse.mesh.n_triangles, ncoef_c,
                                    coarse.nloc)[anc]
    Z = A @ Nc                                           # (T, nloc_f, nloc_c)

    flat_rows = fine.gmap.ravel()
    first = np.zeros(flat_rows.size, dtype=bool)
    first[np.unique(flat_rows, return_index=True)[1]] = True
    Zflat = Z.reshape(T * fine.nloc, coarse.nloc)[first]
    cols = np.broadcast_to(coarse.gmap[anc][:, None, :],
                           (T, fine.nloc, coarse.nloc)
                           ).reshape(T * fine.nloc, coarse.nloc)[first]
    rows = np.repeat(flat_rows[first], coarse.nloc)
    return sp.coo_matrix((Zflat.ravel(), (rows, cols.ravel())),
                         shape=(fine.n_dofs, coarse.n_dofs)).tocsr()


def prolong(coarse, fine, coeffs):
    """Represent a coarse coefficient vector in a nested fine space."""
    return prolongation_matrix(coarse, fine) @ np.asarray(coeffs, float)
