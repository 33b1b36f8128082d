"""Sparse operators of the discrete mixed eigenproblem.

The block system collects

* ``M_A``  compliance Gram matrix (A sigma_j, sigma_i),
* ``B``    divergence matrix (div sigma_j, u_i),
* ``M``    displacement mass matrix (block diagonal per element),
* ``c``    trace vector c_j = integral of tr(sigma_j), assembled for the
           Stokes compliance whose kernel (constant multiples of the
           identity) it later deflates.

All integrands are polynomial; quadrature is chosen exact to degree 2k.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .quadrature import map_to_triangles, triangle_rule
from .spaces import DisplacementSpace, StressSpace

_FROB = np.array([1.0, 1.0, 2.0])  # Frobenius weights in the 3-representation


@dataclass(frozen=True)
class ComplianceModel:
    """Pointwise linear compliance acting on symmetric matrices.

    ``stokes(nu)``:  A s = (s - tr(s)/2 * I) / (2 nu); positive
    semidefinite with kernel c(x)*I, the incompressible-flow case.
    ``elasticity(mu, lam)``: A s = (s - lam/(2mu+2lam) tr(s) I) / (2 mu);
    positive definite.
    """

    kind: str
    matrix3: np.ndarray
    positive_definite: bool
    params: dict = field(default_factory=dict)

    @staticmethod
    def stokes(nu=1.0):
        if nu <= 0:
            raise ValueError("viscosity nu must be positive")
        A = np.array([[0.5, -0.5, 0.0], [-0.5, 0.5, 0.0], [0.0, 0.0, 1.0]]) / (2 * nu)
        return ComplianceModel("stokes", A, False, {"nu": nu})

    @staticmethod
    def elasticity(mu=1.0, lam=1.0):
        if mu <= 0 or lam < 0:
            raise ValueError("need mu > 0 and lam >= 0")
        r = lam / (2 * mu + 2 * lam)
        A = np.array([[1 - r, -r, 0.0], [-r, 1 - r, 0.0], [0.0, 0.0, 1.0]]) / (2 * mu)
        return ComplianceModel("elasticity", A, True, {"mu": mu, "lam": lam})

    def apply(self, sig3):
        """Apply A to values in 3-representation (..., 3)."""
        return sig3 @ self.matrix3.T


@dataclass
class BlockSystem:
    M_A: sp.csr_matrix
    B: sp.csr_matrix
    M: sp.csr_matrix
    c: np.ndarray            # None unless the compliance is semidefinite
    stress: StressSpace
    displacement: DisplacementSpace
    model: ComplianceModel
    M_blocks: np.ndarray = None   # (T, nloc_u, nloc_u) per-element mass blocks

    @property
    def n_stress(self):
        return self.stress.n_dofs

    @property
    def n_displacement(self):
        return self.displacement.n_dofs


def _scatter(rows_loc, cols_loc, vals, shape):
    i = np.broadcast_to(rows_loc[:, :, None], vals.shape).ravel()
    j = np.broadcast_to(cols_loc[:, None, :], vals.shape).ravel()
    return sp.coo_matrix((vals.ravel(), (i, j)), shape=shape).tocsr()


def assemble(stress, displacement, model, quad_degree=None):
    """Assemble the block system on the common mesh of the two spaces."""
    if stress.mesh is not displacement.mesh:
        raise ValueError("spaces must be built on the same mesh")
    mesh = stress.mesh
    k = stress.k
    degree = quad_degree if quad_degree is not None else 2 * k
    if degree < 2 * k:
        raise ValueError(f"quadrature degree {degree} insufficient for 2k = {2 * k}")
    pts, wts = triangle_rule(degree)
    phys, w = map_to_triangles(mesh.triangle_coords(), pts, wts)

    mono_s = stress.mono_at(phys)
    sig = stress.values_at(mono_s)           # (T, nq, nloc_s, 3)
    div = stress.div_at(mono_s)              # (T, nq, nloc_s, 2)
    mono_u = displacement.mono_at(phys)
    uval = displacement.values_at(mono_u)    # (T, nq, nloc_u, 2)

    Asig = sig @ model.matrix3.T
    MA_loc = np.einsum("tqac,tqbc,c,tq->tab", sig, Asig, _FROB, w, optimize=True)
    MA_loc = 0.5 * (MA_loc + np.swapaxes(MA_loc, 1, 2))
    B_loc = np.einsum("tqid,tqad,tq->tia", uval, div, w, optimize=True)
    M_loc = np.einsum("tqid,tqjd,tq->tij", uval, uval, w, optimize=True)
    M_loc = 0.5 * (M_loc + np.swapaxes(M_loc, 1, 2))

    ns, nu = stress.n_dofs, displacement.n_dofs
    M_A = _scatter(stress.gmap, stress.gmap, MA_loc, (ns, ns))
    B = _scatter(displacement.gmap, stress.gmap, B_loc, (nu, ns))
    M = _scatter(displacement.gmap, displacement.gmap, M_loc, (nu, nu))

    c = None
    if not model.positive_definite:
        tr = sig[..., 0] + sig[..., 1]
        c_loc = np.einsum("tqa,tq->ta", tr, w)
        c = np.zeros(ns)
        np.add.at(c, stress.gmap.ravel(), c_loc.ravel())
    return BlockSystem(M_A=M_A, B=B, M=M, c=c, stress=stress,
                       displacement=displacement, model=model, M_blocks=M_loc)


def l2_project(displacement, fn, quad_degree=None):
    """L2 projection of ``fn(points, element) -> (n, 2)`` onto the space."""
    mesh = displacement.mesh
    degree = quad_degree if quad_degree is not None else 2 * displacement.k + 4
    pts, wts = triangle_rule(degree)
    phys, w = map_to_triangles(mesh.triangle_coords(), pts, wts)
    mono_u = displacement.mono_at(phys)
    uval = displacement.values_at(mono_u)
    M_loc = np.einsum("tqid,tqjd,tq->tij", uval, uval, w, optimize=True)
    fvals = np.stack([np.asarray(fn(phys[t], t)) for t in range(mesh.n_triangles)])
    rhs = np.einsum("tqid,tqd,tq->ti", uval, fvals, w, optimize=True)
    sol = np.linalg.solve(M_loc, rhs[:, :, None])[:, :, 0]
    out = np.zeros(displacement.n_dofs)
    out[displacement.gmap] = sol
    return out


def l2_norm_displacement(system, u):
    return float(np.sqrt(max(u @ (system.M @ u), 0.0)))


def a_norm_stress(system, s):
    return float(np.sqrt(max(s @ (system.M_A @ s), 0.0)))


def dump_matrix_market(system, directory):
    """Write the blocks in MatrixMarket coordinate format (debug aid)."""
    import os

    from scipy.io import mmwrite

    os.makedirs(directory, exist_ok=True)
    mmwrite(os.path.join(directory, "M_A.mtx"), system.M_A)
    mmwrite(os.path.join(directory, "B.mtx"), system.B)
    mmwrite(os.path.join(directory, "M.mtx"), system.M)
    if system.c is not None:
        mmwrite(os.path.join(directory, "c.mtx"), sp.coo_matrix(system.c[:, None]))
