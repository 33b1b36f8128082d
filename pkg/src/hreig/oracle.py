"""Independent brute-force verifiers backing the test suite.

Everything here is deliberately naive: dense matrices, per-element
Python loops, a different quadrature order, QZ instead of shift-invert,
explicit nullspace projection instead of a Lagrange multiplier row.
Agreement between these routes and the production code is the main
correctness evidence of the package.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as dla

from .quadrature import map_to_triangles, triangle_rule
from .spaces import interpolate_stress

_FROB = np.array([1.0, 1.0, 2.0])


@dataclass
class DenseSystem:
    M_A: np.ndarray
    B: np.ndarray
    M: np.ndarray
    c: np.ndarray            # None for positive definite compliance
    nullspace: np.ndarray    # columns: common kernel of the unconstrained pencil
    model: object


def assemble_dense(stress, displacement, model, quad_degree=None, max_dim=2000):
    """Re-assemble the block system densely, one element at a time."""
    n = stress.n_dofs + displacement.n_dofs
    if n > max_dim:
        raise ValueError(f"dense oracle limited to {max_dim} unknowns, got {n}")
    mesh = stress.mesh
    degree = quad_degree if quad_degree is not None else 2 * stress.k + 3
    pts, wts = triangle_rule(degree)
    phys, w = map_to_triangles(mesh.triangle_coords(), pts, wts)

    ns, nu = stress.n_dofs, displacement.n_dofs
    M_A = np.zeros((ns, ns))
    B = np.zeros((nu, ns))
    M = np.zeros((nu, nu))
    c = np.zeros(ns)
    for t in range(mesh.n_triangles):
        tab_s = stress.tabulate(t, phys[t], derivatives=1)
        tab_u = displacement.tabulate(t, phys[t], derivatives=0)
        gs = stress.gmap[t]
        gu = displacement.gmap[t]
        for q in range(len(w[t])):
            sig = tab_s.values[q]            # (nloc_s, 3)
            Asig = model.apply(sig)
            div = tab_s.divergence[q]        # (nloc_s, 2)
            uv = tab_u.values[q]             # (nloc_u, 2)
            wq = w[t][q]
            M_A[np.ix_(gs, gs)] += wq * (sig * _FROB) @ Asig.T
            B[np.ix_(gu, gs)] += wq * uv @ div.T
            M[np.ix_(gu, gu)] += wq * uv @ uv.T
            c[gs] += wq * (sig[:, 0] + sig[:, 1])
    M_A = 0.5 * (M_A + M_A.T)
    M = 0.5 * (M + M.T)
    if model.positive_definite:
        null = np.empty((ns, 0))
        cvec = None
    else:
        # the constant identity field spans the common pencil kernel
        delta = interpolate_stress(
            stress, lambda p, t: np.tile([1.0, 1.0, 0.0], (len(p), 1))
        )
        null = delta[:, None]
        cvec = c
    return DenseSystem(M_A=M_A, B=B, M=M, c=cvec, nullspace=null, model=model)


def dense_eigensolve(dense, nev=None):
    """All finite positive pencil eigenvalues by dense QZ, ascending.

    The known kernel is removed by explicit orthogonal projection, a
    deliberately different deflation than the production solver's
    Lagrange-multiplier row.
    """
    ns, nu = dense.M_A.shape[0], dense.M.shape[0]
    n = ns + nu
    K = np.zeros((n, n))
    K[:ns, :ns] = dense.M_A
    K[:ns, ns:] = dense.B.T
    K[ns:, :ns] = dense.B
    H = np.zeros((n, n))
    H[ns:, ns:] = dense.M

    if dense.nullspace.shape[1]:
        Z = np.zeros((n, dense.nullspace.shape[1]))
        Z[:ns] = dense.nullspace
        Q = dla.null_space(Z.T)
        K = Q.T @ K @ Q
        H = Q.T @ H @ Q

    mus = dla.eig(K, H, right=False)
    mus = mus[np.isfinite(mus)]
    lams = -mus
    lams = lams.real[np.abs(lams.imag) <= 1e-8 * (1.0 + np.abs(lams.real))]
    lams = np.sort(lams[lams > 1e-9])
    return lams if nev is None else lams[:nev]


def schur_eigensolve(dense, nev=None):
    """Second dense route for positive definite compliance:
    B M_A^{-1} B^T u = lambda M u."""
    if dense.nullspace.shape[1]:
        raise ValueError("Schur route requires positive definite compliance")
    S = dense.B @ dla.solve(dense.M_A, dense.B.T, assume_a="pos")
    lams = dla.eigh(0.5 * (S + S.T), dense.M, eigvals_only=True)
    lams = np.sort(lams[lams > 1e-9])
    return lams if nev is None else lams[:nev]


@dataclass
class Extrapolation:
    value: float        # extrapolated limit, or None if not computable
    rate: float         # estimated geometric ratio per level
    monotone: bool


def richardson_reference(values):
    """Extrapolate a geometrically converging sequence lambda + c*rho^l.

    Uses the last three entries; refuses to extrapolate (value None)
    when the sequence is not monotone.
    """
    values = np.asarray(values, dtype=float)
    if len(values) < 3:
        raise ValueError("need at least three levels to extrapolate")
    d = np.diff(values)
    if np.all(d == 0):
        return Extrapolation(value=float(values[-1]), rate=0.0, monotone=True)
    monotone = bool(np.all(d > 0) or np.all(d < 0))
    if not monotone:
        return Extrapolation(value=None, rate=float("nan"), monotone=False)
    l0, l1, l2 = values[-3:]
    rho = (l2 - l1) / (l1 - l0)
    if not (0 < abs(rho) < 1):
        return Extrapolation(value=None, rate=float(rho), monotone=monotone)
    limit = l2 + (l2 - l1) * rho / (1.0 - rho)
    return Extrapolation(value=float(limit), rate=float(rho), monotone=monotone)
