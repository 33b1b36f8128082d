"""Elementwise displacement reconstruction and the improved eigenvalue.

On each element the reconstruction u* of degree m >= k+1 solves the
constrained local problem

    P_K u* = u_h                                    (L2 projection onto P_{k-1})
    (eps(u*), eps(v))_K = (A sigma_h, eps(v))_K     for all v with P_K v = 0,

realized as one saddle-point solve per element with a P_{k-1} Lagrange
multiplier; the projection constraint pins the rigid-body kernel of the
strain form.  The improved eigenvalue is the Rayleigh quotient

    lam* = -(div sigma_h, u*) / (u*, u*).
"""

from dataclasses import dataclass

import numpy as np

from .quadrature import map_to_triangles, triangle_rule
from .spaces import DisplacementSpace

_FROB = np.array([1.0, 1.0, 2.0])


class PostprocessError(Exception):
    pass


@dataclass
class ReconstructedField:
    """Elementwise polynomial displacement of degree m on the mesh.

    ``space`` is a discontinuous vector space of degree m (stored as a
    :class:`DisplacementSpace` of order m+1); ``coeffs`` the flat
    coefficient vector; ``constraint_error`` the largest relative
    violation of P_K u* = u_h over all elements.
    """

    space: DisplacementSpace
    coeffs: np.ndarray
    degree: int
    constraint_error: float
    solve_residual: float


def reconstruct(stress, displacement, model, sigma, u, m=None, quad_degree=None):
    """Elementwise reconstruction of all local problems at once."""
    k = stress.k
    m = k + 1 if m is None else m
    if m < k + 1:
        raise PostprocessError(f"reconstruction degree m = {m} must be >= k+1 = {k + 1}")
    mesh = stress.mesh
    vstar = DisplacementSpace(mesh, m + 1)
    degree = quad_degree if quad_degree is not None else 2 * m
    tq, tw = triangle_rule(degree)
    phys, w = map_to_triangles(mesh.triangle_coords(), tq, tw)

    mono_v = vstar.mono_at(phys)
    val_v = vstar.values_at(mono_v)         # (T, nq, nv, 2)
    eps_v = vstar.sym_grad_at(mono_v)       # (T, nq, nv, 3)
    mono_u = displacement.mono_at(phys)
    val_u = displacement.values_at(mono_u)  # (T, nq, nu, 2)

    S = np.einsum("tqac,c,tqbc,tq->tab", eps_v, _FROB, eps_v, w, optimize=True)
    C = np.einsum("tqid,tqad,tq->tia", val_u, val_v, w, optimize=True)

    mono_s = stress.mono_at(phys)
    Asig = np.einsum("tqlc,tl->tqc", stress.values_at(mono_s),
                     stress.gather(sigma)) @ model.matrix3.T
    rhs_e = np.einsum("tqac,c,tqc,tq->ta", eps_v, _FROB, Asig, w, optimize=True)
    uh = np.einsum("tqid,tl,tqld,tq->ti", val_u, displacement.gather(u),
                   val_u, w, optimize=True)

    T = mesh.n_triangles
    nv, nu = vstar.nloc, displacement.nloc
    n = nv + nu
    KK = np.zeros((T, n, n))
    KK[:, :nv, :nv] = S
    KK[:, :nv, nv:] = np.swapaxes(C, 1, 2)
    KK[:, nv:, :nv] = C
    rhs = np.concatenate([rhs_e, uh], axis=1)
    try:
        sol = np.linalg.solve(KK, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise PostprocessError(f"singular local reconstruction system: {exc}") from None
    ustar_loc = sol[:, :nv]

    resid = np.einsum("tab,tb->ta", KK, sol) - rhs
    scale = np.abs(rhs).max(axis=1) + np.abs(sol).max(axis=1)
    solve_res = float((np.abs(resid).max(axis=1) / np.maximum(scale, 1e-30)).max())
    cons = np.einsum("tia,ta->ti", C, ustar_loc) - uh
    cons_err = float((np.abs(cons).max(axis=1)
                      / np.maximum(np.abs(uh).max(axis=1), 1e-30)).max())

    coeffs = np.zeros(vstar.n_dofs)
    coeffs[vstar.gmap] = ustar_loc
    return ReconstructedField(space=vstar, coeffs=coeffs, degree=m,
                              constraint_error=cons_err, solve_residual=solve_res)


def lambda_star(stress, sigma, ustar, quad_degree=None):
    """Rayleigh quotient of the reconstructed displacement."""
    mesh = stress.mesh
    vstar = ustar.space
    degree = quad_degree if quad_degree is not None else 2 * vstar.degree
    tq, tw = triangle_rule(degree)
    phys, w = map_to_triangles(mesh.triangle_coords(), tq, tw)
    mono_s = stress.mono_at(phys)
    div_sig = np.einsum("tqld,tl->tqd", stress.div_at(mono_s), stress.gather(sigma))
    mono_v = vstar.mono_at(phys)
    uv = np.einsum("tqld,tl->tqd", vstar.values_at(mono_v), vstar.gather(ustar.coeffs))
    denom = np.einsum("tqd,tqd,tq->", uv, uv, w)
    if denom <= 0.0:
        raise PostprocessError("degenerate reconstruction: (u*, u*) = 0")
    numer = np.einsum("tqd,tqd,tq->", div_sig, uv, w)
    return float(-numer / denom)
