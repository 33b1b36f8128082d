"""Residual a posteriori error estimator and its postprocessed variant.

The local indicator on element K collects four groups::

    eta^2(K) = h_K^4 ||curl curl(A sigma_h)||_K^2
             + sum_{e in E(K)} ( h_K ||J_{e,1}||_e^2 + h_K^3 ||J_{e,2}||_e^2 )
             + h_K^2 ||A sigma_h - eps(u_h)||_K^2
             + sum_{e in E(K)} h_K ||[u_h]_e||_e^2

with h_K = |K|^(1/2), J_{e,1} the jump of the tangential-tangential
component of A sigma_h across e, and J_{e,2} the jump of
curl(A sigma_h) . t_e (on boundary edges the one-sided traces, and
J_{e,2} carries the extra tangential-derivative term).  Every element
sums over its own edge set, so shared edges deliberately contribute to
both neighbors; the global estimator is the plain element sum.

2D curl conventions: for a symmetric matrix field M,
curl M = (dM12/dx - dM11/dy, dM22/dx - dM12/dy), and
curl curl M = d2M11/dy2 - 2 d2M12/dxdy + d2M22/dx2.

The postprocessed indicator (see :mod:`hreig.postprocess`) is::

    eta_*^2 = ||A sigma_h - eps_h(u*)||^2
            + sum_K h_K^2 ||lam* u* + div sigma_h||_K^2
            + sum_e h_e^{-1} ||[u*]_e||_e^2

where each mesh edge is counted once; in the per-element records every
interior edge splits evenly between its two neighbors.
"""

from dataclasses import dataclass

import numpy as np

from .quadrature import map_to_triangles, segment_rule, triangle_rule
from .spaces import monomial_values

_FROB = np.array([1.0, 1.0, 2.0])


@dataclass
class EstimatorReport:
    eta2_curlcurl: np.ndarray
    eta2_edge: np.ndarray
    eta2_sym: np.ndarray
    eta2_jump: np.ndarray

    @property
    def eta2_total(self):
        return self.eta2_curlcurl + self.eta2_edge + self.eta2_sym + self.eta2_jump

    @property
    def n_elements(self):
        return len(self.eta2_curlcurl)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("element,eta2_curlcurl,eta2_edge,eta2_sym,eta2_jump,eta2_total\n")
            tot = self.eta2_total
            for i in range(self.n_elements):
                fh.write(f"{i},{self.eta2_curlcurl[i]:.12g},{self.eta2_edge[i]:.12g},"
                         f"{self.eta2_sym[i]:.12g},{self.eta2_jump[i]:.12g},"
                         f"{tot[i]:.12g}\n")


def eta_global(report):
    """Global squared estimator: plain sum of the element totals."""
    return float(report.eta2_total.sum())


def eta_subset(report, elements):
    """Squared estimator restricted to a set of element indices."""
    elements = np.asarray(sorted(elements), dtype=np.int64)
    if elements.size == 0:
        return 0.0
    if elements.min() < 0 or elements.max() >= report.n_elements:
        raise IndexError("unknown element id in subset")
    return float(report.eta2_total[elements].sum())


def _eval_poly(space, poly, elements, pts):
    """Evaluate per-element monomial polynomials at per-edge points.

    poly: (T, ..., nm); elements: (n,); pts: (n, nq, 2) -> (n, nq, ...).
    """
    xi = ((pts - space.centroid[elements][:, None, :])
          / space.hscale[elements][:, None, None])
    mono = monomial_values(space.exps, xi)          # (n, nq, nm)
    return np.einsum("eqj,e...j->eq...", mono, poly[elements])


def _edge_quadrature(mesh, lengths, degree):
    sq, sw = segment_rule(degree)
    ev = mesh.vertices[mesh.edges]
    pts = ev[:, None, 0, :] + sq[None, :, None] * (ev[:, 1] - ev[:, 0])[:, None, :]
    w = lengths[:, None] * sw[None, :]
    return pts, w


def compute_estimator(stress, displacement, model, sigma, u, quad_degree=None,
                      orient=None):
    """Element records of the residual estimator for one discrete pair.

    ``orient`` optionally flips the stored unit tangent of selected
    edges (array of +-1 per edge); the estimator is invariant under it.
    """
    mesh = stress.mesh
    hK = stress.hscale
    degree = quad_degree if quad_degree is not None else 2 * stress.k

    tang = stress.edge_tangent
    nrml = stress.edge_normal
    if orient is not None:
        flip = np.asarray(orient, float)[:, None]
        tang = tang * flip
        nrml = nrml * flip

    h1 = stress.hscale[:, None]
    Apoly = np.einsum("cd,tdj->tcj", model.matrix3, stress.local_poly(sigma))
    Ax = np.einsum("ij,tcj->tci", stress.D1, Apoly) / h1[:, None]
    Ay = np.einsum("ij,tcj->tci", stress.D2, Apoly) / h1[:, None]
    # curl components and curl curl scalar, as monomial coefficients
    c1 = Ax[:, 2] - Ay[:, 0]
    c2 = Ax[:, 1] - Ay[:, 2]
    cc = (np.einsum("ij,tj->ti", stress.D1, c2)
          - np.einsum("ij,tj->ti", stress.D2, c1)) / h1
    upoly = displacement.local_poly(u)              # (T, nm_u, 2)

    # volume terms
    tq, tw = triangle_rule(degree)
    phys, w = map_to_triangles(mesh.triangle_coords(), tq, tw)
    mono_s = stress.mono_at(phys)
    ccv = np.einsum("tqj,tj->tq", mono_s, cc)
    eta2_curl = hK ** 4 * np.einsum("tq,tq->t", ccv ** 2, w)

    Av = np.einsum("tqj,tcj->tqc", mono_s, Apoly)
    mono_u = displacement.mono_at(phys)
    epsv = np.einsum("tqlc,tl->tqc", displacement.sym_grad_at(mono_u),
                     displacement.gather(u))
    diff = Av - epsv
    eta2_sym = hK ** 2 * np.einsum("tqc,c,tq->t", diff ** 2, _FROB, w)

    # edge integrals, each computed once per edge
    ept, ew = _edge_quadrature(mesh, stress.edge_length, degree)
    E = mesh.n_edges
    left = mesh.edge_tri[:, 0]
    right = mesh.edge_tri[:, 1]
    interior = ~mesh.edge_is_boundary

    def side_tables(elements):
        els = np.asarray(elements)
        A = _eval_poly(stress, Apoly, els, ept)     # (E, nq, 3)
        Axv = _eval_poly(stress, Ax, els, ept)
        Ayv = _eval_poly(stress, Ay, els, ept)
        uv = np.einsum("eqj,ejd->eqd",
                       monomial_values(displacement.exps,
                                       (ept - displacement.centroid[els][:, None])
                                       / displacement.hscale[els][:, None, None]),
                       upoly[els])
        return A, Axv, Ayv, uv

    A_l, Ax_l, Ay_l, u_l = side_tables(left)
    A_r, Ax_r, Ay_r, u_r = side_tables(np.where(interior, right, left))

    tt = np.stack([tang[:, 0] ** 2, tang[:, 1] ** 2,
                   2.0 * tang[:, 0] * tang[:, 1]], axis=1)
    tnu = np.stack([tang[:, 0] * nrml[:, 0], tang[:, 1] * nrml[:, 1],
                    tang[:, 0] * nrml[:, 1] + tang[:, 1] * nrml[:, 0]], axis=1)

    def curl_dot_t(Axv, Ayv):
        cc1 = Axv[..., 2] - Ayv[..., 0]
        cc2 = Axv[..., 1] - Ayv[..., 2]
        return cc1 * tang[:, None, 0] + cc2 * tang[:, None, 1]

    j1 = np.einsum("eqc,ec->eq", A_l, tt)
    j1_other = np.einsum("eqc,ec->eq", A_r, tt)
    j1 = np.where(interior[:, None], j1 - j1_other, j1)

    j2 = curl_dot_t(Ax_l, Ay_l)
    j2_int = j2 - curl_dot_t(Ax_r, Ay_r)
    # boundary: curl(A s).t - d_t( (A s) t . nu ), one-sided
    dgx = np.einsum("eqc,ec->eq", Ax_l, tnu)
    dgy = np.einsum("eqc,ec->eq", Ay_l, tnu)
    j2_bd = j2 - (dgx * tang[:, None, 0] + dgy * tang[:, None, 1])
    j2 = np.where(interior[:, None], j2_int, j2_bd)

    ju = np.where(interior[:, None, None], u_l - u_r, u_l)

    I1 = np.einsum("eq,eq->e", j1 ** 2, ew)
    I2 = np.einsum("eq,eq->e", j2 ** 2, ew)
    Iu = np.einsum("eqd,eq->e", ju ** 2, ew)

    T = mesh.n_triangles
    edge_sum_1 = I1[mesh.tri_edge].sum(axis=1)
    edge_sum_2 = I2[mesh.tri_edge].sum(axis=1)
    edge_sum_u = Iu[mesh.tri_edge].sum(axis=1)
    eta2_edge = hK * edge_sum_1 + hK ** 3 * edge_sum_2
    eta2_jump = hK * edge_sum_u

    return EstimatorReport(
        eta2_curlcurl=eta2_curl,
        eta2_edge=eta2_edge,
        eta2_sym=eta2_sym,
        eta2_jump=eta2_jump,
    )


@dataclass
class StarReport:
    eta2_strain: np.ndarray     # ||A sigma - eps(u*)||^2 per element
    eta2_residual: np.ndarray   # h_K^2 ||lam* u* + div sigma||^2 per element
    eta2_jump: np.ndarray       # edge term, interior edges split 50/50

    @property
    def eta2_total(self):
        return self.eta2_strain + self.eta2_residual + self.eta2_jump

    @property
    def n_elements(self):
        return len(self.eta2_strain)


def eta_star(stress, model, sigma, ustar, lam_star, quad_degree=None):
    """Postprocessed error indicator; returns (eta_star^2, StarReport)."""
    mesh = stress.mesh
    vstar = ustar.space
    hK = stress.hscale
    degree = quad_degree if quad_degree is not None else 2 * vstar.degree + 2

    tq, tw = triangle_rule(degree)
    phys, w = map_to_triangles(mesh.triangle_coords(), tq, tw)

    Apoly = np.einsum("cd,tdj->tcj", model.matrix3, stress.local_poly(sigma))
    mono_s = stress.mono_at(phys)
    Av = np.einsum("tqj,tcj->tqc", mono_s, Apoly)
    mono_v = vstar.mono_at(phys)
    eps_star = np.einsum("tqlc,tl->tqc", vstar.sym_grad_at(mono_v),
                         vstar.gather(ustar.coeffs))
    diff = Av - eps_star
    eta2_strain = np.einsum("tqc,c,tq->t", diff ** 2, _FROB, w)

    div_sig = np.einsum("tqld,tl->tqd", stress.div_at(mono_s),
                        stress.gather(sigma))
    ustar_v = np.einsum("tqld,tl->tqd", vstar.values_at(mono_v),
                        vstar.gather(ustar.coeffs))
    res = lam_star * ustar_v + div_sig
    eta2_res = hK ** 2 * np.einsum("tqd,tq->t", res ** 2, w)

    ept, ew = _edge_quadrature(mesh, stress.edge_length, degree)
    interior = ~mesh.edge_is_boundary
    upoly = vstar.local_poly(ustar.coeffs)
    left = mesh.edge_tri[:, 0]
    right = np.where(interior, mesh.edge_tri[:, 1], left)

    def side_vals(els):
        xi = ((ept - vstar.centroid[els][:, None])
              / vstar.hscale[els][:, None, None])
        mono = monomial_values(vstar.exps, xi)
        return np.einsum("eqj,ejd->eqd", mono, upoly[els])

    ju = side_vals(left)
    ju = np.where(interior[:, None, None], ju - side_vals(right), ju)
    Ie = np.einsum("eqd,eq->e", ju ** 2, ew) / stress.edge_length

    share = np.where(interior, 0.5, 1.0) * Ie
    eta2_jump = share[mesh.tri_edge].sum(axis=1)

    report = StarReport(eta2_strain=eta2_strain, eta2_residual=eta2_res,
                        eta2_jump=eta2_jump)
    return float(report.eta2_total.sum()), report
