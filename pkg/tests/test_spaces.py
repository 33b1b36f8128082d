import numpy as np
import pytest

from hreig.assembly import ComplianceModel, assemble
from hreig.mesh import (Mesh, ancestor_indices, bisect, initial_lshape,
                        uniform_refine)
from hreig.quadrature import segment_rule
from hreig.spaces import (SpaceError, build_displacement_space,
                          build_stress_space, eval_displacement, eval_stress,
                          interpolate_displacement, interpolate_stress,
                          n_monomials, prolong, prolongation_matrix)


def reference_triangle():
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                np.array([[0, 1, 2]]))


def true_stress_dim(mesh, k, n_split):
    """Unisolvent count: vertex values + edge normal components + bubbles."""
    return (3 * mesh.n_vertices + 2 * (k - 1) * mesh.n_edges
            + 3 * n_monomials(k - 2) * mesh.n_triangles + n_split)


def stress_rank(space, mesh):
    """Independent dimension check: rank of the PD-compliance Gram matrix."""
    model = ComplianceModel.elasticity(1.0, 1.0)
    disp = build_displacement_space(mesh, space.k)
    M_A = assemble(space, disp, model).M_A.toarray()
    ev = np.linalg.eigvalsh(M_A)
    return int(np.sum(ev > 1e-11 * ev.max()))


class TestDimensions:
    def test_single_triangle(self):
        m = reference_triangle()
        S = build_stress_space(m, 3)
        assert S.nb == 9
        # the span of all symmetric P3 fields on one triangle
        assert S.n_dofs == 30 == 3 * n_monomials(3)
        assert stress_rank(S, m) == S.n_dofs

    def test_lshape(self, lshape):
        S = build_stress_space(lshape, 3)
        assert S.n_dofs == true_stress_dim(lshape, 3, 0) == 130
        assert stress_rank(S, lshape) == 130

    def test_displacement_dims(self, lshape):
        assert build_displacement_space(reference_triangle(), 3).n_dofs == 12
        assert build_displacement_space(lshape, 3).n_dofs == 72
        assert build_displacement_space(reference_triangle(), 4).n_dofs == 20

    def test_k_validation(self, lshape):
        with pytest.raises(SpaceError):
            build_stress_space(lshape, 2)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_dim_bookkeeping_random_refinements(self, seed):
        rng = np.random.default_rng(seed)
        m = initial_lshape()
        for _ in range(3):
            k = int(rng.integers(1, m.n_triangles + 1))
            m = bisect(m, rng.choice(m.n_triangles, k, replace=False))
        S = build_stress_space(m, 3)
        assert S.n_split == len(m.records)
        assert S.n_dofs == true_stress_dim(m, 3, S.n_split)

    def test_rank_matches_dim_with_splits(self):
        m = bisect(initial_lshape(), [0, 2])
        S = build_stress_space(m, 3)
        assert S.n_split > 0
        assert stress_rank(S, m) == S.n_dofs

    def test_split_increment_across_one_bisect(self):
        m = initial_lshape()
        m2 = bisect(m, [0])  # bisects the pair at the shared diagonal
        S2 = build_stress_space(m2, 3)
        new_splits = len(m2.records)
        dV = m2.n_vertices - m.n_vertices
        dE = m2.n_edges - m.n_edges
        dT = m2.n_triangles - m.n_triangles
        assert S2.n_dofs - 130 == 3 * dV + 4 * dE + 9 * dT + new_splits

    def test_k4_dimension(self, lshape):
        S = build_stress_space(lshape, 4)
        assert S.nb == 3 * n_monomials(2) == 18
        assert S.n_dofs == true_stress_dim(lshape, 4, 0)
        assert stress_rank(S, lshape) == S.n_dofs


class TestEvaluation:
    def test_vertex_lagrange_property(self, lshape):
        S = build_stress_space(lshape, 3)
        tab = S.tabulate(0, lshape.vertices[lshape.triangles[0]], derivatives=0)
        # local basis 0..8: vertex-major, canonical components (m11, m22, m12)
        for lv in range(3):
            for c in range(3):
                want = np.zeros(3)
                want[c] = 1.0
                got = tab.values[lv, 3 * lv + c]
                assert np.allclose(got, want, atol=1e-11)
                other = tab.values[(lv + 1) % 3, 3 * lv + c]
                assert np.abs(other).max() < 1e-11

    def test_bubble_normal_trace_zero(self, lshape2):
        S = build_stress_space(lshape2, 3)
        sq, _ = segment_rule(8)
        for t in (0, 5):
            tab = None
            for le in range(3):
                e = lshape2.tri_edge[t, le]
                ev = lshape2.vertices[lshape2.edges[e]]
                pts = ev[0] + sq[:, None] * (ev[1] - ev[0])
                tab = S.tabulate(t, pts, derivatives=0)
                nrm = S.edge_normal[e]
                for b in range(S.nloc - S.nb, S.nloc):
                    v = tab.values[:, b]
                    tn = np.stack([v[:, 0] * nrm[0] + v[:, 2] * nrm[1],
                                   v[:, 2] * nrm[0] + v[:, 1] * nrm[1]], axis=1)
                    assert np.abs(tn).max() < 1e-12

    def test_stress_derivative_tables_vs_finite_differences(self, lshape2, rng):
        S = build_stress_space(lshape2, 3)
        el = 7
        pts = lshape2.centroids[el] + 0.02 * (rng.random((5, 2)) - 0.5)
        tab = eval_stress(S, el, pts, derivatives=2)
        h = 1e-6
        for d, dv in ((0, np.array([h, 0.0])), (1, np.array([0.0, h]))):
            fd = (S.tabulate(el, pts + dv, 0).values
                  - S.tabulate(el, pts - dv, 0).values) / (2 * h)
            scale = max(1.0, np.abs(tab.grad[..., d]).max())
            assert np.abs(fd - tab.grad[..., d]).max() < 1e-6 * scale
        # divergence consistency with grad
        div = np.stack([tab.grad[..., 0, 0] + tab.grad[..., 2, 1],
                        tab.grad[..., 2, 0] + tab.grad[..., 1, 1]], axis=-1)
        assert np.allclose(div, tab.divergence, atol=1e-12)
        # second derivatives against first-derivative differences
        fd = (S.tabulate(el, pts + np.array([h, 0]), 1).grad[..., 1]
              - S.tabulate(el, pts - np.array([h, 0]), 1).grad[..., 1]) / (2 * h)
        scale = max(1.0, np.abs(tab.hess[..., 2]).max())
        assert np.abs(fd - tab.hess[..., 2]).max() < 1e-5 * scale

    def test_displacement_sym_grad_vs_finite_differences(self, lshape2, rng):
        U = build_displacement_space(lshape2, 3)
        el = 3
        pts = lshape2.centroids[el] + 0.02 * (rng.random((4, 2)) - 0.5)
        tab = eval_displacement(U, el, pts)
        h = 1e-6
        vxp = U.tabulate(el, pts + [h, 0], 0).values
        vxm = U.tabulate(el, pts - [h, 0], 0).values
        vyp = U.tabulate(el, pts + [0, h], 0).values
        vym = U.tabulate(el, pts - [0, h], 0).values
        gx = (vxp - vxm) / (2 * h)
        gy = (vyp - vym) / (2 * h)
        eps_fd = np.stack([gx[..., 0], gy[..., 1],
                           0.5 * (gy[..., 0] + gx[..., 1])], axis=-1)
        assert np.abs(eps_fd - tab.sym_grad).max() < 1e-6 * max(
            1.0, np.abs(tab.sym_grad).max())

class TestConformity:
    def hdiv_jump(self, mesh, space, coeffs):
        sq, _ = segment_rule(8)
        worst = 0.0
        for e in range(mesh.n_edges):
            if mesh.edge_is_boundary[e]:
                continue
            t1, t2 = mesh.edge_tri[e]
            ev = mesh.vertices[mesh.edges[e]]
            pts = ev[0] + sq[:, None] * (ev[1] - ev[0])
            nrm = space.edge_normal[e]
            j = (space.evaluate(coeffs, t1, pts).values
                 - space.evaluate(coeffs, t2, pts).values)
            jn = np.stack([j[:, 0] * nrm[0] + j[:, 2] * nrm[1],
                           j[:, 2] * nrm[0] + j[:, 1] * nrm[1]], axis=1)
            worst = max(worst, float(np.abs(jn).max()))
        return worst

    def test_hdiv_conformity_random_fields(self, rng):
        m = uniform_refine(initial_lshape(), 2)
        S = build_stress_space(m, 3)
        assert S.n_split > 0
        for _ in range(20):
            co = rng.standard_normal(S.n_dofs)
            assert self.hdiv_jump(m, S, co) < 1e-10 * np.abs(co).max()

    def test_div_in_displacement_space(self, lshape2, stokes):
        S = build_stress_space(lshape2, 3)
        U = build_displacement_space(lshape2, 3)
        # div of every stress basis function is elementwise quadratic, so
        # its L2 projection onto V_h reproduces it; check via quadrature
        from hreig.quadrature import map_to_triangles, triangle_rule
        pts, wts = triangle_rule(8)
        phys, w = map_to_triangles(lshape2.triangle_coords(), pts, wts)
        mono_s = S.mono_at(phys)
        div = S.div_at(mono_s)
        mono_u = U.mono_at(phys)
        uval = U.values_at(mono_u)
        Mloc = np.einsum("tqid,tqjd,tq->tij", uval, uval, w)
        rhs = np.einsum("tqid,tqad,tq->tia", uval, div, w)
        coef = np.linalg.solve(Mloc, rhs)
        recon = np.einsum("tqid,tia->tqad", uval, coef)
        assert np.abs(recon - div).max() < 1e-12 * max(1.0, np.abs(div).max())


class TestSplitVertexSemantics:
    @pytest.fixture()
    def split_setup(self):
        mesh = bisect(initial_lshape(), [0])
        S = build_stress_space(mesh, 3)
        rec = mesh.records[0]
        return mesh, S, rec

    def one_sided(self, mesh, S, rec, side):
        """Coefficients of phi_x restricted to one patch times t t^T."""
        x = rec.vertex
        patch = set(rec.plus_patch if side > 0 else rec.minus_patch)
        tt = np.array([rec.tangent[0] ** 2, rec.tangent[1] ** 2,
                       rec.tangent[0] * rec.tangent[1]])

        def fn(pts, t):
            if t not in patch:
                return np.zeros((len(pts), 3))
            # cubic Lagrange hat of vertex x on triangle t
            tri = mesh.vertices[mesh.triangles[t]]
            lv = list(mesh.triangles[t]).index(x)
            T = np.array([tri[1] - tri[0], tri[2] - tri[0]]).T
            lam12 = np.linalg.solve(T, (pts - tri[0]).T).T
            lam = np.column_stack([1 - lam12.sum(axis=1), lam12])[:, lv]
            phi = 0.5 * lam * (3 * lam - 1) * (3 * lam - 2)
            return phi[:, None] * tt[None, :]

        return interpolate_stress(S, fn)

    def test_one_sided_values_and_trace(self, split_setup):
        mesh, S, rec = split_setup
        x = rec.vertex
        co = self.one_sided(mesh, S, rec, +1)
        xpt = mesh.vertices[x][None, :]
        tt = np.array([rec.tangent[0] ** 2, rec.tangent[1] ** 2,
                       rec.tangent[0] * rec.tangent[1]])
        for t in rec.plus_patch:
            got = S.evaluate(co, int(t), xpt).values[0]
            assert np.allclose(got, tt, atol=1e-10)
        for t in rec.minus_patch:
            got = S.evaluate(co, int(t), xpt).values[0]
            assert np.abs(got).max() < 1e-10
        # normal trace still continuous across the bisected parent edge
        sq, _ = segment_rule(6)
        conf = TestConformity()
        assert conf.hdiv_jump(mesh, S, co) < 1e-10

    def test_sum_recovery(self, split_setup):
        mesh, S, rec = split_setup
        plus = self.one_sided(mesh, S, rec, +1)
        minus = self.one_sided(mesh, S, rec, -1)
        both = plus + minus
        # equals the continuous hat function times t t^T
        x = rec.vertex
        tt = np.array([rec.tangent[0] ** 2, rec.tangent[1] ** 2,
                       rec.tangent[0] * rec.tangent[1]])

        def hat_field(pts, t):
            if x not in mesh.triangles[t]:
                return np.zeros((len(pts), 3))
            tri = mesh.vertices[mesh.triangles[t]]
            lv = list(mesh.triangles[t]).index(x)
            T = np.array([tri[1] - tri[0], tri[2] - tri[0]]).T
            lam12 = np.linalg.solve(T, (pts - tri[0]).T).T
            lam = np.column_stack([1 - lam12.sum(axis=1), lam12])[:, lv]
            phi = 0.5 * lam * (3 * lam - 1) * (3 * lam - 2)
            return phi[:, None] * tt[None, :]

        want = interpolate_stress(S, hat_field)
        assert np.abs(both - want).max() < 1e-12 * max(1.0, np.abs(want).max())


class TestProlongation:
    def test_untouched_dofs_identity(self, rng):
        m = uniform_refine(initial_lshape(), 1)
        marked = [0]
        m2 = bisect(m, marked)
        S1 = build_stress_space(m, 3)
        S2 = build_stress_space(m2, 3)
        P = prolongation_matrix(S1, S2)
        co = rng.standard_normal(S1.n_dofs)
        fo = P @ co
        # bubble coefficients of elements untouched by refinement persist
        anc = ancestor_indices(m2, m)
        for t2 in range(m2.n_triangles):
            a = int(anc[t2])
            if m2.tri_id[t2] == m.tri_id[a]:
                np.testing.assert_allclose(
                    fo[S2.gmap[t2]], co[S1.gmap[a]], atol=1e-11)

    def test_pointwise_agreement(self, rng):
        m = uniform_refine(initial_lshape(), 1)
        for _ in range(2):
            m2 = bisect(m, rng.choice(m.n_triangles, 6, replace=False))
            S1, S2 = build_stress_space(m, 3), build_stress_space(m2, 3)
            U1, U2 = (build_displacement_space(m, 3),
                      build_displacement_space(m2, 3))
            anc = ancestor_indices(m2, m)
            co = rng.standard_normal(S1.n_dofs)
            cu = rng.standard_normal(U1.n_dofs)
            fo = prolong(S1, S2, co)
            fu = prolong(U1, U2, cu)
            for t in range(0, m2.n_triangles, 3):
                pts = (m2.centroids[t]
                       + 0.05 * m2.areas[t] ** 0.5 * (rng.random((4, 2)) - 0.5))
                a = int(anc[t])
                np.testing.assert_allclose(
                    S2.evaluate(fo, t, pts).values,
                    S1.evaluate(co, a, pts).values,
                    atol=1e-10 * max(1.0, np.abs(co).max()))
                np.testing.assert_allclose(
                    U2.evaluate(fu, t, pts).values,
                    U1.evaluate(cu, a, pts).values,
                    atol=1e-10 * max(1.0, np.abs(cu).max()))
            m = m2

    def test_zero_maps_to_zero(self, lshape):
        fine = uniform_refine(lshape, 1)
        S1, S2 = build_stress_space(lshape, 3), build_stress_space(fine, 3)
        out = prolong(S1, S2, np.zeros(S1.n_dofs))
        assert np.abs(out).max() == 0.0

    def test_not_nested_rejected(self, lshape):
        fine = uniform_refine(lshape, 1)
        S1, S2 = build_stress_space(lshape, 3), build_stress_space(fine, 3)
        from hreig.mesh import MeshError
        with pytest.raises(MeshError):
            prolongation_matrix(S2, S1)

    def test_interpolation_roundtrip(self, lshape2, rng):
        S = build_stress_space(lshape2, 3)

        def field(pts, t):
            x, y = pts[:, 0], pts[:, 1]
            return np.stack([x ** 3 - 2 * x * y ** 2 + 1,
                             y ** 3 + x, x * y + y ** 2], axis=1)

        co = interpolate_stress(S, field)
        for t in range(0, lshape2.n_triangles, 5):
            pts = lshape2.centroids[t] + 0.05 * (rng.random((4, 2)) - 0.5)
            np.testing.assert_allclose(S.evaluate(co, t, pts).values,
                                       field(pts, t), atol=1e-10)

        U = build_displacement_space(lshape2, 3)

        def ufield(pts, t):
            return np.stack([pts[:, 0] ** 2 - pts[:, 1], pts[:, 0]], axis=1)

        cu = interpolate_displacement(U, ufield)
        pts = lshape2.centroids[4][None, :]
        np.testing.assert_allclose(U.evaluate(cu, 4, pts).values,
                                   ufield(pts, 4), atol=1e-12)
