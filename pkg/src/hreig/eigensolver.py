"""Shift-invert solver for the discrete mixed eigenvalue problem.

The block equations

    M_A s + B^T u = 0,        B s = -lambda M u,

are solved as the symmetric pencil K z = mu H z with mu = -lambda,

    K = [[M_A, B^T, c], [B, 0, 0], [c^T, 0, 0]],    H = diag(0, M, 0),

where the trace-constraint row c (present only for semidefinite
compliance) removes the known kernel direction: the constant identity
stress field has both zero compliance energy and zero divergence, so
without the constraint every shifted matrix K - sigma*H is singular.
Eigenvalues of the constrained pencil coincide with the nonzero
eigenvalues of the unconstrained problem and the multiplier vanishes.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(Exception):
    pass


@dataclass
class SolverConfig:
    shift: float = None      # target eigenvalue; defaults to 1.0
    tol: float = 1e-10       # residual acceptance tolerance (relative)
    max_iters: int = 500
    nev: int = 1
    seed: int = 0


@dataclass
class EigenPair:
    value: float
    stress: np.ndarray
    displacement: np.ndarray
    residuals: dict = field(default_factory=dict)
    index: int = 1           # 1-based position in the sorted spectrum
    identity_gap: float = 0.0  # | lambda - (A s, s) | / lambda


def build_pencil(system):
    """Sparse (K, H) of the (possibly constraint-augmented) pencil."""
    ns, nu = system.n_stress, system.n_displacement
    blocks = [
        [system.M_A, system.B.T],
        [system.B, None],
    ]
    if system.c is not None:
        cvec = sp.csr_matrix(system.c[:, None])
        blocks[0].append(cvec)
        blocks[1].append(None)
        blocks.append([cvec.T, None, None])
    K = sp.bmat(blocks, format="csc")
    parts = [sp.csr_matrix((ns, ns)), system.M]
    if system.c is not None:
        parts.append(sp.csr_matrix((1, 1)))
    H = sp.block_diag(parts, format="csc")
    return K, H


def _real_vector(z, tol=1e-8):
    i = int(np.argmax(np.abs(z)))
    z = z * np.exp(-1j * np.angle(z[i]))
    if np.abs(z.imag).max() > tol * np.abs(z.real).max():
        raise SolverError("eigenvector has a genuinely complex component")
    return z.real


def _shift_invert_operator(system, shift):
    """Application of (K - sigma*H)^{-1} at sigma = -shift.

    The factorized matrix is the shifted saddle block without the
    trace-constraint border: the dense border row would poison the
    fill-in ordering, so the matrix is instead made nonsingular by one
    diagonal entry added at a well-scaled degree of freedom of the known
    kernel field, and the bordered solve is recovered from two extra
    precomputed back-substitutions (Sherman-Morrison).
    """
    if shift == 0.0:
        raise SolverError("shift must be nonzero")
    ns, nu = system.n_stress, system.n_displacement
    A = sp.bmat([[system.M_A, system.B.T],
                 [system.B, shift * system.M]], format="csc")
    has_c = system.c is not None
    n = ns + nu + (1 if has_c else 0)

    if has_c:
        # pin the kernel at a stress dof carried by a large element so the
        # added entry is commensurate with its matrix row
        kernel = system.stress.identity_coefficients()
        diag = system.M_A.diagonal()
        j = int(np.argmax(np.where(np.abs(kernel) > 0.5, diag, -np.inf)))
        rho = float(np.abs(diag).max())
        A = (A + sp.coo_matrix(([rho], ([j], [j])), shape=A.shape)).tocsc()
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SolverError(f"factorization failed at shift {shift}: {exc}") from None

    if not has_c:
        def opinv(b):
            return lu.solve(b)
        return spla.LinearOperator((n, n), matvec=opinv), n

    c = np.concatenate([system.c, np.zeros(nu)])
    u1 = lu.solve(np.eye(1, ns + nu, j)[0])
    u2 = lu.solve(c)
    # bordered system [[A', c], [c^T, 0]] with A' = A - rho e_j e_j^T:
    # the scalars beta = z_j and gamma close the solve
    A22 = np.array([[1.0 - rho * u1[j], u2[j]],
                    [-rho * c @ u1, c @ u2]])

    def opinv(b):
        u0 = lu.solve(b[:ns + nu])
        beta, gamma = np.linalg.solve(A22, [u0[j], c @ u0 - b[-1]])
        z = np.empty(n)
        z[:ns + nu] = u0 + (rho * beta) * u1 - gamma * u2
        z[-1] = gamma
        return z

    return spla.LinearOperator((n, n), matvec=opinv), n


def solve_eigen(system, nev=None, cfg=None):
    """Smallest ``nev`` eigenvalues of the pencil, sorted ascending.

    Each returned pair is normalized to unit displacement L2 norm with a
    deterministic sign, and carries its block residual norms and the
    Rayleigh identity gap |lambda - (A s, s)|/lambda.
    """
    cfg = cfg or SolverConfig()
    nev = cfg.nev if nev is None else nev
    if nev < 1:
        raise SolverError("nev must be >= 1")
    nu = system.n_displacement
    if nev > nu:
        raise SolverError(f"requested {nev} eigenpairs but dim V_h = {nu}")
    ns = system.n_stress
    shift = cfg.shift if cfg.shift is not None else 1.0
    sigma = -float(shift)     # pencil eigenvalues are mu = -lambda
    opinv, n = _shift_invert_operator(system, float(shift))
    K, H = build_pencil(system)
    rng = np.random.default_rng(cfg.seed)
    v0 = rng.standard_normal(n)
    k = min(nev + 4, n - 2)
    try:
        # generalized shift-invert (ARPACK mode 3): the H-semi-inner
        # product suppresses spurious Ritz values from the large
        # infinite-eigenvalue subspace of the pencil
        mus, vecs = spla.eigs(K, k=k, M=H, sigma=sigma, OPinv=opinv,
                              which="LM", v0=v0, maxiter=cfg.max_iters, tol=0)
    except spla.ArpackNoConvergence as exc:
        raise SolverError(
            f"eigeniteration did not converge within {cfg.max_iters} iterations "
            f"at shift {shift}: {exc}"
        ) from None

    lams = -mus
    keep = (np.abs(lams.imag) <= 1e-8 * np.abs(lams.real)) & (lams.real > 1e-9)
    lams = lams.real[keep]
    vecs = vecs[:, keep]
    order = np.argsort(lams)
    lams = lams[order]
    vecs = vecs[:, order]
    if len(lams) < nev:
        raise SolverError(
            f"only {len(lams)} positive eigenvalues converged at shift {shift}, "
            f"wanted {nev}"
        )

    pairs = []
    Mscale = spla.norm(system.M_A) + spla.norm(system.B) + spla.norm(system.M)
    for i in range(nev):
        z = _real_vector(vecs[:, i])
        # purification: one application of (K - sigma H)^{-1} H projects out
        # components in the infinite-eigenvalue subspace of the pencil,
        # which plain Ritz extraction cannot see
        z = opinv(H @ z)
        s, u = z[:ns], z[ns:ns + nu]
        gamma = z[ns + nu] if system.c is not None else 0.0
        unorm = np.sqrt(u @ (system.M @ u))
        if unorm == 0.0:
            raise SolverError("eigenvector has zero displacement component")
        s, u, gamma = s / unorm, u / unorm, gamma / unorm
        j = int(np.argmax(np.abs(u)))
        if u[j] < 0:
            s, u, gamma = -s, -u, -gamma
        lam = float(lams[i])
        r1 = system.M_A @ s + system.B.T @ u
        if system.c is not None:
            r1 = r1 + system.c * gamma
        r2 = system.B @ s + lam * (system.M @ u)
        scale = Mscale * max(np.abs(s).max(), np.abs(u).max(), 1.0)
        residuals = {
            "stress": float(np.linalg.norm(r1) / scale),
            "displacement": float(np.linalg.norm(r2) / scale),
        }
        gap = abs(lam - s @ (system.M_A @ s)) / lam
        if max(residuals.values()) > cfg.tol:
            raise SolverError(
                f"eigenpair {i + 1} residual {max(residuals.values()):.2e} "
                f"exceeds tolerance {cfg.tol:.2e}"
            )
        pairs.append(EigenPair(value=lam, stress=s, displacement=u,
                               residuals=residuals, index=i + 1,
                               identity_gap=float(gap)))
    return pairs


def align(M, u, u_ref):
    """Sign s in {+1, -1} with (s*u, u_ref)_M >= 0; both on the same space."""
    ip = float(u @ (M @ u_ref))
    if ip == 0.0:
        raise SolverError("sign alignment is ambiguous: inner product is zero")
    return 1 if ip > 0 else -1
