"""SOLVE-ESTIMATE-MARK-REFINE driver with bulk (Doerfler) marking."""

import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import ComplianceModel, assemble
from .eigensolver import SolverConfig, align, solve_eigen
from .estimator import compute_estimator, eta_global, eta_star
from .mesh import bisect
from .postprocess import lambda_star, reconstruct
from .spaces import (build_displacement_space, build_stress_space,
                     prolongation_matrix)

CSV_HEADER = "level,ntri,dim_sigma,dim_v,lambda,lambda_star,eta,eta_star,nmarked,seconds"


class AdaptError(Exception):
    """Raised when a stage fails; carries the partial history."""

    def __init__(self, stage, cause, history):
        super().__init__(f"adaptive loop failed in {stage}: {cause}")
        self.stage = stage
        self.history = history


@dataclass
class AdaptConfig:
    theta: float = 0.5
    k: int = 3
    target_index: int = 1
    model: ComplianceModel = field(default_factory=ComplianceModel.stokes)
    max_displacement_dofs: int = 50000
    eta_tol: float = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    postprocess: bool = False
    reconstruction_degree: int = None     # defaults to k+1
    mark_with: str = "eta"                # "eta" or "eta_star"

    def validate(self):
        if not (0.0 < self.theta < 1.0):
            raise ValueError(f"bulk parameter theta must lie in (0, 1), got {self.theta}")
        if self.k < 3:
            raise ValueError("polynomial degree k must be >= 3")
        if self.target_index < 1:
            raise ValueError("target eigenvalue index must be >= 1")
        if self.max_displacement_dofs is None and self.eta_tol is None:
            raise ValueError("need a stopping rule: max displacement DOFs or eta tolerance")
        if self.mark_with not in ("eta", "eta_star"):
            raise ValueError(f"unknown marking estimator {self.mark_with!r}")
        if self.mark_with == "eta_star" and not self.postprocess:
            raise ValueError("marking with eta_star requires postprocessing enabled")
        return self


@dataclass
class LevelRecord:
    level: int
    ntri: int
    dim_sigma: int
    dim_v: int
    lam: float
    lam_star: float      # nan when postprocessing is off
    eta: float
    eta_star: float      # nan when postprocessing is off
    nmarked: int
    seconds: float


@dataclass
class LevelState:
    """Full per-level products, kept when ``collect`` is on."""

    level: int
    mesh: object
    lam: float
    sigma: np.ndarray
    displacement: np.ndarray
    lam_star: float = None
    marked: np.ndarray = None
    identity_gap: float = 0.0
    reconstruction_error: float = 0.0


class ConvergenceHistory:
    def __init__(self):
        self.records = []
        self.levels = []     # LevelState, only when collected

    def to_csv(self, path=None):
        def fmt(x):
            return "" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.12g}"

        lines = [CSV_HEADER]
        for r in self.records:
            lines.append(",".join([
                str(r.level), str(r.ntri), str(r.dim_sigma), str(r.dim_v),
                fmt(r.lam), fmt(r.lam_star), fmt(r.eta), fmt(r.eta_star),
                str(r.nmarked), f"{r.seconds:.3f}",
            ]))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @property
    def eigenvalues(self):
        return np.array([r.lam for r in self.records])


def mark_dorfler(report, theta):
    """Minimal element set carrying at least ``theta`` of the squared total.

    ``report`` may be an estimator report or a plain array of squared
    indicators.  Greedy selection in descending order is minimal in
    cardinality; ties break toward smaller element ids.
    """
    eta2 = np.asarray(getattr(report, "eta2_total", report), dtype=float)
    if eta2.size == 0:
        raise ValueError("empty estimator report")
    if not (0.0 < theta < 1.0):
        raise ValueError(f"bulk parameter theta must lie in (0, 1), got {theta}")
    total = eta2.sum()
    if total <= 0.0:
        # the empty set already satisfies theta * 0 <= 0
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(eta2)), -eta2))
    cum = np.cumsum(eta2[order])
    n = int(np.searchsorted(cum, theta * total, side="left")) + 1
    n = min(n, len(eta2))
    return np.sort(order[:n])


def afem_run(initial, cfg: AdaptConfig, collect=False, on_level=None):
    """Run the adaptive loop until the stopping rule triggers.

    Each level solves the eigenproblem, aligns the eigenfunction sign
    with the previous level, evaluates the estimator (and the
    postprocessed quantities when enabled), marks and refines.  The
    final level is the first one whose displacement dimension reaches
    the budget (or whose estimator drops below the tolerance).
    """
    cfg.validate()
    history = ConvergenceHistory()
    mesh = initial
    prev = None          # (displacement space, u coefficients, lambda)
    level = 0
    while True:
        t0 = time.perf_counter()
        stage = "solve"
        try:
            stress = build_stress_space(mesh, cfg.k)
            disp = build_displacement_space(mesh, cfg.k)
            system = assemble(stress, disp, cfg.model)
            shift = cfg.solver.shift
            if shift is None:
                shift = 0.1 * prev[2] if prev is not None else 1.0
            scfg = SolverConfig(shift=shift, tol=cfg.solver.tol,
                                max_iters=cfg.solver.max_iters,
                                nev=cfg.target_index, seed=cfg.solver.seed)
            pair = solve_eigen(system, cfg.target_index, scfg)[cfg.target_index - 1]
            sigma, u, lam = pair.stress, pair.displacement, pair.value
            if prev is not None:
                P = prolongation_matrix(prev[0], disp)
                s = align(system.M, u, P @ prev[1])
                sigma, u = s * sigma, s * u

            stage = "estimate"
            report = compute_estimator(stress, disp, cfg.model, sigma, u)
            eta = float(np.sqrt(eta_global(report)))
            lam_s, eta_s, star_report = float("nan"), float("nan"), None
            recon_err = 0.0
            if cfg.postprocess:
                ustar = reconstruct(stress, disp, cfg.model, sigma, u,
                                    m=cfg.reconstruction_degree)
                recon_err = ustar.constraint_error
                lam_s = lambda_star(stress, sigma, ustar)
                es2, star_report = eta_star(stress, cfg.model, sigma, ustar, lam_s)
                eta_s = float(np.sqrt(es2))

            stage = "mark"
            marked = mark_dorfler(
                star_report if cfg.mark_with == "eta_star" else report, cfg.theta
            )
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise AdaptError(stage, exc, history) from exc

        seconds = time.perf_counter() - t0
        history.records.append(LevelRecord(
            level=level, ntri=mesh.n_triangles, dim_sigma=stress.n_dofs,
            dim_v=disp.n_dofs, lam=lam, lam_star=lam_s, eta=eta, eta_star=eta_s,
            nmarked=len(marked), seconds=seconds,
        ))
        if collect:
            history.levels.append(LevelState(
                level=level, mesh=mesh, lam=lam, sigma=sigma, displacement=u,
                lam_star=None if np.isnan(lam_s) else lam_s, marked=marked,
                identity_gap=pair.identity_gap, reconstruction_error=recon_err,
            ))
        if on_level is not None:
            on_level(history.records[-1])

        done = len(marked) == 0
        if cfg.max_displacement_dofs is not None and disp.n_dofs >= cfg.max_displacement_dofs:
            done = True
        if cfg.eta_tol is not None and eta <= cfg.eta_tol:
            done = True
        if done:
            return history

        prev = (disp, u, lam)
        try:
            mesh = bisect(mesh, marked)
        except Exception as exc:  # noqa: BLE001
            raise AdaptError("refine", exc, history) from exc
        level += 1


def uniform_run(initial, cfg: AdaptConfig, levels, collect=False):
    """Uniform-refinement history: every element marked on every level."""
    cfg.validate()
    history = ConvergenceHistory()
    mesh = initial
    prev = None
    for level in range(levels + 1):
        t0 = time.perf_counter()
        stress = build_stress_space(mesh, cfg.k)
        disp = build_displacement_space(mesh, cfg.k)
        system = assemble(stress, disp, cfg.model)
        shift = cfg.solver.shift
        if shift is None:
            shift = 0.1 * prev[2] if prev is not None else 1.0
        scfg = SolverConfig(shift=shift, tol=cfg.solver.tol,
                            max_iters=cfg.solver.max_iters,
                            nev=cfg.target_index, seed=cfg.solver.seed)
        pair = solve_eigen(system, cfg.target_index, scfg)[cfg.target_index - 1]
        sigma, u, lam = pair.stress, pair.displacement, pair.value
        if prev is not None:
            P = prolongation_matrix(prev[0], disp)
            s = align(system.M, u, P @ prev[1])
            sigma, u = s * sigma, s * u
        report = compute_estimator(stress, disp, cfg.model, sigma, u)
        eta = float(np.sqrt(eta_global(report)))
        lam_s, eta_s = float("nan"), float("nan")
        if cfg.postprocess:
            ustar = reconstruct(stress, disp, cfg.model, sigma, u,
                                m=cfg.reconstruction_degree)
            lam_s = lambda_star(stress, sigma, ustar)
            es2, _ = eta_star(stress, cfg.model, sigma, ustar, lam_s)
            eta_s = float(np.sqrt(es2))
        history.records.append(LevelRecord(
            level=level, ntri=mesh.n_triangles, dim_sigma=stress.n_dofs,
            dim_v=disp.n_dofs, lam=lam, lam_star=lam_s, eta=eta, eta_star=eta_s,
            nmarked=mesh.n_triangles if level < levels else 0,
            seconds=time.perf_counter() - t0,
        ))
        if collect:
            history.levels.append(LevelState(
                level=level, mesh=mesh, lam=lam, sigma=sigma, displacement=u,
                lam_star=None if np.isnan(lam_s) else lam_s,
            ))
        prev = (disp, u, lam)
        if level < levels:
            mesh = bisect(mesh, range(mesh.n_triangles))
    return history


class AdaptiveEigensolver:
    """Estimator-style front end over :func:`afem_run`.

    Mirrors the fit/get_params/set_params protocol so the solver slots
    into pipeline tooling: hyperparameters in ``__init__``, computed
    results as trailing-underscore attributes after :meth:`fit`.
    """

    _PARAMS = ("theta", "k", "model", "nu", "mu", "lam", "max_dofs", "eta_tol",
               "postprocess", "mark_with", "target_index", "shift", "tol",
               "max_iters", "seed")

    def __init__(self, theta=0.5, k=3, model="stokes", nu=1.0, mu=1.0, lam=1.0,
                 max_dofs=50000, eta_tol=None, postprocess=False, mark_with="eta",
                 target_index=1, shift=None, tol=1e-10, max_iters=500, seed=0):
        for name in self._PARAMS:
            setattr(self, name, locals()[name])

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._PARAMS}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._PARAMS:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def _config(self):
        if self.model == "stokes":
            model = ComplianceModel.stokes(self.nu)
        elif self.model == "elasticity":
            model = ComplianceModel.elasticity(self.mu, self.lam)
        else:
            raise ValueError(f"unknown compliance model {self.model!r}")
        return AdaptConfig(
            theta=self.theta, k=self.k, target_index=self.target_index,
            model=model, max_displacement_dofs=self.max_dofs, eta_tol=self.eta_tol,
            solver=SolverConfig(shift=self.shift, tol=self.tol,
                                max_iters=self.max_iters, seed=self.seed),
            postprocess=self.postprocess, mark_with=self.mark_with,
        ).validate()

    def fit(self, mesh):
        self.history_ = afem_run(mesh, self._config())
        last = self.history_.records[-1]
        self.eigenvalue_ = last.lam
        self.eigenvalue_star_ = None if np.isnan(last.lam_star) else last.lam_star
        self.n_levels_ = len(self.history_.records)
        return self
