"""Nonnegative least squares over grasp-matrix cones: projection and distribution.

Both operations reduce to

    min_lambda || G lambda - w ||^2   s.t. lambda >= 0

solved by a Lawson-Hanson active-set method on the normal equations (problems
are 6 x N with N up to ~100, so the passive set stays tiny and each inner
solve is a <=8x8 linear system).  The projection front-end maps a planned
gravity-folded wrench onto the feasible cone; the distribution front-end
splits a desired wrench into per-limb contact wrenches.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contacts import DEFAULT_MARGIN, GraspMatrix, assemble_grasp_matrix
from .core import ResultantWrench, RobotParams, WrenchFrame, _cross3

__all__ = [
    "IterationLimit",
    "LimbWrench",
    "NnlsProblem",
    "NnlsSolution",
    "distribute_desired_wrench",
    "project_planned_wrench",
    "solve_nnls",
]


class IterationLimit(RuntimeError):
    """Active-set NNLS failed to terminate (pathological cycling)."""

    def __init__(self, iterations: int, n_columns: int, kkt: float):
        super().__init__(
            f"NNLS hit the iteration limit ({iterations} iterations, "
            f"{n_columns} columns, kkt violation {kkt:.3e})"
        )
        self.iterations = iterations
        self.n_columns = n_columns
        self.kkt = kkt


@dataclass(frozen=True)
class NnlsProblem:
    """min ||G lambda - target||^2 (+ sum_i (column_weights_i lambda_i)^2), lambda >= 0."""

    G: np.ndarray
    target: np.ndarray
    column_weights: np.ndarray | None = None

    def __post_init__(self):
        G = np.ascontiguousarray(np.asarray(self.G, dtype=float))
        if G.ndim != 2 or G.shape[1] < 1:
            raise ValueError(f"G must be a 2-D matrix with >= 1 column, got {G.shape}")
        if not np.all(np.isfinite(G)):
            raise ValueError("G must be finite")
        t = np.asarray(self.target, dtype=float).reshape(G.shape[0])
        if not np.all(np.isfinite(t)):
            raise ValueError("target must be finite")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "target", t)
        if self.column_weights is not None:
            cw = np.asarray(self.column_weights, dtype=float).reshape(G.shape[1])
            if np.any(cw < 0.0) or not np.all(np.isfinite(cw)):
                raise ValueError("column_weights must be finite and >= 0")
            object.__setattr__(self, "column_weights", cw)


@dataclass(frozen=True)
class NnlsSolution:
    """Optimal lambda with KKT diagnostics.

    residual is G lambda - target (regularization excluded); kkt_violation is
    the largest complementarity/stationarity violation of the solved
    (possibly regularized) problem.
    """

    lam: np.ndarray
    residual: np.ndarray
    kkt_violation: float
    iterations: int

    @property
    def objective(self) -> float:
        return float(self.residual @ self.residual)


def solve_nnls(
    problem: NnlsProblem,
    gram: np.ndarray | None = None,
    warm_start: np.ndarray | None = None,
) -> NnlsSolution:
    """Lawson-Hanson active-set NNLS.

    Deterministic for a fixed column order (ties in the entering-column pick
    resolve to the lowest index).  `gram` lets callers reuse a precomputed
    G'G when the same matrix is solved against many targets.

    `warm_start` seeds the passive set from a previous solution's lambda
    (same column layout); control loops solving a slowly drifting target
    against a fixed grasp matrix typically finish in one or two passive
    solves instead of rebuilding the support column by column.  The
    termination test is unchanged, so the result satisfies the same KKT
    tolerance as a cold solve.

    Terminates when no inactive column's gradient beats
    kkt_tol = 1e-8 * (1 + ||G'w||_inf); raises IterationLimit after 10 N
    passive-set solves (cycling is pathological for these small cones).
    """
    G = problem.G
    w = problem.target
    n = G.shape[1]
    gtg = gram if gram is not None else G.T @ G
    gtw = G.T @ w
    if problem.column_weights is not None:
        # Tikhonov term folds into the normal equations only
        gtg = gtg + np.diag(problem.column_weights ** 2)
    kkt_tol = 1e-8 * (1.0 + np.max(np.abs(gtw)))
    max_iter = 10 * n

    lam = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    grad = -2.0 * gtw  # gradient of the objective at lambda = 0
    resolve = False
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float).reshape(n)
        passive = np.isfinite(ws) & (ws > 0.0)
        resolve = bool(passive.any())
        lam[passive] = ws[passive]
    iterations = 0
    while True:
        if not resolve:
            candidate = np.where(passive, -np.inf, -grad)
            j = int(np.argmax(candidate))
            if candidate[j] <= 2.0 * kkt_tol:  # gradient carries the factor 2
                break
            passive[j] = True
        resolve = False
        while True:
            # every passive solve counts toward the budget so a degenerate
            # problem fails fast instead of churning in the clip loop
            iterations += 1
            if iterations > max_iter:
                raise IterationLimit(iterations, n, _kkt_violation(lam, grad))
            idx = np.flatnonzero(passive)
            z = _solve_passive(G, gtg, gtw, idx, w)
            # relative positivity threshold: roundoff survivors (entries that
            # should have hit exactly zero in a previous clip) must leave the
            # passive set or the walk below stalls with alpha underflowing
            z_tol = 1e-12 * float(np.max(z, initial=0.0))
            if np.all(z > z_tol):
                lam = np.zeros(n)
                lam[idx] = z
                break
            # walk toward z until the first passive component hits zero
            lp = lam[idx]
            neg = z <= z_tol
            denom = lp[neg] - z[neg]
            with np.errstate(invalid="ignore", divide="ignore"):
                alphas = np.where(denom > 0.0, lp[neg] / denom, 0.0)
            alpha = float(np.min(alphas))
            stepped = lp + alpha * (z - lp)
            stepped[stepped <= 1e-12 * float(np.max(stepped, initial=0.0))] = 0.0
            lam = np.zeros(n)
            lam[idx] = np.clip(stepped, 0.0, None)
            passive = lam > 0.0
            if not passive.any():
                lam = np.zeros(n)
                break
        grad = 2.0 * (gtg @ lam - gtw)

    residual = G @ lam - w
    return NnlsSolution(
        lam=lam,
        residual=residual,
        kkt_violation=_kkt_violation(lam, grad),
        iterations=iterations,
    )


def _solve_passive(G, gtg, gtw, idx, w):
    """Unconstrained minimizer restricted to the passive columns."""
    block = gtg[np.ix_(idx, idx)]
    rhs = gtw[idx]
    try:
        z = np.linalg.solve(block, rhs)
        # near-singular blocks (e.g. opposing grasp ridges) can pass through
        # solve() with garbage instead of raising; verify before trusting
        if np.all(np.isfinite(z)) and (
            np.max(np.abs(block @ z - rhs)) <= 1e-6 * (1.0 + np.max(np.abs(rhs)))
        ):
            return z
    except np.linalg.LinAlgError:
        pass
    # singular block (duplicate/degenerate columns): minimum-norm solve
    z, *_ = np.linalg.lstsq(G[:, idx], w, rcond=None)
    return z


def _kkt_violation(lam, grad) -> float:
    # active columns: |grad| should vanish; inactive: grad should be >= 0
    viol = np.where(lam > 0.0, np.abs(grad), np.maximum(0.0, -grad))
    return float(np.max(viol, initial=0.0))


@dataclass(frozen=True)
class LimbWrench:
    """Distributed contact wrench for one limb.

    wrench_world: (force, moment-about-world-origin) 6-vector.
    wrench_local: force in the contact surface frame (t1, t2, n) and moment
    about the contact polygon centroid in that frame.
    """

    limb_id: str
    wrench_world: np.ndarray
    wrench_local: np.ndarray


def _gravity_offset(w_bar: ResultantWrench, com, params: RobotParams) -> np.ndarray:
    """Offset [m g; c x f] that unfolds a gravity-folded wrench at CoM c."""
    com = np.asarray(com, dtype=float).reshape(3)
    f = w_bar.force + params.weight_force
    return np.concatenate([params.weight_force, _cross3(com, f)])


def _cone_solve(w_bar, com, contacts, params, margin, grasp, column_weights,
                warm_start=None):
    if w_bar.frame is not WrenchFrame.WITH_GRAVITY:
        raise ValueError("expected a gravity-folded (WITH_GRAVITY) wrench")
    if grasp is None:
        grasp = assemble_grasp_matrix([c.shrunk(margin) for c in contacts])
    offset = _gravity_offset(w_bar, com, params)
    target = w_bar.as_vector() + offset
    problem = NnlsProblem(G=grasp.columns, target=target, column_weights=column_weights)
    solution = solve_nnls(
        problem,
        gram=None if column_weights is not None else grasp.gram,
        warm_start=warm_start,
    )
    return grasp, offset, solution


def project_planned_wrench(
    w_bar_p: ResultantWrench,
    com_p,
    contacts,
    params: RobotParams,
    *,
    margin: float = DEFAULT_MARGIN,
    grasp: GraspMatrix | None = None,
    column_weights=None,
    warm_start=None,
):
    """Project a planned gravity-folded wrench onto the contact wrench cone.

    Unfolds gravity at the planned CoM, solves NNLS against the grasp matrix,
    and refolds with the same offset, so the projection error
    ||w_bar_p - w_bar_p'|| equals the NNLS residual norm exactly.

    `warm_start` (a previous solution's lam for the same grasp matrix) is
    forwarded to the solver.

    Returns (projected wrench, NnlsSolution).
    """
    grasp, offset, solution = _cone_solve(
        w_bar_p, com_p, contacts, params, margin, grasp, column_weights,
        warm_start,
    )
    achieved = grasp.columns @ solution.lam - offset
    projected = ResultantWrench(
        force=achieved[:3], moment=achieved[3:], frame=WrenchFrame.WITH_GRAVITY
    )
    return projected, solution


def distribute_desired_wrench(
    w_bar_d: ResultantWrench,
    com_a,
    contacts,
    params: RobotParams,
    *,
    margin: float = DEFAULT_MARGIN,
    grasp: GraspMatrix | None = None,
    column_weights=None,
    warm_start=None,
):
    """Split a desired gravity-folded wrench into per-limb contact wrenches.

    The NNLS target unfolds gravity at the *actual* CoM (the moment arm uses
    the force determined by the input wrench: the solution's force rows must
    match it whenever the problem is feasible, so one pass suffices).  Each
    limb's wrench is its grasp-matrix block times its lambda slice; the
    per-limb blocks partition the columns, so the limb wrenches sum to the
    full solution exactly.

    Returns (list of LimbWrench in input contact order, NnlsSolution).
    """
    contacts = list(contacts)
    grasp, _, solution = _cone_solve(
        w_bar_d, com_a, contacts, params, margin, grasp, column_weights,
        warm_start,
    )
    limbs = []
    for c in contacts:
        lo, hi = grasp.block_index[c.limb_id]
        w_i = grasp.columns[:, lo:hi] @ solution.lam[lo:hi]
        limbs.append(LimbWrench(
            limb_id=c.limb_id,
            wrench_world=w_i,
            wrench_local=_to_local(w_i, c),
        ))
    return limbs, solution


def _to_local(w_world: np.ndarray, contact) -> np.ndarray:
    """World wrench (moment about origin) -> surface frame, moment about centroid."""
    t1, t2 = contact.tangent_basis
    nrm = contact.contact_normal
    f = w_world[:3]
    m = w_world[3:] - _cross3(contact.centroid, f)
    return np.array([t1 @ f, t2 @ f, nrm @ f, t1 @ m, t2 @ m, nrm @ m])
