#!/usr/bin/env python3
"""
Convex quadratic programming for the dispatch engine.

Every program has the form

    minimize    1/2 x'Px + q'x + offset
    subject to  l <= Ax <= u
                lo <= x <= hi

and is solved by an operator-splitting (ADMM) iteration on the stacked
constraint matrix [A; I]: Ruiz equilibration, one sparse factorization of the
quasi-definite KKT matrix, over-relaxation, residual-balancing step size and
primal/dual infeasibility certificates.  The variable box is a block of the
splitting, so the returned point lies in it exactly.  On exit the active set
read off the multipliers is polished by one reduced KKT solve.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

STATUS_OPTIMAL = 'optimal'
STATUS_MAX_ITER = 'max-iterations'
STATUS_INFEASIBLE = 'infeasible-detected'

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 20000

# Splitting constants
RELAXATION = 1.6
SIGMA = 1e-6
RHO_INIT = 0.1
RHO_MIN = 1e-6
RHO_MAX = 1e6
RHO_EQ_FACTOR = 1e3
ADAPT_TOLERANCE = 5.0

# Check residuals every CHECK_INTERVAL iterations, retune rho every ADAPT_INTERVAL
CHECK_INTERVAL = 25
ADAPT_INTERVAL = 100

INFEASIBILITY_TOL = 1e-5

# Polishing: regularization of the reduced KKT system and refinement passes
POLISH_DELTA = 1e-6
POLISH_REFINE_ITER = 3

# Equilibration
SCALING_ITER = 10
MIN_SCALING = 1e-4
MAX_SCALING = 1e4


class SolverError(RuntimeError):
    """The splitting did not reach the requested accuracy."""

    def __init__(self, message: str, report: 'SolveReport'):
        super().__init__(message)
        self.report = report


class InfeasibleError(SolverError):
    """A primal or dual infeasibility certificate was found."""


@dataclass(frozen=True)
class Box:
    """Variable box lo <= x <= hi."""
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError(f"box bounds differ in length: {lo.size} vs {hi.size}")
        object.__setattr__(self, 'lo', lo)
        object.__setattr__(self, 'hi', hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def is_empty(self) -> bool:
        return bool(np.any(self.lo > self.hi))

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def project(self, x: np.ndarray) -> np.ndarray:
        return project_box(x, self.lo, self.hi)


@dataclass(frozen=True)
class AffineRows:
    """Affine map g(x) = Gx + h, one entry per constraint row."""
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).ravel()
        G = np.asarray(self.G, dtype=float)
        if G.ndim != 2:
            G = G.reshape(h.size, -1)
        if G.shape[0] != h.size:
            raise ValueError(f"G has {G.shape[0]} rows for {h.size} offsets")
        object.__setattr__(self, 'G', G)
        object.__setattr__(self, 'h', h)

    @property
    def dim(self) -> int:
        return self.h.size

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.G @ np.asarray(x, dtype=float) + self.h


@dataclass
class QuadraticProgram:
    """Carrier for a convex QP; see the module docstring for the form."""
    P: object
    q: np.ndarray
    A: object = None
    l: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    offset: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        if n == 0:
            raise ValueError("QP needs at least one variable")
        self.P = sp.csc_matrix(self.P, dtype=float)
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")
        asym = abs(self.P - self.P.T)
        if asym.nnz and asym.max() > 1e-10:
            raise ValueError(f"P is not symmetric (max asymmetry {asym.max():.3e})")
        if self.A is None:
            self.A = sp.csc_matrix((0, n))
        self.A = sp.csc_matrix(self.A, dtype=float)
        m = self.A.shape[0]
        if self.A.shape[1] != n:
            raise ValueError(f"A has {self.A.shape[1]} columns, expected {n}")
        self.l = _vector(self.l, m, -np.inf)
        self.u = _vector(self.u, m, np.inf)
        self.lo = _vector(self.lo, n, -np.inf)
        self.hi = _vector(self.hi, n, np.inf)
        if np.any(self.l > self.u):
            raise ValueError("constraint bounds have l > u")
        if np.any(self.lo > self.hi):
            raise ValueError("variable box has lo > hi")
        self.offset = float(self.offset)

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ (self.P @ x) + self.q @ x + self.offset)


@dataclass
class SolveReport:
    x: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    status: str
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y_box: np.ndarray = field(default_factory=lambda: np.zeros(0))
    certificate: Optional[str] = None
    polished: bool = False

    @property
    def optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL

    def raise_for_status(self, accept_residual: Optional[float] = None) -> 'SolveReport':
        """Raise unless optimal; a max-iteration exit passes when both residuals <= accept_residual."""
        if self.status == STATUS_INFEASIBLE:
            raise InfeasibleError(f"QP infeasible ({self.certificate} certificate)", self)
        if self.status == STATUS_MAX_ITER:
            worst = max(self.primal_residual, self.dual_residual)
            if accept_residual is not None and worst <= accept_residual:
                logger.warning("accepting inexact QP solution after %d iterations (residual %.2e)",
                               self.iterations, worst)
                return self
            raise SolverError(
                f"QP not solved after {self.iterations} iterations "
                f"(primal {self.primal_residual:.2e}, dual {self.dual_residual:.2e})", self)
        return self


def _vector(values, size: int, fill: float) -> np.ndarray:
    if values is None:
        return np.full(size, fill)
    out = np.asarray(values, dtype=float).ravel()
    if out.size != size:
        raise ValueError(f"expected a vector of length {size}, got {out.size}")
    return out


def project_box(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Elementwise clamp of x into [lo, hi]."""
    return np.minimum(np.maximum(np.asarray(x, dtype=float), lo), hi)


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _col_norms(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(M.shape[1])
    return np.asarray(abs(M).max(axis=0).todense()).ravel()


def _row_norms(M: sp.csc_matrix) -> np.ndarray:
    if M.shape[1] == 0:
        return np.zeros(M.shape[0])
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


def _limit_scaling(v: np.ndarray) -> np.ndarray:
    v = np.array(v, dtype=float, ndmin=1)
    v[v < MIN_SCALING] = 1.0
    return np.minimum(v, MAX_SCALING)


class _Workspace:
    """Scaled problem data, factorization and iterates of one solve."""

    def __init__(self, qp: QuadraticProgram):
        self.qp = qp
        self.n = qp.n
        A_full = sp.vstack([qp.A, sp.identity(qp.n, format='csc')], format='csc')
        self.l_orig = np.concatenate([qp.l, qp.lo])
        self.u_orig = np.concatenate([qp.u, qp.hi])
        self.m = A_full.shape[0]
        self._equilibrate(qp.P, qp.q, A_full)
        self.l = self.E * self.l_orig
        self.u = self.E * self.u_orig
        self.equality = np.abs(self.u_orig - self.l_orig) < 1e-12
        self.free = np.isinf(self.l_orig) & np.isinf(self.u_orig)
        self.rho_scalar = RHO_INIT
        self._set_rho(RHO_INIT)

    def _equilibrate(self, P, q, A):
        D = np.ones(self.n)
        E = np.ones(self.m)
        c = 1.0
        Ps, qs, As = P.copy(), q.copy(), A.copy()
        for _ in range(SCALING_ITER):
            d = 1.0 / np.sqrt(_limit_scaling(np.maximum(_col_norms(Ps), _col_norms(As))))
            e = 1.0 / np.sqrt(_limit_scaling(_row_norms(As)))
            Dd, Ee = sp.diags(d), sp.diags(e)
            Ps = (Dd @ Ps @ Dd).tocsc()
            qs = d * qs
            As = (Ee @ As @ Dd).tocsc()
            D *= d
            E *= e
            cost_norm = max(float(np.mean(_col_norms(Ps))), _inf_norm(qs))
            gamma = 1.0 / _limit_scaling(cost_norm)[0]
            Ps = Ps * gamma
            qs = qs * gamma
            c *= gamma
        self.D, self.E, self.c = D, E, c
        self.Ps, self.qs, self.As = Ps, qs, As
        self.AsT = As.T.tocsc()
        self.As_rows = As.tocsr()

    def _set_rho(self, rho: float):
        self.rho_scalar = float(np.clip(rho, RHO_MIN, RHO_MAX))
        rho_vec = np.full(self.m, self.rho_scalar)
        rho_vec[self.equality] = min(RHO_MAX, RHO_EQ_FACTOR * self.rho_scalar)
        rho_vec[self.free] = RHO_MIN
        self.rho = rho_vec
        kkt = sp.bmat([[self.Ps + SIGMA * sp.identity(self.n), self.AsT],
                       [self.As, -sp.diags(1.0 / rho_vec)]], format='csc')
        self.lu = spla.splu(kkt)

    # -- residuals in the original units, normalized so that optimal <=> residual <= tol
    def residuals(self, x, z, y) -> Tuple[float, float]:
        Ax = (self.As @ x) / self.E
        zz = z / self.E
        prim = _inf_norm(Ax - zz) / (1.0 + max(_inf_norm(Ax), _inf_norm(zz)))
        scale = 1.0 / (self.c * self.D)
        Px = scale * (self.Ps @ x)
        Aty = scale * (self.AsT @ y)
        qq = scale * self.qs
        dual = _inf_norm(Px + qq + Aty) / (1.0 + max(_inf_norm(Px), _inf_norm(Aty), _inf_norm(qq)))
        return prim, dual

    def primal_infeasible(self, dy: np.ndarray) -> bool:
        dy = self.E * dy / self.c
        norm = _inf_norm(dy)
        if norm <= INFEASIBILITY_TOL:
            return False
        v = dy / norm
        with np.errstate(invalid='ignore'):
            support = np.sum(np.where(v > 0, self.u_orig * v, 0.0)) + \
                np.sum(np.where(v < 0, self.l_orig * v, 0.0))
        if not support < -INFEASIBILITY_TOL:
            return False
        Atv = (self.AsT @ (v / self.E)) / self.D
        return _inf_norm(Atv) < INFEASIBILITY_TOL

    def dual_infeasible(self, dx: np.ndarray) -> bool:
        dx = self.D * dx
        norm = _inf_norm(dx)
        if norm <= INFEASIBILITY_TOL:
            return False
        v = dx / norm
        if not self.qp.q @ v < -INFEASIBILITY_TOL:
            return False
        if _inf_norm(self.qp.P @ v) >= INFEASIBILITY_TOL:
            return False
        Av = (self.As @ (v / self.D)) / self.E
        upper_ok = np.isinf(self.u_orig) | (Av <= INFEASIBILITY_TOL)
        lower_ok = np.isinf(self.l_orig) | (Av >= -INFEASIBILITY_TOL)
        return bool(np.all(upper_ok & lower_ok))

    def retune_rho(self, x, z, y):
        Ax = self.As @ x
        prim = _inf_norm(Ax - z) / (max(_inf_norm(Ax), _inf_norm(z)) + 1e-10)
        Px = self.Ps @ x
        Aty = self.AsT @ y
        dual = _inf_norm(Px + self.qs + Aty) / (max(_inf_norm(Px), _inf_norm(Aty), _inf_norm(self.qs)) + 1e-10)
        new_rho = self.rho_scalar * np.sqrt(prim / (dual + 1e-10))
        if new_rho > ADAPT_TOLERANCE * self.rho_scalar or new_rho < self.rho_scalar / ADAPT_TOLERANCE:
            logger.debug("rho %.3e -> %.3e", self.rho_scalar, new_rho)
            self._set_rho(new_rho)

    def polish(self, x, z, y) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """
        Solve the equality-constrained QP on the rows the multipliers mark as
        active, with iterative refinement against the regularization.
        """
        n = self.n
        low = np.flatnonzero(z - self.l < -y)
        upp = np.flatnonzero(self.u - z < y)
        A_red = self.As_rows[np.concatenate([low, upp])].tocsc()
        k = A_red.shape[0]
        P_reg = self.Ps + POLISH_DELTA * sp.identity(n, format='csc')
        if k:
            kkt = sp.bmat([[P_reg, A_red.T], [A_red, -POLISH_DELTA * sp.identity(k)]], format='csc')
        else:
            kkt = P_reg.tocsc()
        rhs = np.concatenate([-self.qs, self.l[low], self.u[upp]])
        try:
            factor = spla.splu(kkt)
        except RuntimeError as e:
            logger.debug("polish skipped: %s", e)
            return None
        sol = factor.solve(rhs)
        for _ in range(POLISH_REFINE_ITER):
            xs, ys = sol[:n], sol[n:]
            exact = np.concatenate([self.Ps @ xs + A_red.T @ ys, A_red @ xs])
            sol = sol + factor.solve(rhs - exact)
        if not np.all(np.isfinite(sol)):
            return None
        if np.any(sol[n:n + low.size] > 0) or np.any(sol[n + low.size:] < 0):
            # degenerate active set: the reduced multipliers are not a valid dual
            return None
        x_pol = sol[:n]
        y_pol = np.zeros(self.m)
        y_pol[low] = sol[n:n + low.size]
        y_pol[upp] = sol[n + low.size:]
        return x_pol, project_box(self.As @ x_pol, self.l, self.u), y_pol

    def solve(self, tol: float, max_iter: int, warm_start, polish: bool = True) -> SolveReport:
        n = self.n
        x = np.zeros(n)
        y = np.zeros(self.m)
        if warm_start is not None:
            x0, y0 = warm_start
            x = np.asarray(x0, dtype=float) / self.D
            if y0 is not None and np.size(y0) == self.m:
                y = self.c * np.asarray(y0, dtype=float) / self.E
        z = project_box(self.As @ x, self.l, self.u)

        status = STATUS_MAX_ITER
        certificate = None
        prim = dual = np.inf
        iteration = 0
        for iteration in range(1, max_iter + 1):
            x_prev, z_prev, y_prev = x, z, y
            rhs = np.concatenate([SIGMA * x - self.qs, z - y / self.rho])
            sol = self.lu.solve(rhs)
            x_tilde = sol[:n]
            z_tilde = z + (sol[n:] - y) / self.rho
            x = RELAXATION * x_tilde + (1.0 - RELAXATION) * x_prev
            z_relaxed = RELAXATION * z_tilde + (1.0 - RELAXATION) * z_prev
            z = project_box(z_relaxed + y / self.rho, self.l, self.u)
            y = y + self.rho * (z_relaxed - z)

            if iteration % CHECK_INTERVAL and iteration != max_iter:
                continue
            prim, dual = self.residuals(x, z, y)
            if prim <= tol and dual <= tol:
                status = STATUS_OPTIMAL
                break
            if self.primal_infeasible(y - y_prev):
                status, certificate = STATUS_INFEASIBLE, 'primal'
                break
            if self.dual_infeasible(x - x_prev):
                status, certificate = STATUS_INFEASIBLE, 'dual'
                break
            if iteration % ADAPT_INTERVAL == 0:
                self.retune_rho(x, z, y)

        polished = False
        if polish and status != STATUS_INFEASIBLE:
            candidate = self.polish(x, z, y)
            if candidate is not None:
                p_prim, p_dual = self.residuals(*candidate)
                if (p_prim < prim and p_dual < dual) or (p_prim < prim and dual < 1e-10) or \
                        (p_dual < dual and prim < 1e-10):
                    x, z, y = candidate
                    prim, dual = p_prim, p_dual
                    polished = True
                    if prim <= tol and dual <= tol:
                        status = STATUS_OPTIMAL
                else:
                    logger.debug("polish rejected (primal %.2e, dual %.2e)", p_prim, p_dual)

        x_out = project_box(self.D * x, self.qp.lo, self.qp.hi)
        y_out = self.E * y / self.c
        report = SolveReport(
            x=x_out,
            objective=self.qp.objective(x_out),
            primal_residual=float(prim),
            dual_residual=float(dual),
            iterations=iteration,
            status=status,
            y=y_out[:self.qp.m],
            y_box=y_out[self.qp.m:],
            certificate=certificate,
            polished=polished,
        )
        if status == STATUS_MAX_ITER:
            logger.warning("QP hit max_iter=%d (primal %.2e, dual %.2e)", max_iter, prim, dual)
        else:
            logger.debug("QP %s after %d iterations", status, iteration)
        return report


def solve_qp(qp: QuadraticProgram, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
             warm_start: Optional[Tuple[np.ndarray, Optional[np.ndarray]]] = None,
             polish: bool = True) -> SolveReport:
    """
    Solve a convex QP by operator splitting.

    Args:
        qp: the program
        tol: bound on the relative primal and dual residuals
        max_iter: iteration cap
        warm_start: optional (x, y) from a related solve; y covers the stacked [A; I] rows
        polish: refine the final iterate on its active set; kept only when both residuals improve
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    return _Workspace(qp).solve(tol, max_iter, warm_start, polish)


def solve_prox_step(grad: np.ndarray, queue: np.ndarray, alpha: float, gain: float,
                    g_rows: AffineRows, box: Box, x_prev: np.ndarray,
                    tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """
    Queue-weighted proximal step

        argmin_{x in box}  alpha<grad, x> + gain<queue, [g(x)]_+> + ||x - x_prev||^2

    The hinge is written in epigraph form with slacks s >= g(x), s >= 0, which
    turns it into the linear term gain<queue, s> of a QP.
    """
    grad = np.asarray(grad, dtype=float)
    queue = np.asarray(queue, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)
    if np.any(queue < 0):
        raise ValueError("queue entries must be nonnegative")
    if not box.contains(x_prev):
        raise ValueError("proximal center lies outside the box")
    if queue.size != g_rows.dim:
        raise ValueError(f"queue has {queue.size} entries for {g_rows.dim} constraint rows")

    candidate = box.project(x_prev - 0.5 * alpha * grad)
    weights = gain * queue
    active = weights > 0
    if not np.any(active) or np.all(g_rows(candidate)[active] <= 0):
        # hinge is zero at the unconstrained minimizer and nonnegative elsewhere
        return candidate

    G = g_rows.G[active]
    h = g_rows.h[active]
    n, k = x_prev.size, int(active.sum())
    P = sp.block_diag([2.0 * sp.identity(n), sp.csc_matrix((k, k))], format='csc')
    q = np.concatenate([alpha * grad - 2.0 * x_prev, weights[active]])
    A = sp.hstack([sp.csc_matrix(-G), sp.identity(k)], format='csc')
    qp = QuadraticProgram(
        P=P, q=q, A=A, l=h, u=np.full(k, np.inf),
        lo=np.concatenate([box.lo, np.zeros(k)]),
        hi=np.concatenate([box.hi, np.full(k, np.inf)]),
        offset=float(x_prev @ x_prev),
    )
    report = solve_qp(qp, tol=tol, max_iter=max_iter, warm_start=(np.concatenate([candidate, np.zeros(k)]), None))
    report.raise_for_status(accept_residual=1e-4)
    return box.project(report.x[:n])
