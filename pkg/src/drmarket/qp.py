"""Dense convex quadratic programming.

Solves

    minimize    0.5 x'Qx + c'x
    subject to  A_eq x  = b_eq
                A_in x <= b_in
                lo <= x <= hi

with a Mehrotra predictor-corrector primal-dual interior-point method,
followed by an active-set polishing step that recovers a vertex-accurate
solution whenever the identified active set is consistent. LPs are the
special case ``Q = 0``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERATIONS = "max_iterations"


class QpError(RuntimeError):
    """Raised by callers that require an optimal solution."""

    def __init__(self, message: str, solution: "QpSolution | None" = None):
        super().__init__(message)
        self.solution = solution


def _as_matrix(a, n: int) -> np.ndarray:
    if a is None:
        return np.zeros((0, n))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, n))
    return a


def _as_vector(b, m: int) -> np.ndarray:
    if b is None:
        return np.zeros(m)
    return np.atleast_1d(np.asarray(b, dtype=float)).ravel()


@dataclass
class QpProblem:
    """Problem data. ``Q`` is symmetrized on construction."""

    Q: np.ndarray
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float)).ravel()
        n = self.c.size
        Q = np.zeros((n, n)) if self.Q is None else np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape != (n, n):
            raise ValueError(f"Q has shape {Q.shape}, expected {(n, n)}")
        self.Q = 0.5 * (Q + Q.T)
        self.A_eq = _as_matrix(self.A_eq, n)
        self.b_eq = _as_vector(self.b_eq, self.A_eq.shape[0])
        self.A_in = _as_matrix(self.A_in, n)
        self.b_in = _as_vector(self.b_in, self.A_in.shape[0])
        for name in ("A_eq", "A_in"):
            if getattr(self, name).shape[1] != n:
                raise ValueError(f"{name} must have {n} columns")
        if self.b_eq.size != self.A_eq.shape[0] or self.b_in.size != self.A_in.shape[0]:
            raise ValueError("right-hand side length does not match constraint rows")
        self.lo = np.full(n, -np.inf) if self.lo is None else np.broadcast_to(
            np.asarray(self.lo, dtype=float), (n,)).copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.broadcast_to(
            np.asarray(self.hi, dtype=float), (n,)).copy()
        if np.any(self.lo > self.hi):
            raise ValueError("lo > hi for some variable")
        if np.any(np.isnan(self.Q)) or np.any(np.isnan(self.c)):
            raise ValueError("NaN in problem data")

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Q @ x + self.c @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    y_eq: np.ndarray
    z_in: np.ndarray
    z_lo: np.ndarray
    z_hi: np.ndarray
    objective: float
    status: str
    kkt_residual: float
    iterations: int = 0
    polished: bool = False
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class _Ineq:
    """Stacked inequality operator ``G x <= h`` built from rows and finite bounds."""

    def __init__(self, p: QpProblem):
        self.A = p.A_in
        self.lo_idx = np.flatnonzero(np.isfinite(p.lo))
        self.hi_idx = np.flatnonzero(np.isfinite(p.hi))
        self.m_in = p.A_in.shape[0]
        self.m_lo = self.lo_idx.size
        self.m = self.m_in + self.m_lo + self.hi_idx.size
        self.n = p.n
        self.h = np.concatenate([p.b_in, -p.lo[self.lo_idx], p.hi[self.hi_idx]])

    def split(self, v):
        a = self.m_in
        b = a + self.m_lo
        return v[:a], v[a:b], v[b:]

    def mul(self, x):
        return np.concatenate([self.A @ x, -x[self.lo_idx], x[self.hi_idx]])

    def rmul(self, z):
        zi, zl, zu = self.split(z)
        out = self.A.T @ zi
        np.subtract.at(out, self.lo_idx, zl)
        np.add.at(out, self.hi_idx, zu)
        return out

    def gram(self, w):
        """``G' diag(w) G``."""
        wi, wl, wu = self.split(w)
        out = (self.A.T * wi) @ self.A
        d = np.zeros(self.n)
        np.add.at(d, self.lo_idx, wl)
        np.add.at(d, self.hi_idx, wu)
        out[np.diag_indices(self.n)] += d
        return out

    def row(self, i):
        if i < self.m_in:
            return self.A[i]
        r = np.zeros(self.n)
        if i < self.m_in + self.m_lo:
            r[self.lo_idx[i - self.m_in]] = -1.0
        else:
            r[self.hi_idx[i - self.m_in - self.m_lo]] = 1.0
        return r


def _residuals(p, G, x, y, z, s):
    r_d = p.Q @ x + p.c + p.A_eq.T @ y + G.rmul(z)
    r_e = p.A_eq @ x - p.b_eq
    r_i = G.mul(x) + s - G.h
    return r_d, r_e, r_i


def _kkt_measure(p, G, x, y, z, s, scale):
    r_d, r_e, r_i = _residuals(p, G, x, y, z, s)
    c_scale, b_scale = scale
    obj = p.objective(x)
    dres = np.max(np.abs(r_d), initial=0.0) / (1.0 + c_scale)
    pres = max(np.max(np.abs(r_e), initial=0.0), np.max(np.abs(r_i), initial=0.0)) / (1.0 + b_scale)
    gap = abs(float(s @ z)) / (1.0 + abs(obj))
    return max(dres, pres, gap)


def _step_to_boundary(v, dv, frac=1.0):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, frac * float(np.min(-v[neg] / dv[neg])))


def _final_measure(p, G, x, y, z, scale, tol):
    """KKT measure for a candidate with slacks recomputed from ``x``.

    Returns ``inf`` if ``x`` violates an inequality by more than ``tol``
    (scaled) or a multiplier is negative beyond ``tol``.
    """
    s = G.h - G.mul(x)
    c_scale, b_scale = scale
    if np.any(s < -tol * (1.0 + b_scale)) or np.any(z < -tol * (1.0 + c_scale)):
        return np.inf
    r_d = p.Q @ x + p.c + p.A_eq.T @ y + G.rmul(z)
    r_e = p.A_eq @ x - p.b_eq
    dres = np.max(np.abs(r_d), initial=0.0) / (1.0 + c_scale)
    pres = max(np.max(np.abs(r_e), initial=0.0),
               np.max(np.maximum(-s, 0.0), initial=0.0)) / (1.0 + b_scale)
    gap = float(np.sum(np.abs(np.maximum(s, 0.0) * z))) / (1.0 + abs(p.objective(x)))
    return max(dres, pres, gap)


def _polish(p, G, x, y, z, s, scale, tol):
    active = np.flatnonzero(s < z)
    n, me = p.n, p.A_eq.shape[0]
    rows = np.array([G.row(i) for i in active]).reshape(active.size, n)
    k = n + me + active.size
    K = np.zeros((k, k))
    K[:n, :n] = p.Q
    K[:n, n:n + me] = p.A_eq.T
    K[n:n + me, :n] = p.A_eq
    K[:n, n + me:] = rows.T
    K[n + me:, :n] = rows
    rhs = np.concatenate([-p.c, p.b_eq, G.h[active]])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            sol = scipy.linalg.solve(K, rhs, assume_a="sym", check_finite=False)
        if not np.all(np.isfinite(sol)) or np.max(np.abs(K @ sol - rhs)) > 1e-9 * (1 + np.max(np.abs(rhs))):
            raise np.linalg.LinAlgError
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError):
        sol = scipy.linalg.lstsq(K, rhs, check_finite=False)[0]
    xp = sol[:n]
    yp = sol[n:n + me]
    zp = np.zeros(G.m)
    zp[active] = sol[n + me:]
    return xp, yp, zp


def _factor(K, n, me, bump):
    """LU of the KKT matrix; an exactly singular pivot gets a stronger
    diagonal regularization and one more try."""
    for extra in (0.0, bump):
        if extra:
            K = K.copy()
            K[np.arange(n), np.arange(n)] += extra
            K[np.arange(n, n + me), np.arange(n, n + me)] -= extra
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            try:
                return scipy.linalg.lu_factor(K, check_finite=False)
            except (ValueError, np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
                continue
    return None


def solve(problem: QpProblem, tol: float = 1e-8, max_iter: int = 200,
          divergence: float = 1e12, polish: bool = True) -> QpSolution:
    """Solve a convex QP.

    Parameters
    ----------
    problem : QpProblem
    tol : float
        Target for the scaled KKT max-norm residual (stationarity, primal
        feasibility and complementarity, each scaled by ``1 + ||data||``).
    max_iter : int
        Interior-point iteration cap.
    divergence : float
        Dual (primal) iterates beyond this magnitude flag infeasibility
        (unboundedness).
    polish : bool
        Attempt an active-set refinement after the interior-point phase.

    Returns
    -------
    QpSolution
        ``status`` is one of ``optimal``, ``infeasible``, ``unbounded`` or
        ``max_iterations``. The best iterate is returned in every case.
    """
    p = problem
    G = _Ineq(p)
    n, me, m = p.n, p.A_eq.shape[0], G.m
    c_scale = max(np.max(np.abs(p.c), initial=0.0), np.max(np.abs(p.Q), initial=0.0))
    b_scale = max(np.max(np.abs(p.b_eq), initial=0.0), np.max(np.abs(G.h), initial=0.0))
    scale = (c_scale, b_scale)

    x = np.zeros(n)
    fin_lo = np.isfinite(p.lo)
    fin_hi = np.isfinite(p.hi)
    both = fin_lo & fin_hi
    x[both] = 0.5 * (p.lo[both] + p.hi[both])
    x[fin_lo & ~fin_hi] = p.lo[fin_lo & ~fin_hi] + 1.0
    x[fin_hi & ~fin_lo] = p.hi[fin_hi & ~fin_lo] - 1.0
    y = np.zeros(me)
    s = np.maximum(G.h - G.mul(x), 1.0)
    z = np.ones(m)

    best = None
    status = MAX_ITERATIONS
    it = 0
    reg = 1e-12 * (1.0 + c_scale)
    for it in range(1, max_iter + 1):
        r_d, r_e, r_i = _residuals(p, G, x, y, z, s)
        kkt = _kkt_measure(p, G, x, y, z, s, scale)
        if best is None or kkt < best[0]:
            best = (kkt, x.copy(), y.copy(), z.copy(), s.copy())
        if kkt <= tol:
            status = OPTIMAL
            break
        if max(np.max(np.abs(y), initial=0.0), np.max(np.abs(z), initial=0.0)) > divergence * (1.0 + c_scale):
            status = INFEASIBLE
            break
        if np.max(np.abs(x), initial=0.0) > divergence * (1.0 + b_scale):
            status = UNBOUNDED
            break

        w = z / s
        H = p.Q + G.gram(w)
        K = np.zeros((n + me, n + me))
        K[:n, :n] = H
        K[np.arange(n), np.arange(n)] += reg
        K[:n, n:] = p.A_eq.T
        K[n:, :n] = p.A_eq
        K[np.arange(n, n + me), np.arange(n, n + me)] -= reg
        lu = _factor(K, n, me, 1e-8 * (1.0 + c_scale))
        if lu is None:
            break

        def newton(r_c):
            t = (-r_c + z * r_i) / s
            rhs = np.concatenate([-r_d - G.rmul(t), -r_e])
            sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
            dx, dy = sol[:n], sol[n:]
            ds = -r_i - G.mul(dx)
            dz = t + w * G.mul(dx)
            return dx, dy, dz, ds

        mu = float(s @ z) / m if m else 0.0
        dx, dy, dz, ds = newton(s * z)
        if m:
            a_aff = min(_step_to_boundary(s, ds), _step_to_boundary(z, dz))
            mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, dy, dz, ds = newton(s * z + ds * dz - sigma * mu)
            alpha = min(_step_to_boundary(s, ds, 0.99), _step_to_boundary(z, dz, 0.99))
        else:
            alpha = 1.0
        if not np.all(np.isfinite(dx)):
            break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        if m:
            # keep strictly interior
            s = np.maximum(s, 1e-300)
            z = np.maximum(z, 1e-300)
    else:
        it = max_iter

    if status == OPTIMAL:
        best = (best[0], x, y, z, s)
    kkt, x, y, z, s = best
    polished = False
    if polish and status in (OPTIMAL, MAX_ITERATIONS):
        cand = _polish(p, G, x, y, z, s, scale, tol)
        if cand is not None:
            xp, yp, zp = cand
            k_new = _final_measure(p, G, xp, yp, zp, scale, tol)
            k_old = _final_measure(p, G, x, y, z, scale, tol)
            if k_new <= max(k_old, tol) and np.isfinite(k_new):
                x, y, z = xp, yp, zp
                kkt = k_new
                polished = True
                if status == MAX_ITERATIONS and kkt <= tol:
                    status = OPTIMAL
    if not polished:
        kkt = min(kkt, _final_measure(p, G, x, y, z, scale, tol)) if status == OPTIMAL else kkt

    zi, zl, zu = G.split(z)
    z_lo = np.zeros(n)
    z_hi = np.zeros(n)
    z_lo[G.lo_idx] = zl
    z_hi[G.hi_idx] = zu
    if status != OPTIMAL:
        logger.debug("qp finished with status %s after %d iterations (kkt %.3e)", status, it, kkt)
    return QpSolution(x=x, y_eq=y, z_in=zi.copy(), z_lo=z_lo, z_hi=z_hi,
                      objective=p.objective(x), status=status, kkt_residual=float(kkt),
                      iterations=it, polished=polished)


def lagrangian_dual_value(problem: QpProblem, sol: QpSolution) -> float:
    """Value of the Lagrangian dual function at the returned multipliers.

    Only meaningful when the Lagrangian is minimized at ``sol.x``, i.e. when
    stationarity holds; used to check weak duality.
    """
    p = problem
    x = sol.x
    val = p.objective(x)
    val += sol.y_eq @ (p.A_eq @ x - p.b_eq)
    val += sol.z_in @ (p.A_in @ x - p.b_in)
    lo_f = np.isfinite(p.lo)
    hi_f = np.isfinite(p.hi)
    val += sol.z_lo[lo_f] @ (p.lo[lo_f] - x[lo_f])
    val += sol.z_hi[hi_f] @ (x[hi_f] - p.hi[hi_f])
    return float(val)
