"""Multiplier updates for the separable concave dual.

Three engines share one state object:

* ``bundle``: disaggregated proximal bundle method. One cut per dual
  component and iterate; the master maximizes the sum of the component
  models minus a proximal penalty around the prox center; serious/null steps
  follow the ascent test.
* ``cpm``: disaggregated cutting-plane method, the same master with zero
  proximal weight and a finite box on the multipliers.
* ``subgradient``: projected subgradient ascent with step ``alpha0 / k``
  along the subgradient scaled to unit max-norm (``normalize_step``).

The dual has ``n_agg + 1`` components. Component 0 (the MO) has a gradient on
the whole ``(n_agg, T)`` grid; component ``j >= 1`` only on row ``j - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import qp

BUNDLE = "bundle"
CPM = "cpm"
SUBGRADIENT = "subgradient"
METHODS = (BUNDLE, CPM, SUBGRADIENT)

SERIOUS = "serious"
NULL = "null"


class ConfigError(ValueError):
    pass


class MasterError(RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class SolverConfig:
    method: str = BUNDLE
    epsilon: float = 1e-3
    rho: float | None = None  # None: set from the first subgradient, see initial_step
    initial_step: float = 3.0
    beta: float = 0.5
    mu_box: tuple[float, float] | None = (-50.0, 50.0)
    alpha0: float = 1.0
    normalize_step: bool = True  # subgradient direction g / ||g||_inf
    max_iters: int = 500
    qp_tol: float = 1e-8
    max_cuts: int | None = None

    def violations(self) -> list[str]:
        out = []
        if self.method not in METHODS:
            out.append(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not self.epsilon > 0:
            out.append("epsilon must be positive")
        if not 0 < self.beta < 1:
            out.append("beta must lie in (0, 1)")
        if self.method == BUNDLE and self.rho is not None and not self.rho > 0:
            out.append("bundle method needs rho > 0")
        if self.method == BUNDLE and self.rho is None and not self.initial_step > 0:
            out.append("initial_step must be positive")
        if self.method in (CPM, SUBGRADIENT):
            box = self.mu_box
            if box is None or not all(map(math.isfinite, box)) or not box[0] < box[1]:
                out.append(f"{self.method} requires a finite multiplier box lo < hi")
        if self.method == SUBGRADIENT and not self.alpha0 > 0:
            out.append("alpha0 must be positive")
        if self.max_iters < 1:
            out.append("max_iters must be >= 1")
        if not 0 < self.qp_tol <= self.epsilon / 100:
            out.append(f"qp_tol ({self.qp_tol:g}) must be at least two orders of magnitude below "
                       f"epsilon ({self.epsilon:g})")
        if self.max_cuts is not None and self.max_cuts < 1:
            out.append("max_cuts must be positive")
        return out

    def validate(self) -> "SolverConfig":
        errs = self.violations()
        if errs:
            raise ConfigError("; ".join(errs))
        return self


@dataclass(frozen=True)
class CutRecord:
    """Affine overestimate ``value + gradient @ (mu - mu_at)`` of one component."""

    component: int
    iteration: int
    value: float
    gradient: np.ndarray  # flattened over the full multiplier grid

    def evaluate(self, mu, mu_at) -> float:
        return float(self.value + self.gradient @ (np.ravel(mu) - np.ravel(mu_at)))


@dataclass
class MasterResult:
    mu_next: np.ndarray
    v: np.ndarray
    model_value: float  # sum of component models at mu_next
    d_ap: float  # master objective: model_value minus the proximal penalty
    eta: float
    qp_status: str = qp.OPTIMAL
    kkt_residual: float = 0.0


@dataclass
class BundleState:
    """Cut bundle, prox center and step bookkeeping for one dual run."""

    shape: tuple[int, int]
    config: SolverConfig = field(default_factory=SolverConfig)
    cuts: list = field(default_factory=list)
    iterates: dict = field(default_factory=dict)
    prox_center: np.ndarray | None = None
    prox_value: float = -math.inf
    prox_iteration: int | None = None
    k: int = 0
    eta: float | None = None
    last_master: MasterResult | None = None
    last_step_norm: float | None = None
    step_kinds: dict = field(default_factory=dict)
    rho_value: float | None = None

    @property
    def n_components(self) -> int:
        return self.shape[0] + 1

    @property
    def method(self) -> str:
        return self.config.method

    @property
    def rho(self) -> float:
        if self.config.method == CPM:
            return 0.0
        if self.config.rho is not None:
            return self.config.rho
        return 1.0 if self.rho_value is None else self.rho_value

    def component_cuts(self, j: int) -> list:
        return [c for c in self.cuts if c.component == j]


def new_state(shape, config: SolverConfig | None = None) -> BundleState:
    config = (config or SolverConfig()).validate()
    return BundleState(shape=tuple(shape), config=config)


def _embed(state: BundleState, j: int, g) -> np.ndarray:
    na, T = state.shape
    g = np.asarray(g, dtype=float)
    if j == 0 or g.shape == (na, T):
        if g.shape != (na, T) and g.size != na * T:
            raise ValueError(f"component {j} gradient has shape {g.shape}, expected {(na, T)}")
        return g.reshape(-1).copy()
    if g.shape != (T,):
        raise ValueError(f"component {j} gradient has shape {g.shape}, expected {(T,)}")
    full = np.zeros((na, T))
    full[j - 1] = g
    return full.ravel()


def add_iteration_cuts(state: BundleState, mu, values, gradients) -> BundleState:
    """Store one cut per component for the evaluation at ``mu``.

    ``values[j]`` is ``D_j(mu)``; ``gradients[0]`` has the grid shape and
    ``gradients[j]`` (``j >= 1``) has length ``T``. The first call also sets
    the prox center.
    """
    mu = np.asarray(mu, dtype=float).reshape(state.shape)
    if len(values) != state.n_components or len(gradients) != state.n_components:
        raise ValueError(f"expected {state.n_components} components, got {len(values)} values "
                         f"and {len(gradients)} gradients")
    state.k += 1
    ell = state.k
    state.iterates[ell] = mu.copy()
    for j, (val, g) in enumerate(zip(values, gradients)):
        state.cuts.append(CutRecord(component=j, iteration=ell, value=float(val), gradient=_embed(state, j, g)))
    if state.prox_center is None:
        if state.config.rho is None:
            total = sum(c.gradient for c in state.cuts)
            gmax = float(np.max(np.abs(total), initial=0.0))
            # first master step then moves the prices by about initial_step
            state.rho_value = gmax / state.config.initial_step if gmax > 0 else 1.0
        state.prox_center = mu.copy()
        state.prox_value = float(sum(values))
        state.prox_iteration = ell
        state.step_kinds[ell] = SERIOUS
    if state.config.max_cuts is not None:
        _evict(state)
    return state


def _evict(state: BundleState) -> None:
    per = state.n_components
    while len(state.cuts) > state.config.max_cuts and len(state.iterates) > 1:
        keep = {state.prox_iteration, state.k}
        candidates = [ell for ell in sorted(state.iterates) if ell not in keep]
        if not candidates:
            return
        nulls = [ell for ell in candidates if state.step_kinds.get(ell) == NULL]
        victim = nulls[0] if nulls else candidates[0]
        state.cuts = [c for c in state.cuts if c.iteration != victim]
        del state.iterates[victim]
        if len(state.cuts) <= per:
            return


def model_components(state: BundleState, mu) -> np.ndarray:
    """Polyhedral model of each component at ``mu`` (min over its cuts)."""
    mu = np.ravel(np.asarray(mu, dtype=float))
    out = np.full(state.n_components, np.inf)
    for c in state.cuts:
        out[c.component] = min(out[c.component], c.evaluate(mu, state.iterates[c.iteration]))
    return out


def model_value(state: BundleState, mu) -> float:
    return float(model_components(state, mu).sum())


def solve_master(state: BundleState) -> MasterResult:
    """Maximize the disaggregated model minus ``rho/2 ||mu - prox_center||^2``.

    Variables are the flattened multipliers followed by one epigraph variable
    per component. CPM adds the multiplier box.
    """
    if state.prox_center is None:
        raise ValueError("no cuts stored yet")
    seen = {c.component for c in state.cuts}
    if len(seen) != state.n_components:
        raise ValueError("every component needs at least one cut")
    n = state.shape[0] * state.shape[1]
    nc = state.n_components
    rho = state.rho
    center = state.prox_center.ravel()

    Q = np.zeros((n + nc, n + nc))
    Q[np.arange(n), np.arange(n)] = rho
    c = np.concatenate([-rho * center, -np.ones(nc)])
    A = np.zeros((len(state.cuts), n + nc))
    b = np.empty(len(state.cuts))
    for r, cut in enumerate(state.cuts):
        A[r, :n] = -cut.gradient
        A[r, n + cut.component] = 1.0
        b[r] = cut.value - cut.gradient @ state.iterates[cut.iteration].ravel()
    lo = hi = None
    if state.config.method == CPM:
        mlo, mhi = state.config.mu_box
        lo = np.concatenate([np.full(n, mlo), np.full(nc, -np.inf)])
        hi = np.concatenate([np.full(n, mhi), np.full(nc, np.inf)])
    sol = qp.solve(qp.QpProblem(Q, c, A_in=A, b_in=b, lo=lo, hi=hi), tol=state.config.qp_tol)
    if sol.status != qp.OPTIMAL:
        raise MasterError(f"master problem not solved (status {sol.status})", sol)
    mu_next = sol.x[:n].reshape(state.shape)
    v = model_components(state, mu_next)
    mval = float(v.sum())
    d_ap = mval - 0.5 * rho * float(np.sum((mu_next.ravel() - center) ** 2))
    eta = d_ap - state.prox_value
    res = MasterResult(mu_next=mu_next, v=v, model_value=mval, d_ap=d_ap, eta=eta,
                       qp_status=sol.status, kkt_residual=sol.kkt_residual)
    state.last_master = res
    state.eta = eta
    return res


def ascent_test(state: BundleState, mu_next, d_next: float) -> str:
    """Serious/null decision for the evaluated iterate ``mu_next``.

    Call after the master solve that produced ``mu_next`` and after its cuts
    were added; the decision labels iteration ``state.k``. For CPM the prox
    center simply tracks the best evaluated iterate.
    """
    if state.eta is None:
        raise ValueError("ascent_test needs the eta of a preceding master solve")
    gain = d_next - state.prox_value
    if state.config.method == CPM:
        serious = gain > 0
    else:
        serious = gain >= state.config.beta * state.eta
    kind = SERIOUS if serious else NULL
    if serious:
        state.prox_center = np.asarray(mu_next, dtype=float).reshape(state.shape).copy()
        state.prox_value = float(d_next)
        state.prox_iteration = state.k
    state.step_kinds[state.k] = kind
    return kind


def step_size(state: BundleState, k: int | None = None) -> float:
    k = state.k if k is None else k
    return state.config.alpha0 / max(k, 1)


def subgradient_step(state: BundleState, mu, g) -> np.ndarray:
    """Projected ascent step ``clip(mu + alpha(k) d, box)``.

    ``d`` is ``g`` itself or, with ``normalize_step``, ``g / ||g||_inf``, so
    the step length does not depend on the MW scale of the balance mismatch.
    """
    mu = np.asarray(mu, dtype=float).reshape(state.shape)
    g = np.asarray(g, dtype=float).reshape(state.shape)
    gmax = float(np.max(np.abs(g), initial=0.0))
    if state.config.normalize_step and gmax > 0:
        g = g / gmax
    nxt = mu + step_size(state) * g
    if state.config.mu_box is not None:
        nxt = np.clip(nxt, *state.config.mu_box)
    state.last_step_norm = float(np.max(np.abs(nxt - mu), initial=0.0))
    return nxt


def check_termination(state: BundleState) -> bool:
    if state.config.method == SUBGRADIENT:
        return state.last_step_norm is not None and state.last_step_norm < state.config.epsilon
    return state.eta is not None and state.eta < state.config.epsilon
