"""Constrained descent loop on the level set.

One iteration: solve the coupled state, form smoothed gradient velocities
for the objective and both pressure-drop constraints, combine them into a
null-space search direction (objective component projected out of the
active constraint span, plus a violation-correcting component), transport
the level set under a merit line search, and redistance once the traveled
pseudo-distance passes its threshold.  The penalization is tightened once,
the first time both constraints hold.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConstraintsError, InvalidArgumentError, SolverFailure


@dataclass
class OptimizerConfig:
    alpha_j: float = 1.0  # objective flow weight
    alpha_c: float = 1.0  # constraint-correction flow weight
    t_final: float = 0.05  # pseudo-time cap per accepted step
    maxtrials: int = 5  # line-search halvings
    d_max: float = 0.08  # traveled distance between redistancing events
    maxiter: int = 100
    tol: float = 0.0  # stop when the direction norm drops below this
    p_drop: float = 2.0
    activity_fraction: float = 0.01  # of p_drop: constraint considered active

    def __post_init__(self):
        if self.maxtrials < 1:
            raise InvalidArgumentError("maxtrials must be at least 1")
        if self.d_max <= 0:
            raise InvalidArgumentError("d_max must be positive")
        if self.p_drop <= 0:
            raise InvalidArgumentError("p_drop must be positive")


@dataclass
class IterationRecord:
    iteration: int
    j: float
    g1: float
    g2: float
    merit: float
    t_hat: float
    theta_max: float
    tau: float
    reinit: bool
    da: float
    trials: int = 0
    exhausted: bool = False


@dataclass
class OptimizationHistory:
    records: list = field(default_factory=list)
    config_snapshot: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    termination: str = ""
    final_phi: object = None
    final_payload: object = None

    def append(self, record: IterationRecord):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise InvalidArgumentError("iteration indices must strictly increase")
        self.records.append(record)


# ---------------------------------------------------------------------------
# search direction
# ---------------------------------------------------------------------------


def _prune_nonnegative(gram, rhs):
    """Solve gram @ x = rhs restricted to x >= 0 by dropping the most
    negative multiplier and re-solving on the remaining set."""
    m = rhs.size
    active = list(range(m))
    x = np.zeros(m)
    while active:
        sub = np.ix_(active, active)
        try:
            sol = np.linalg.solve(gram[sub], rhs[active])
        except np.linalg.LinAlgError as exc:
            raise DegenerateConstraintsError(f"singular constraint Gram matrix: {exc}") from exc
        if np.all(sol >= 0.0):
            x[:] = 0.0
            x[active] = sol
            return x
        drop = active[int(np.argmin(sol))]
        active.remove(drop)
    return np.zeros(m)


def nullspace_direction(zeta_j, zeta_g, g_values, p_drop, b_inner, config: OptimizerConfig):
    """Search direction from the objective and constraint velocities.

    zeta_j is the smoothed gradient of the *minimized* objective; the step
    is theta = -alpha_j * (zeta_j projected off the active constraint span)
    - alpha_c * (violation-correcting combination of constraint velocities).
    Multipliers are kept nonnegative by active-set pruning.
    """
    zeta_g = list(zeta_g)
    g_values = np.asarray(g_values, dtype=float)
    eps_act = config.activity_fraction * p_drop
    active = [i for i in range(len(zeta_g)) if g_values[i] >= p_drop - eps_act]

    xi_obj = np.array(zeta_j, dtype=float, copy=True)
    xi_corr = np.zeros_like(xi_obj)
    if active:
        gram = np.array([[b_inner(zeta_g[i], zeta_g[j]) for j in active] for i in active])
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e14:
            raise DegenerateConstraintsError(f"constraint Gram matrix is singular (cond={cond:.2e})")
        proj_rhs = np.array([b_inner(zeta_g[i], zeta_j) for i in active])
        mu = _prune_nonnegative(gram, proj_rhs)
        corr_rhs = np.array([g_values[i] - p_drop for i in active])
        nu = _prune_nonnegative(gram, corr_rhs)
        for k, i in enumerate(active):
            xi_obj -= mu[k] * zeta_g[i]
            xi_corr += nu[k] * zeta_g[i]
    return -config.alpha_j * xi_obj - config.alpha_c * xi_corr


def merit(j_hat, g_values, p_drop, config: OptimizerConfig):
    """Objective plus normalized quadratic constraint violation.

    j_hat is the minimized objective value (negated heat flux).
    """
    viol = np.maximum(np.asarray(g_values, dtype=float) - p_drop, 0.0)
    scale = max(p_drop, 1.0) ** 2
    return config.alpha_j * j_hat + 0.5 * config.alpha_c * float(np.sum(viol**2)) / scale


# ---------------------------------------------------------------------------
# line search
# ---------------------------------------------------------------------------


def line_search_step(phi_n, theta, t_final, merit_n, evaluator, config: OptimizerConfig):
    """Accept the first halved pseudo-time whose merit does not increase.

    `evaluator.advect(phi, theta, t)` produces a candidate level set and
    `evaluator(phi_candidate)` re-solves the state, returning (merit,
    payload).  Candidates use t_final / 2^k for k = 0 .. maxtrials; if none
    improves, the last candidate is returned with the exhausted flag set
    (the loop continues rather than failing).
    Returns (phi_next, accepted_t, trials_used, exhausted, payload).
    """
    last = None
    for k in range(config.maxtrials + 1):
        t_k = t_final / (2.0**k)
        phi_k = evaluator.advect(phi_n, theta, t_k)
        try:
            merit_k, payload = evaluator(phi_k)
        except SolverFailure as exc:
            raise SolverFailure(f"state solve failed at line-search trial {k}: {exc}",
                                residual_history=exc.residual_history) from exc
        last = (phi_k, t_k, k, merit_k, payload)
        if merit_k <= merit_n:
            return phi_k, t_k, k, False, payload
    phi_k, t_k, k, merit_k, payload = last
    return phi_k, t_k, k, True, payload


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------


class _LineSearchEvaluator:
    """Binds the problem's advect + re-solve to one iteration's penalization
    level and warm-start states."""

    def __init__(self, problem, da, warm_payload, config):
        self.problem = problem
        self.da = da
        self.warm = warm_payload
        self.config = config

    def advect(self, phi, theta, t_hat):
        return self.problem.advect(phi, theta, t_hat)

    def __call__(self, phi_candidate):
        payload = self.problem.solve(phi_candidate, self.da, warm=self.warm)
        j, g1, g2 = self.problem.functionals(payload)
        m = merit(-j, (g1, g2), self.config.p_drop, self.config)
        return m, (payload, j, g1, g2)


def run_optimization(problem, config: OptimizerConfig, observer=None) -> OptimizationHistory:
    """Drive the level-set descent loop on a problem object.

    The problem supplies:
      initial_phi() -> phi
      solve(phi, da, warm) -> state payload
      functionals(payload) -> (j, g1, g2)   [j is the maximized heat flux]
      velocities(phi, payload, da) -> (zeta_jhat, [zeta_g1, zeta_g2])
      b_inner(f, g) -> float
      advect(phi, theta, t_hat) -> phi
      reinitialize(phi) -> phi
      da0 -> initial penalization number
      tighten(da) -> stronger-penalization value

    Any stage failure propagates after the partial history is recorded in
    `problem.history` via the observer callback.
    """
    history = OptimizationHistory(config_snapshot=dict(vars(config)))
    t_start = time.time()
    phi = problem.initial_phi()
    da = problem.da0
    tau = 0.0
    tightened = False

    payload = problem.solve(phi, da, warm=None)
    j, g1, g2 = problem.functionals(payload)
    history.initial = {"j": j, "g1": g1, "g2": g2, "merit": merit(-j, (g1, g2), config.p_drop, config), "da": da}

    try:
        for n in range(1, config.maxiter + 1):
            if not tightened and g1 <= config.p_drop and g2 <= config.p_drop:
                da = problem.tighten(da)
                tightened = True
                payload = problem.solve(phi, da, warm=payload)
                j, g1, g2 = problem.functionals(payload)

            merit_n = merit(-j, (g1, g2), config.p_drop, config)
            zeta_jhat, zeta_g = problem.velocities(phi, payload, da)
            theta = nullspace_direction(zeta_jhat, zeta_g, (g1, g2), config.p_drop, problem.b_inner, config)
            theta_norm = float(np.sqrt(max(problem.b_inner(theta, theta), 0.0)))
            tmax = float(np.abs(np.asarray(theta)).sum(axis=-1).max())

            evaluator = _LineSearchEvaluator(problem, da, payload, config)
            phi_next, t_acc, trials, exhausted, (payload_next, j, g1, g2) = line_search_step(
                phi, theta, config.t_final, merit_n, evaluator, config
            )
            phi = phi_next
            payload = payload_next
            tau += tmax * t_acc
            reinit_flag = tau >= config.d_max
            if reinit_flag:
                phi = problem.reinitialize(phi)
                tau = 0.0

            record = IterationRecord(
                iteration=n,
                j=j,
                g1=g1,
                g2=g2,
                merit=merit(-j, (g1, g2), config.p_drop, config),
                t_hat=t_acc,
                theta_max=tmax,
                tau=tau,
                reinit=reinit_flag,
                da=da,
                trials=trials,
                exhausted=exhausted,
            )
            history.append(record)
            if observer is not None:
                observer(history, record, phi, payload)
            if theta_norm <= config.tol:
                history.termination = "direction-norm"
                break
        else:
            history.termination = "maxiter"
    except Exception as exc:
        # abort, but hand the partial history to the caller on the exception
        history.termination = f"aborted: {exc}"
        exc.history = history
        raise
    finally:
        history.wall_clock = time.time() - t_start
        history.final_phi = phi
        history.final_payload = payload
    return history
