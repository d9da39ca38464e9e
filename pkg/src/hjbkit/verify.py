"""Model-agnostic verification machinery.

Every model exposes a :class:`ModelHandle` bundling the five callbacks the
dynamic-programming identities need (value, feedback, one-step transition,
running payoff, domain membership).  On top of it:

* ``value_match`` -- the infinite-horizon identity: truncated discounted
  payoff plus the discounted analytic tail must reproduce the analytic
  value along the optimal feedback; any admissible control scores at most
  that (suboptimality direction).
* ``dpp_check`` -- the same identity on a short window [0, r].
* ``transversality`` -- log-slope of t -> e^{-rho t} |v(y(t))| over the
  trajectory's last quartile (a finite-time surrogate for the asymptotic
  transversality conditions, which are limsup/liminf statements).
* ``brute_force_value`` -- a backward-sweep dynamic-programming oracle over
  a tube of control perturbations around the feedback path, with zero
  terminal value and an explicit truncation bound.  It certifies the
  closed-form value from below and brackets it from above without ever
  evaluating the value callback.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainExitError, NumericsError


class OracleBudgetError(NumericsError):
    """The DP oracle ran out of its evaluation budget."""


def _default_scale(control, s):
    return s * control


@dataclass
class ModelHandle:
    """Uniform face over one model instance.

    ``control_bounds`` (box per state) and ``payoff_tail_bound`` (an upper
    bound on any admissible continuation's remaining discounted payoff) are
    only needed by the DP oracle; ``scale_control`` adapts scalar scaling
    to composite controls.
    """

    value: Callable
    feedback: Callable
    step: Callable
    running_payoff: Callable
    rho: float
    domain_check: Callable
    control_bounds: Callable | None = None
    payoff_tail_bound: Callable | None = None
    scale_control: Callable = _default_scale
    dt_hint: float | None = None

    def oracle_problem(self) -> "OracleProblem":
        """Strip the handle down to what the DP oracle may consume; the
        value callback is deliberately absent."""
        return OracleProblem(self.step, self.running_payoff, self.rho,
                             self.domain_check, self.control_bounds,
                             self.payoff_tail_bound)


@dataclass(frozen=True)
class OracleProblem:
    """Step/payoff view of a model, structurally unable to peek at the
    closed-form value."""

    step: Callable
    running_payoff: Callable
    rho: float
    domain_check: Callable
    control_bounds: Callable | None
    payoff_tail_bound: Callable | None


@dataclass
class ValueMatch:
    analytic: float
    payoff: float
    tail: float
    rel_gap: float

    @property
    def total(self) -> float:
        return self.payoff + self.tail


def _rollout(handle: ModelHandle, state0, n_steps: int, dt: float,
             control_scale: float):
    """Closed-loop run under the (scaled) feedback.

    Controls are held constant on each step (the handle's step map
    integrates that piecewise-constant policy), and the payoff trapezoid
    uses the step's own control at both endpoints, so the run evaluates an
    explicit admissible policy with O(dt^2) quadrature error regardless of
    horizon length.
    """
    times = dt * np.arange(n_steps + 1)
    states, controls = [], []
    running = np.zeros(n_steps + 1)
    state = state0
    for k in range(n_steps):
        if not handle.domain_check(state):
            raise DomainExitError(
                f"state left the domain at t = {times[k]:.6g}",
                time=float(times[k]))
        u = handle.scale_control(handle.feedback(state), control_scale)
        states.append(state)
        controls.append(u)
        g_left = handle.running_payoff(state, u)
        state = handle.step(state, u, dt)
        g_right = handle.running_payoff(state, u)
        running[k + 1] = running[k] + 0.5 * dt * (
            np.exp(-handle.rho * times[k]) * g_left
            + np.exp(-handle.rho * times[k + 1]) * g_right)
    if not handle.domain_check(state):
        raise DomainExitError(
            f"state left the domain at t = {times[-1]:.6g}",
            time=float(times[-1]))
    states.append(state)
    controls.append(handle.scale_control(handle.feedback(state),
                                         control_scale))
    return times, states, controls, running


def value_match(handle: ModelHandle, state0, T_end: float,
                dt: float | None = None,
                control_scale: float = 1.0) -> ValueMatch:
    """Truncated payoff + discounted analytic tail vs. the analytic value.

    Along the optimal feedback the identity is exact in the continuum, so
    the relative gap measures pure discretization error; with
    ``control_scale != 1`` the result must fall strictly below the value
    (suboptimality direction of the verification theorem).
    """
    dt = dt if dt is not None else (handle.dt_hint or 1e-2)
    n_steps = int(round(T_end / dt))
    times, states, _, running = _rollout(handle, state0, n_steps, dt,
                                         control_scale)
    payoff = float(running[-1])
    tail = float(np.exp(-handle.rho * times[-1]) * handle.value(states[-1]))
    analytic = float(handle.value(state0))
    rel_gap = abs(payoff + tail - analytic) / max(abs(analytic), 1e-300)
    return ValueMatch(analytic, payoff, tail, rel_gap)


def dpp_check(handle: ModelHandle, state0, r: float,
              dt: float | None = None) -> float:
    """Relative gap in the dynamic-programming identity on [0, r] along the
    feedback (zero at r = 0, O(dt^2) for a single step, growing linearly
    in r at fixed dt)."""
    dt = dt if dt is not None else (handle.dt_hint or 1e-2)
    if r == 0.0:
        return 0.0
    vm = value_match(handle, state0, r, dt)
    return vm.rel_gap


def transversality(handle: ModelHandle, traj) -> float:
    """Log-slope of t -> e^{-rho t} |v(y(t))| over the last quartile.

    A negative slope is finite-time evidence for the vanishing-discounted-
    value condition closing the infinite-horizon verification argument.
    """
    times = traj.times
    vals = np.array([abs(handle.value(s)) for s in traj.states])
    vals = np.maximum(vals, 1e-300)
    logs = -handle.rho * times + np.log(vals)
    q = 3 * len(times) // 4
    t_tail, l_tail = times[q:], logs[q:]
    slope = np.polyfit(t_tail, l_tail, 1)[0]
    return float(slope)


def suboptimality_margin(handle: ModelHandle, state0, T_end: float,
                         dt: float | None = None,
                         control_scale: float = 0.5) -> float:
    """How far a deliberately perturbed control scores below the value:
    (analytic - (payoff+tail)) / |analytic|.  Positive for genuinely
    suboptimal controls."""
    vm = value_match(handle, state0, T_end, dt, control_scale=control_scale)
    return (vm.analytic - vm.total) / max(abs(vm.analytic), 1e-300)


@dataclass
class OracleBracket:
    """Outcome of the DP oracle: the best truncated-horizon payoff found,
    the reported truncation bound, and the implied bracket [lo, hi]."""

    lo: float
    hi: float
    truncated_value: float
    tail_bound: float
    evaluations: int
    passes: int

    def contains(self, value: float, slack: float = 0.03) -> bool:
        width = slack * max(abs(self.lo), abs(self.hi), 1e-300)
        return self.lo - width <= value <= self.hi + width


def brute_force_value(problem: OracleProblem, state0, dt: float,
                      T_end: float, n_controls: int = 33,
                      span: float = 0.5, span_min: float = 4e-3,
                      max_passes: int = 12, seed_controls=None,
                      budget: int = 20_000_000) -> OracleBracket:
    """Backward-sweep dynamic programming over a tube of control levels.

    The control path starts from ``seed_controls`` (one entry per step;
    typically the feedback path) and is improved by repeated
    backward-in-time sweeps: at each step the control tries ``n_controls``
    levels spanning ``+-span`` (relative) around the current choice,
    clipped to the admissible box, and keeps whatever maximizes the
    remaining discounted payoff with ZERO terminal value.  The span halves
    whenever a sweep stops paying.  For these concave problems the sweeps
    converge to the truncated-discrete optimum, which bounds the analytic
    value from below; adding the truncation bound gives the upper bracket
    edge.  ``lo`` always corresponds to an explicitly evaluated feasible
    policy, whatever the pass count.

    The recursion consumes only the step/payoff callbacks (no value
    callback exists on :class:`OracleProblem`).
    """
    n_steps = int(round(T_end / dt))
    times = dt * np.arange(n_steps + 1)
    disc = np.exp(-problem.rho * times)
    evals = 0

    def clip(u, state):
        if problem.control_bounds is None:
            return u
        lo, hi = problem.control_bounds(state)
        eps = 1e-12 * max(1.0, abs(hi))
        return min(max(u, lo + eps), hi - eps)

    def forward(controls, start_state, start_idx, prefix_payoff):
        """Payoff of the truncated problem when following ``controls`` from
        ``start_idx`` on; each step holds its control and contributes a
        control-consistent trapezoid cell; zero tail."""
        nonlocal evals
        state = start_state
        total = prefix_payoff
        for k in range(start_idx, n_steps):
            if not problem.domain_check(state):
                return -np.inf, None
            u = controls[k]
            g_left = problem.running_payoff(state, u)
            state = problem.step(state, u, dt)
            g_right = problem.running_payoff(state, u)
            evals += 2
            total += 0.5 * dt * (disc[k] * g_left + disc[k + 1] * g_right)
        if not problem.domain_check(state):
            return -np.inf, None
        return total, state

    if seed_controls is None:
        raise ValueError("seed_controls is required (e.g. the feedback path)")
    controls = list(seed_controls)
    if len(controls) != n_steps:
        raise ValueError(
            f"seed controls must have {n_steps} entries (one per step), "
            f"got {len(controls)}"
        )

    best, final_state = forward(controls, state0, 0, 0.0)
    if not np.isfinite(best):
        raise DomainExitError("seed control path leaves the domain", time=0.0)

    offsets = np.linspace(-1.0, 1.0, n_controls) if n_controls > 1 \
        else np.array([0.0])
    cur_span = span
    passes = 0
    while passes < max_passes and cur_span > span_min:
        best_at_pass_start = best
        passes += 1
        for j in range(n_steps - 1, -1, -1):
            # walk the fixed prefix [0, j) once
            state = state0
            prefix = 0.0
            for k in range(j):
                u = controls[k]
                g_left = problem.running_payoff(state, u)
                state = problem.step(state, u, dt)
                g_right = problem.running_payoff(state, u)
                prefix += 0.5 * dt * (disc[k] * g_left + disc[k + 1] * g_right)
            base = controls[j]
            candidates = base * (1.0 + cur_span * offsets)
            best_j, best_u, best_final = -np.inf, base, None
            for cand in dict.fromkeys(float(clip(c, state)) for c in candidates):
                controls[j] = cand
                val, fstate = forward(controls, state, j, prefix)
                if val > best_j:
                    best_j, best_u, best_final = val, cand, fstate
            controls[j] = best_u
            if best_j > best:
                best = best_j
                final_state = best_final
            if evals > budget:
                raise OracleBudgetError(
                    f"DP oracle exceeded its evaluation budget ({budget})"
                )
        if best - best_at_pass_start < 1e-7 * max(1.0, abs(best)):
            cur_span *= 0.5  # sweep stopped paying at this resolution

    if problem.payoff_tail_bound is None:
        tail_bound = 0.0
    else:
        tail_bound = float(problem.payoff_tail_bound(final_state, times[-1]))
    return OracleBracket(lo=float(best), hi=float(best + tail_bound),
                         truncated_value=float(best),
                         tail_bound=float(tail_bound),
                         evaluations=evals, passes=passes)


@dataclass
class VerifyReport:
    """Aggregated verification outcome for one model scenario."""

    model: str
    residual_max: float
    residual_mean: float
    residual_refined_max: float | None
    value_match_gap: float
    suboptimal_margin: float
    transversality_slope: float
    tolerances: dict
    oracle: OracleBracket | None = None
    oracle_value: float | None = None
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def check(self) -> "VerifyReport":
        """Populate ``failures`` from the recorded tolerances."""
        tol = self.tolerances
        self.failures = []
        if self.residual_max > tol["residual"]:
            self.failures.append(
                f"hjb residual {self.residual_max:.3e} > {tol['residual']:.1e}")
        if self.residual_refined_max is not None and self.residual_max > 1e-12 \
                and self.residual_refined_max > 0.5 * self.residual_max:
            self.failures.append(
                f"refined residual {self.residual_refined_max:.3e} did not "
                f"halve from {self.residual_max:.3e}")
        if self.value_match_gap > tol["value_match"]:
            self.failures.append(
                f"value-match gap {self.value_match_gap:.3e} > "
                f"{tol['value_match']:.1e}")
        if self.suboptimal_margin <= tol["value_match"]:
            self.failures.append(
                "suboptimal control does not score below the value by more "
                f"than the tolerance (margin {self.suboptimal_margin:.3e})")
        if self.transversality_slope >= 0.0:
            self.failures.append(
                f"transversality slope {self.transversality_slope:.3e} "
                "is not negative")
        if self.oracle is not None and not self.oracle.contains(
                self.oracle_value, tol["oracle_slack"]):
            self.failures.append(
                f"analytic value {self.oracle_value:.6g} outside DP bracket "
                f"[{self.oracle.lo:.6g}, {self.oracle.hi:.6g}]")
        return self

    def to_dict(self) -> dict:
        out = {
            "model": self.model,
            "residual_max": self.residual_max,
            "residual_mean": self.residual_mean,
            "residual_refined_max": self.residual_refined_max,
            "value_match_gap": self.value_match_gap,
            "suboptimal_margin": self.suboptimal_margin,
            "transversality_slope": self.transversality_slope,
            "tolerances": {k: v for k, v in self.tolerances.items()},
            "passed": self.passed,
            "failures": list(self.failures),
        }
        if self.oracle is not None:
            out["oracle"] = {
                "lo": self.oracle.lo,
                "hi": self.oracle.hi,
                "truncated_value": self.oracle.truncated_value,
                "tail_bound": self.oracle.tail_bound,
                "evaluations": self.oracle.evaluations,
                "passes": self.oracle.passes,
                "analytic_value": self.oracle_value,
            }
        return out
