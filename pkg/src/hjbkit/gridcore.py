"""Grids, quadrature, divergence-form stencils and time integrators.

Everything downstream lives on one of three discretizations:

* ``CircleGrid`` -- uniform periodic grid on the circle, for the parabolic
  models (spatial growth, pollution).
* ``HistorySegment`` -- uniform samples of a lag function on ``[-d, 0]``,
  for the delay models (vintage capital, time-to-build).
* ``AgeGrid`` -- uniform node grid on ``[0, sbar]``, for the age-structured
  transport model.

All containers are plain immutable data; the operations below are pure
functions, so values can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import solve_banded

from .errors import GridError, NumericsError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class CircleGrid:
    """Uniform periodic grid with nodes theta_j = 2*pi*j/n."""

    n: int

    def __post_init__(self):
        if self.n < 8:
            raise GridError(f"circle grid needs n >= 8 nodes, got {self.n}")

    @property
    def h(self) -> float:
        return TWO_PI / self.n

    @property
    def nodes(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n) / self.n

    def field(self, values) -> "Field":
        return Field(self, np.asarray(values, dtype=float))

    def constant(self, c: float) -> "Field":
        return Field(self, np.full(self.n, float(c)))

    def from_function(self, fn) -> "Field":
        return Field(self, np.asarray(fn(self.nodes), dtype=float))


@dataclass(frozen=True)
class Field:
    """Real-valued function sampled on a :class:`CircleGrid`.

    Arithmetic requires both operands to live on the identical grid;
    mixing grids raises :class:`GridError`.
    """

    grid: CircleGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n,):
            raise GridError(
                f"field needs {self.grid.n} values, got shape {vals.shape}"
            )
        object.__setattr__(self, "values", vals)

    def _check(self, other: "Field") -> None:
        if not isinstance(other, Field):
            raise TypeError(f"expected Field, got {type(other).__name__}")
        if other.grid.n != self.grid.n:
            raise GridError(
                f"grid mismatch: n={self.grid.n} vs n={other.grid.n}"
            )

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values + other.values)
        return Field(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values - other.values)
        return Field(self.grid, self.values - float(other))

    def __rsub__(self, other):
        return Field(self.grid, float(other) - self.values)

    def __mul__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values * other.values)
        return Field(self.grid, self.values * float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values / other.values)
        return Field(self.grid, self.values / float(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __pow__(self, p):
        return Field(self.grid, self.values ** float(p))

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


def quad_circle(f: Field) -> float:
    """Integral over the circle by the rectangle rule, h * sum(f).

    On a uniform periodic grid this rule is exact for constants and kills
    the first n/2 - 1 Fourier harmonics to machine precision (it is the
    trapezoid rule of periodic functions), hence spectrally accurate for
    smooth integrands.
    """
    return float(f.grid.h * f.values.sum())


def inner_product(f: Field, g: Field) -> float:
    """L2 pairing <f, g> = integral of f*g over the circle."""
    f._check(g)
    return float(f.grid.h * (f.values * g.values).sum())


def _stencil_coefficients(sigma: Field, zeroth: Field):
    """Periodic tridiagonal coefficients of f -> (sigma f')' + zeroth*f.

    Returns ``(lo, di, up)`` where row j of the operator reads
    ``lo[j]*f[j-1] + di[j]*f[j] + up[j]*f[j+1]`` with indices mod n.
    ``lo[0]`` and ``up[-1]`` are the periodic corner entries.
    """
    sigma._check(zeroth)
    h2 = sigma.grid.h ** 2
    s = sigma.values
    s_plus = 0.5 * (s + np.roll(s, -1))   # sigma_{j+1/2}
    s_minus = np.roll(s_plus, 1)          # sigma_{j-1/2}
    lo = s_minus / h2
    up = s_plus / h2
    di = -(s_plus + s_minus) / h2 + zeroth.values
    return lo, di, up


def sl_apply(sigma: Field, zeroth: Field, f: Field) -> Field:
    """Apply the divergence-form operator f -> (sigma f')' + zeroth*f.

    Second-order centered stencil with arithmetic-mean interface values
    sigma_{j+1/2}; the periodic wrap makes the discrete operator exactly
    self-adjoint for the grid inner product.
    """
    if sigma.min() <= 0.0:
        raise GridError(f"sigma must be positive, min = {sigma.min()}")
    sigma._check(f)
    lo, di, up = _stencil_coefficients(sigma, zeroth)
    v = f.values
    out = lo * np.roll(v, 1) + di * v + up * np.roll(v, -1)
    return Field(f.grid, out)


def apply_periodic_tridiagonal(lo, di, up, v):
    """Matrix-vector product for the periodic tridiagonal layout above."""
    return lo * np.roll(v, 1) + di * v + up * np.roll(v, -1)


def solve_periodic_tridiagonal(lo, di, up, rhs):
    """Solve the cyclic tridiagonal system with rows lo,di,up (indices mod n).

    Sherman-Morrison reduction: the two periodic corner entries are split
    off as a rank-one update of a plain tridiagonal matrix, which is solved
    twice with the banded LAPACK driver.
    """
    n = len(di)
    if n < 3:
        raise GridError("cyclic tridiagonal solve needs n >= 3")
    corner_tr = lo[0]    # entry (0, n-1)
    corner_bl = up[-1]   # entry (n-1, 0)
    gamma = -di[0] if di[0] != 0.0 else 1.0
    dmod = di.copy()
    dmod[0] -= gamma
    dmod[-1] -= corner_tr * corner_bl / gamma

    ab = np.zeros((3, n))
    ab[0, 1:] = up[:-1]
    ab[1, :] = dmod
    ab[2, :-1] = lo[1:]

    u = np.zeros(n)
    u[0] = gamma
    u[-1] = corner_bl
    try:
        y, z = solve_banded((1, 1), ab, np.column_stack([rhs, u]),
                            check_finite=False).T
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"singular cyclic tridiagonal system: {exc}") from exc
    denom = 1.0 + z[0] + corner_tr * z[-1] / gamma
    if denom == 0.0 or not np.isfinite(denom):
        raise NumericsError("singular cyclic tridiagonal system (rank-one update)")
    x = y - ((y[0] + corner_tr * y[-1] / gamma) / denom) * z
    # LAPACK does not flag (near-)singular banded systems -- it returns a
    # backward-stable but meaningless vector -- so verify the defect
    # against the right-hand side
    defect = np.abs(apply_periodic_tridiagonal(lo, di, up, x) - rhs).max()
    if not np.isfinite(x).all() \
            or defect > 1e-8 * max(np.abs(rhs).max(), 1e-300):
        raise NumericsError(
            f"cyclic tridiagonal solve failed its residual check (defect "
            f"{defect:.3e}); the system is singular or severely "
            "ill-conditioned"
        )
    return x


def cn_step(sigma: Field, zeroth: Field, y: Field, source: Field,
            dt: float) -> Field:
    """One Crank-Nicolson step of y' = L y + source, L = (sigma y')' + zeroth*y.

    Solves ``(I - dt/2 L) y+ = (I + dt/2 L) y + dt*source``.  The scheme is
    A-stable and second order; the left-hand matrix is strictly diagonally
    dominant (hence nonsingular) for every dt > 0 when zeroth <= 0, and for
    dt * max(zeroth) < 2 otherwise.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if sigma.min() <= 0.0:
        raise GridError(f"sigma must be positive, min = {sigma.min()}")
    sigma._check(y)
    sigma._check(source)
    lo, di, up = _stencil_coefficients(sigma, zeroth)
    half = 0.5 * dt
    rhs = apply_periodic_tridiagonal(half * lo, 1.0 + half * di, half * up,
                                     y.values) + dt * source.values
    out = solve_periodic_tridiagonal(-half * lo, 1.0 - half * di, -half * up,
                                     rhs)
    return Field(y.grid, out)


@dataclass(frozen=True)
class HistorySegment:
    """Uniform samples of a lag function on [-d, 0].

    ``values[k]`` is the sample at ``s_k = -d + k*(d/m)`` for k = 0..m, so
    index 0 is the oldest point (s = -d) and index m the newest (s = 0).
    """

    d: float
    values: np.ndarray

    def __post_init__(self):
        if self.d <= 0.0:
            raise GridError(f"delay must be positive, got {self.d}")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or len(vals) < 5:
            raise GridError(
                f"history needs m >= 4 intervals (>= 5 samples), got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise GridError("history contains non-finite samples")
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return len(self.values) - 1

    @property
    def dt(self) -> float:
        return self.d / self.m

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.d, 0.0, self.m + 1)

    @classmethod
    def from_function(cls, d: float, m: int, fn) -> "HistorySegment":
        s = np.linspace(-d, 0.0, m + 1)
        return cls(d, np.asarray(fn(s), dtype=float))

    @classmethod
    def constant(cls, d: float, m: int, c: float) -> "HistorySegment":
        return cls(d, np.full(m + 1, float(c)))


def history_advance(hseg: HistorySegment, dt: float,
                    new_value: float) -> HistorySegment:
    """Shift the segment one sample into the past and append ``new_value``
    at s = 0.  ``dt`` must equal the sample spacing (simulations lock
    dt = d/m, so the shift is exact and never interpolates)."""
    if not np.isclose(dt, hseg.dt, rtol=1e-12, atol=0.0):
        raise GridError(
            f"dt = {dt} does not match the history spacing {hseg.dt}"
        )
    vals = np.empty_like(hseg.values)
    vals[:-1] = hseg.values[1:]
    vals[-1] = float(new_value)
    return HistorySegment(hseg.d, vals)


def history_replace_last(hseg: HistorySegment, value: float) -> HistorySegment:
    """Copy of the segment with the s = 0 sample replaced.

    Simulations march a window of applied controls: the newest slot starts
    as a placeholder (the previous control) and is corrected once the
    current control is chosen, keeping every slot aligned with the time it
    was actually applied.
    """
    vals = hseg.values.copy()
    vals[-1] = float(value)
    return HistorySegment(hseg.d, vals)


def history_weighted_sum(hseg: HistorySegment, rate: float) -> float:
    """Trapezoid quadrature of exp(rate*s) * x1(s) over [-d, 0]."""
    s = hseg.nodes
    return float(trapezoid(np.exp(rate * s) * hseg.values, dx=hseg.dt))


@dataclass(frozen=True)
class StructuralState:
    """Lifted state of a delay model: scalar head x0 plus lag tail x1."""

    head: float
    tail: HistorySegment

    def __post_init__(self):
        if not np.isfinite(self.head):
            raise GridError(f"head must be finite, got {self.head}")

    def scaled(self, k: float) -> "StructuralState":
        return StructuralState(k * self.head,
                               HistorySegment(self.tail.d, k * self.tail.values))


@dataclass(frozen=True)
class AgeGrid:
    """Uniform node grid on the age interval [0, sbar] with m cells."""

    sbar: float
    m: int

    def __post_init__(self):
        if self.sbar <= 0.0:
            raise GridError(f"sbar must be positive, got {self.sbar}")
        if self.m < 4:
            raise GridError(f"age grid needs m >= 4 cells, got {self.m}")

    @property
    def h(self) -> float:
        return self.sbar / self.m

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.sbar, self.m + 1)

    def profile(self, values) -> np.ndarray:
        vals = np.asarray(values, dtype=float)
        if vals.shape != (self.m + 1,):
            raise GridError(
                f"age profile needs {self.m + 1} values, got shape {vals.shape}"
            )
        return vals

    def quad(self, values) -> float:
        """Trapezoid quadrature over [0, sbar]."""
        return float(trapezoid(self.profile(values), dx=self.h))


@dataclass
class Trajectory:
    """Time-stamped closed-loop record: states, controls, running payoff.

    ``running_payoff[k]`` is the discounted payoff accumulated on
    ``[times[0], times[k]]``; ``meta`` carries model-specific diagnostics
    (positivity flags, minima, growth summaries).
    """

    times: np.ndarray
    states: list
    controls: list
    running_payoff: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(t) != len(self.states) or len(t) != len(self.controls) \
                or len(t) != len(self.running_payoff):
            raise ValueError("trajectory arrays must share one length")
        steps = np.diff(t)
        if len(steps) and (np.any(steps <= 0.0)
                           or not np.allclose(steps, steps[0], rtol=1e-9)):
            raise ValueError("times must increase with a constant step")
        object.__setattr__(self, "times", t)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def payoff(self) -> float:
        return float(self.running_payoff[-1])


def discounted_quadrature(times: np.ndarray, integrand: np.ndarray,
                          rho: float) -> np.ndarray:
    """Cumulative trapezoid of exp(-rho*t) * integrand along ``times``."""
    g = np.exp(-rho * np.asarray(times)) * np.asarray(integrand)
    out = np.zeros_like(g)
    if len(g) > 1:
        steps = np.diff(times)
        out[1:] = np.cumsum(0.5 * steps * (g[1:] + g[:-1]))
    return out
