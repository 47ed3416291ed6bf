"""Travel-time distributions: closed-form exponential sums and gridded CDFs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy import signal, stats

from .errors import NumericalError

# mass below this is treated as zero when trimming supports before convolution
_TRIM = 1e-16


class DistKind(str, Enum):
    CLOSED_FORM = "closed_form"
    GRIDDED = "gridded"


@dataclass(frozen=True)
class ExpTerm:
    """One ``coef * t**power * exp(rate * t)`` term of a CDF complement."""

    coef: float
    power: int
    rate: float


@dataclass(frozen=True, eq=False)
class TravelTimeDistribution:
    kind: DistKind
    step: float
    horizon: float
    terms: tuple[ExpTerm, ...] = ()
    grid_cdf: np.ndarray | None = field(default=None, repr=False)
    # analytic CDF behind a gridded distribution, used for discretisation only
    exact_cdf: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_points(self) -> int:
        return int(round(self.horizon / self.step)) + 1

    def times(self) -> np.ndarray:
        return np.arange(self.n_points) * self.step

    def cdf(self, t):
        t_arr = np.asarray(t, dtype=float)
        if self.kind is DistKind.CLOSED_FORM:
            out = 1.0 - _eval_terms(self.terms, np.maximum(t_arr, 0.0))
            out = np.where(t_arr < 0, 0.0, out)
        elif self.exact_cdf is not None:
            # keeps atoms (e.g. at the deterministic service time) sharp
            out = self.exact_cdf(t_arr)
        else:
            out = np.interp(t_arr, self.times(), self.grid_cdf, left=0.0, right=self.grid_cdf[-1])
        out = np.clip(out, 0.0, 1.0)
        return float(out) if np.ndim(out) == 0 else out

    def sf(self, t):
        return 1.0 - self.cdf(t)

    def on_grid(self) -> tuple[np.ndarray, np.ndarray]:
        t = self.times()
        if self.kind is DistKind.GRIDDED:
            return t, self.grid_cdf
        return t, self.cdf(t)

    def mean(self) -> float:
        if self.kind is DistKind.CLOSED_FORM:
            return float(sum(term.coef * math.factorial(term.power) / (-term.rate) ** (term.power + 1) for term in self.terms))
        t, f = self.on_grid()
        return float(np.trapezoid(1.0 - f, t))

    @property
    def exponential_rate(self) -> float | None:
        """Rate r if this is exactly the CDF 1 - exp(-r t), else None."""
        if self.kind is DistKind.CLOSED_FORM and len(self.terms) == 1:
            term = self.terms[0]
            if term.power == 0 and term.coef == 1.0:
                return -term.rate
        return None

    def cell_masses(self, trim: bool = True) -> np.ndarray:
        """Probability mass rounded to the nearest grid point.

        Entry j holds P(j*step - step/2 < X <= j*step + step/2); unbiased
        rounding keeps convolution error second order in the step.
        """
        t = self.times()
        upper = self._fine_cdf(t + 0.5 * self.step)
        lower = np.concatenate(([0.0], upper[:-1]))
        masses = np.maximum(upper - lower, 0.0)
        if trim:
            remaining = 1.0 - upper
            beyond = np.nonzero(remaining > _TRIM)[0]
            last = beyond[-1] + 2 if beyond.size else 1
            masses = masses[: min(last, masses.size)]
        return masses

    def _fine_cdf(self, t: np.ndarray) -> np.ndarray:
        if self.kind is DistKind.CLOSED_FORM:
            return np.asarray(self.cdf(t))
        if self.exact_cdf is not None:
            return np.clip(self.exact_cdf(t), 0.0, 1.0)
        return np.asarray(self.cdf(t))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Inverse-CDF sampling with linear interpolation on the grid."""
        t, f = self.on_grid()
        f = np.maximum.accumulate(f)
        u = rng.random(size) * f[-1]
        idx = np.clip(np.searchsorted(f, u, side="left"), 1, len(f) - 1)
        f_lo, f_hi = f[idx - 1], f[idx]
        width = np.where(f_hi > f_lo, f_hi - f_lo, 1.0)
        frac = np.where(f_hi > f_lo, (u - f_lo) / width, 1.0)
        return t[idx - 1] + frac * (t[idx] - t[idx - 1])


def _eval_terms(terms: Sequence[ExpTerm], t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t, dtype=float)
    for term in terms:
        out = out + term.coef * t**term.power * np.exp(term.rate * t)
    return out


# ---------------------------------------------------------------------------
# closed forms


def exponential(rate: float, step: float, horizon: float) -> TravelTimeDistribution:
    return TravelTimeDistribution(DistKind.CLOSED_FORM, step, horizon, (ExpTerm(1.0, 0, -float(rate)),))


def hypoexponential_coefficients(rates: Sequence[float]) -> np.ndarray:
    """Weights c_i with P(X > t) = sum_i c_i exp(-r_i t) for distinct rates."""
    r = np.asarray(rates, dtype=float)
    c = np.ones_like(r)
    for i in range(r.size):
        for j in range(r.size):
            if i != j:
                c[i] *= r[j] / (r[j] - r[i])
    return c


def hypoexponential(rates: Sequence[float], step: float, horizon: float) -> TravelTimeDistribution:
    if len(rates) == 1:
        return exponential(rates[0], step, horizon)
    coefs = hypoexponential_coefficients(rates)
    terms = tuple(ExpTerm(float(c), 0, -float(r)) for c, r in zip(coefs, rates))
    return TravelTimeDistribution(DistKind.CLOSED_FORM, step, horizon, terms)


def rates_distinct(rates: Sequence[float], rel_tol: float = 1e-9) -> bool:
    r = sorted(rates)
    scale = max(r) if r else 1.0
    return all(b - a >= rel_tol * scale for a, b in zip(r, r[1:]))


# ---------------------------------------------------------------------------
# M/D/1


def md1_queue_length_cdf(rho: float, n_max: int) -> np.ndarray:
    """Stationary P(N <= n), n = 0..n_max, for the M/D/1 queue.

    Uses the level-crossing balance of the departure-epoch chain,
    pi_n * a_0 = pi_0 * P(A >= n) + sum_{i=1}^{n-1} pi_i * P(A >= n-i+1),
    with A ~ Poisson(rho) arrivals per service. Every term is nonnegative,
    so the recursion does not lose precision as n grows.
    """
    pi = np.zeros(n_max + 1)
    pi[0] = 1.0 - rho
    if rho > 0 and n_max > 0:
        at_least = stats.poisson.sf(np.arange(-1, n_max + 1), rho)  # at_least[m] = P(A >= m)
        a0 = math.exp(-rho)
        for n in range(1, n_max + 1):
            acc = pi[0] * at_least[n]
            if n > 1:
                acc += float(np.dot(pi[1:n], at_least[n:1:-1]))
            pi[n] = acc / a0
    return np.minimum(np.cumsum(pi), 1.0)


def md1_waiting_cdf(x, lam: float, mu: float, max_terms: int = 200) -> np.ndarray:
    """P(W <= x) for the FIFO M/D/1 waiting time.

    Writing x = k*D + u with D = 1/mu and 0 <= u < D,
    P(W <= x) = exp(-lam*(D-u)) * sum_{j=0}^{k} Q_{k+1-j} (lam*(D-u))**j / j!
    where Q_n = P(N <= n). This is the classical alternating series
    regrouped into positive terms. ``max_terms`` caps n in Q_n; beyond it
    the CDF is set to one when the cap already holds all but 1e-15 of the
    mass, and NumericalError is raised otherwise.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    ok = x >= 0
    if lam <= 0:
        out[ok] = 1.0
        return out
    d = 1.0 / mu
    rho = lam / mu
    k = np.floor(x[ok] * mu).astype(np.int64)
    u = x[ok] - k * d
    k = np.where(u < 0, k - 1, k)
    k = np.where(u >= d, k + 1, k)
    u = np.clip(x[ok] - k * d, 0.0, d)
    v = lam * (d - u)

    q = md1_queue_length_cdf(rho, max_terms)
    beyond = k + 1 > max_terms
    if np.any(beyond) and 1.0 - q[-1] > 1e-15:
        raise NumericalError(
            f"M/D/1 series cap of {max_terms} terms reached before the waiting time CDF converged "
            f"(1 - Q = {1.0 - q[-1]:.3g}); raise md1_series_terms"
        )
    kk = np.minimum(k, max_terms - 1)
    total = np.zeros_like(v)
    term = np.ones_like(v)
    j_max = int(min(kk.max(initial=0), 80))
    for j in range(j_max + 1):
        if j > 0:
            term = term * v / j
        live = kk >= j
        if not live.any() or term.max() < 1e-18:
            break
        total += np.where(live, q[np.clip(kk + 1 - j, 0, max_terms)] * term, 0.0)
    res = np.exp(-v) * total
    res = np.where(beyond, 1.0, res)
    out[ok] = np.clip(res, 0.0, 1.0)
    return out


def md1_waiting_cdf_classical(t: float, lam: float, mu: float) -> float:
    """The textbook alternating series, with each term's magnitude formed in logs.

    Accurate only while exp(lam * t) stays far below 1/eps; kept for
    cross-checking the positive-term form at small arguments.
    """
    if t < 0:
        return 0.0
    d = 1.0 / mu
    rho = lam / mu
    total = 0.0
    for j in range(int(math.floor(t * mu)) + 1):
        y = lam * (t - j * d)  # >= 0
        if y == 0:
            mag = 0.0 if j > 0 else 1.0
        else:
            mag = math.exp(y + j * math.log(y) - math.lgamma(j + 1))
        total += (-1) ** j * mag
    return (1.0 - rho) * total


def md1_mean_sojourn(lam: float, mu: float) -> float:
    """Pollaczek-Khinchine mean sojourn time with deterministic service."""
    d = 1.0 / mu
    rho = lam / mu
    return d + lam * d * d / (2.0 * (1.0 - rho))


def md1_sojourn(lam: float, mu: float, step: float, horizon: float, tail_tol: float, max_terms: int) -> TravelTimeDistribution:
    d = 1.0 / mu

    def cdf(t):
        t = np.asarray(t, dtype=float)
        w = np.reshape(md1_waiting_cdf(t - d, lam, mu, max_terms), t.shape)
        return np.where(t >= d, w, 0.0)

    dist = TravelTimeDistribution(DistKind.GRIDDED, step, horizon, grid_cdf=None, exact_cdf=cdf)
    grid = np.maximum.accumulate(cdf(dist.times()))  # absorb rounding near 1
    if grid[-1] < 1.0 - tail_tol:
        raise NumericalError(
            f"M/D/1 sojourn CDF reaches only {grid[-1]:.6g} at horizon {horizon}; enlarge the horizon"
        )
    object.__setattr__(dist, "grid_cdf", grid)
    return dist


# ---------------------------------------------------------------------------
# convolution


def convolve(dists: Sequence[TravelTimeDistribution], step: float, horizon: float, tail_tol: float) -> TravelTimeDistribution:
    """Distribution of the sum of independent variables, by discrete convolution of cell masses."""
    n = int(round(horizon / step)) + 1
    acc = np.array([1.0])
    for dist in dists:
        if dist.step != step or dist.horizon != horizon:
            raise NumericalError("distributions on different grids")
        # FFT for long supports; round-off stays near 1e-16 and is clipped
        acc = np.maximum(signal.convolve(acc, dist.cell_masses(), method="auto")[:n], 0.0)
    total = float(acc.sum())
    if 1.0 - total > tail_tol:
        raise NumericalError(
            f"travel time mass within horizon {horizon} is {total:.6g} (< 1 - {tail_tol}); enlarge the horizon"
        )
    acc = acc / total
    cum = np.ones(n)
    cum[: acc.size] = np.cumsum(acc)
    grid = np.empty(n)
    grid[0] = 0.0
    # value at t_j interpolates the rounded-sum CDF at t_j -/+ step/2
    grid[1:] = 0.5 * (cum[:-1] + cum[1:])
    grid = np.clip(np.maximum.accumulate(grid), 0.0, 1.0)
    return TravelTimeDistribution(DistKind.GRIDDED, step, horizon, grid_cdf=grid)
