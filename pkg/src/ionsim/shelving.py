"""Electron-shelving readout of a ground-state Zeeman qubit.

A sigma+ pulse on S1/2 <-> P3/2, locked to the stretched component,
optically pumps the M=+1/2 ground state into the D levels much faster than
M=-1/2.  Fluorescence on S1/2 <-> P1/2 (with a D3/2 repumper) then reveals
whether the ion was shelved.  Both phases are modelled with the full set of
Zeeman-sublevel rate equations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import null_space, svdvals
from scipy.optimize import minimize_scalar

from .atomic import (D32, D52, P12, P32, S12, FieldConfig, LevelScheme,
                     _cg_sq_twice, ca40_scheme, lineshape)
from .errors import ConvergenceError, DomainError, SingularSystemError, StiffnessError

Sublevel = tuple[int, int]  # (level index, doubled M)

# polarization weight order: sigma-, pi, sigma+  (q = -1, 0, +1)
SIGMA_PLUS = (0.0, 0.0, 1.0)
LINEAR_PERP = (0.5, 0.0, 0.5)


@dataclass(frozen=True)
class LaserDrive:
    """One laser on the dipole transition ``lower <-> upper``.

    ``rabi`` (rad/s) refers to the reference component: the locked
    component when ``lock`` is ``(twice_M_upper, twice_M_lower)``, else the
    strongest component the polarization can drive.
    """

    lower: int
    upper: int
    rabi: float
    polarization: tuple[float, float, float] = SIGMA_PLUS
    lock: tuple[int, int] | str = "zero_field"

    def __post_init__(self):
        if self.rabi < 0:
            raise DomainError("Rabi frequency must be >= 0")
        w = self.polarization
        if len(w) != 3 or min(w) < 0 or not math.isclose(sum(w), 1.0, rel_tol=1e-12):
            raise DomainError("polarization weights must be 3 non-negative numbers summing to 1")
        if isinstance(self.lock, str) and self.lock != "zero_field":
            raise DomainError(f"unknown lock {self.lock!r}")


@dataclass(frozen=True)
class RateMatrix:
    """Generator of dN/dt = A N over the listed sublevels (units 1/s)."""

    matrix: np.ndarray
    sublevels: tuple[Sublevel, ...]

    def index(self, sub: Sublevel) -> int:
        return self.sublevels.index(sub)


@dataclass(frozen=True)
class SublevelPopulations:
    values: np.ndarray
    sublevels: tuple[Sublevel, ...]

    @classmethod
    def from_mapping(cls, sublevels: Sequence[Sublevel], pops: dict) -> "SublevelPopulations":
        sublevels = tuple(sublevels)
        vals = np.zeros(len(sublevels))
        for sub, p in pops.items():
            vals[sublevels.index(sub)] = p
        return cls(vals, sublevels)

    def __getitem__(self, sub: Sublevel) -> float:
        return float(self.values[self.sublevels.index(sub)])

    def level_total(self, n: int) -> float:
        return float(sum(v for (lv, _), v in zip(self.sublevels, self.values) if lv == n))

    def total(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class ShelvingResult:
    epsilon: float
    s_plus: float
    s_minus: float
    pulse_duration: float
    trace: tuple | None = field(default=None, repr=False)


def _components(scheme: LevelScheme, lower: int, upper: int):
    lo, up = scheme.level(lower), scheme.level(upper)
    for tm_lo in lo.J.projections():
        for q in (-1, 0, 1):
            tm_up = tm_lo + 2 * q
            if not up.J.contains(tm_up):
                continue
            w = _cg_sq_twice(up.twice_J, tm_up, lo.twice_J, tm_lo, q)
            if w > 0:
                yield tm_lo, q, tm_up, w


def build_rate_matrix(scheme: LevelScheme, lasers: Sequence[LaserDrive], field: FieldConfig,
                      levels: Sequence[int] | None = None) -> RateMatrix:
    """Assemble spontaneous decay plus laser-driven rates.

    Every dipole-allowed Zeeman component of every laser is included with
    its exact Zeeman detuning from the laser frequency.  A component with
    polarization weight ``w_q`` contributes the symmetric two-way rate
    ``(pi/2) w_q (C^2/C_ref^2) Omega^2 g_upper(delta)``.  ``levels``
    restricts the model to a subset of levels; decay channels leaving the
    subset are dropped.
    """
    subs = tuple(scheme.sublevels(levels))
    included = {n for n, _ in subs}
    idx = {s: i for i, s in enumerate(subs)}
    A = np.zeros((len(subs), len(subs)))

    for (lower, upper), rate in scheme.decay_rates.items():
        if lower not in included or upper not in included or rate == 0:
            continue
        for tm_lo, q, tm_up, w in _components(scheme, lower, upper):
            i, j = idx[(lower, tm_lo)], idx[(upper, tm_up)]
            r = rate * float(w)
            A[i, j] += r
            A[j, j] -= r

    for laser in lasers:
        if laser.lower not in included or laser.upper not in included:
            raise DomainError(f"laser {laser.lower}<->{laser.upper} addresses an excluded level")
        if not scheme.dipole_allowed(laser.lower, laser.upper):
            raise DomainError(f"{laser.lower}<->{laser.upper} is not a dipole transition")
        width = scheme.total_width(laser.upper)
        comps = list(_components(scheme, laser.lower, laser.upper))
        if laser.lock == "zero_field":
            ref_w = max(w for _, q, _, w in comps if laser.polarization[q + 1] > 0)
            ref_shift = 0.0
        else:
            tm_up_ref, tm_lo_ref = laser.lock
            ref_w = next((w for tl, _, tu, w in comps if (tl, tu) == (tm_lo_ref, tm_up_ref)),
                         Fraction(0))
            if ref_w == 0:
                raise DomainError("lock component has zero Clebsch-Gordan weight")
            ref_shift = scheme.transition_shift((laser.upper, tm_up_ref),
                                                (laser.lower, tm_lo_ref), field)
        for tm_lo, q, tm_up, w in comps:
            wq = laser.polarization[q + 1]
            if wq == 0:
                continue
            delta = ref_shift - scheme.transition_shift((laser.upper, tm_up),
                                                        (laser.lower, tm_lo), field)
            r = (math.pi / 2) * wq * float(w / ref_w) * laser.rabi ** 2 * lineshape(delta, width)
            i, j = idx[(laser.lower, tm_lo)], idx[(laser.upper, tm_up)]
            A[i, i] -= r
            A[j, i] += r
            A[j, j] -= r
            A[i, j] += r
    return RateMatrix(A, subs)


def _solve(A: np.ndarray, y0: np.ndarray, t_end: float, rel_tol: float, dense: bool):
    n = A.shape[0]
    k = y0.shape[1]

    def rhs(t, y):
        return (A @ y.reshape(n, k)).ravel()

    scale = np.abs(A).max() if A.size else 0.0
    sol = solve_ivp(rhs, (0.0, t_end), y0.ravel(), method="DOP853", rtol=rel_tol,
                    atol=rel_tol * 1e-3, dense_output=dense,
                    first_step=None if scale == 0 else min(t_end, 0.1 / scale))
    if sol.status != 0:
        raise StiffnessError(f"integration failed at t={sol.t[-1]:.6g} s: {sol.message}",
                             time=float(sol.t[-1]))
    return sol


def _check_populations(y: np.ndarray, total: np.ndarray) -> np.ndarray:
    if np.any(y < -1e-9):
        raise ConvergenceError(f"population went negative ({y.min():.3g})")
    y = np.clip(y, 0.0, None)
    if np.any(np.abs(y.sum(axis=0) - total) > 1e-9):
        raise ConvergenceError("population not conserved to 1e-9")
    return y


def evolve(state: SublevelPopulations, A: RateMatrix, duration: float,
           rel_tol: float = 1e-9) -> SublevelPopulations:
    """Integrate dN/dt = A N for ``duration`` seconds.

    Uses an adaptive embedded explicit Runge-Kutta pair (Dormand-Prince
    8(5,3)).  Raises :class:`StiffnessError` if the step size underflows.
    """
    if duration < 0:
        raise DomainError("duration must be >= 0")
    if not 0 < rel_tol <= 1e-3:
        raise DomainError("rel_tol must lie in (0, 1e-3]")
    if tuple(state.sublevels) != tuple(A.sublevels):
        raise DomainError("state and rate matrix use different sublevel orderings")
    if duration == 0:
        return state
    y0 = state.values[:, None]
    sol = _solve(A.matrix, y0, duration, rel_tol, dense=False)
    y = _check_populations(sol.y[:, -1:], y0.sum(axis=0))
    return SublevelPopulations(y[:, 0], state.sublevels)


def shelving_laser(rabi: float) -> LaserDrive:
    """sigma+ 394 nm drive locked to S1/2,+1/2 <-> P3/2,+3/2."""
    return LaserDrive(S12, P32, rabi, SIGMA_PLUS, lock=(3, 1))


def _shelving_problem(scheme: LevelScheme, field: FieldConfig, rabi: float):
    A = build_rate_matrix(scheme, [shelving_laser(rabi)], field)
    y0 = np.zeros((len(A.sublevels), 2))
    y0[A.index((S12, 1)), 0] = 1.0
    y0[A.index((S12, -1)), 1] = 1.0
    d52 = np.array([n == D52 for n, _ in A.sublevels])
    return A, y0, d52


class ShelvingCurve:
    """epsilon(t) for one (B, Omega) point from a single dense integration."""

    def __init__(self, scheme: LevelScheme, field: FieldConfig, rabi: float,
                 t_end: float, rel_tol: float = 1e-9):
        self.rate_matrix, y0, self._d52 = _shelving_problem(scheme, field, rabi)
        self._n = y0.shape[0]
        self._total = y0.sum(axis=0)
        self.t_end = t_end
        self._sol = _solve(self.rate_matrix.matrix, y0, t_end, rel_tol, dense=True)

    def shelved(self, t):
        """(S+, S-) at time(s) t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0) or np.any(t > self.t_end * (1 + 1e-12)):
            raise DomainError("time outside integrated interval")
        ys = self._sol.sol(t).reshape(self._n, 2, t.size)
        s = ys[self._d52].sum(axis=0)
        return s[0], s[1]

    def epsilon(self, t):
        sp, sm = self.shelved(t)
        out = sp - sm
        return out if out.size > 1 else float(out[0])


def shelving_efficiency(scheme: LevelScheme, field: FieldConfig, rabi: float,
                        duration: float, rel_tol: float = 1e-9,
                        trace_points: int = 0) -> ShelvingResult:
    """Shelving efficiency ``S+ - S-`` after a pulse of ``duration`` seconds.

    S+ (S-) is the D5/2 population starting from M=+1/2 (M=-1/2).  With
    ``trace_points > 0`` the result carries ``(times, S+(t), S-(t))``.
    """
    if duration < 0:
        raise DomainError("duration must be >= 0")
    A, y0, d52 = _shelving_problem(scheme, field, rabi)
    if duration == 0:
        return ShelvingResult(0.0, 0.0, 0.0, 0.0)
    sol = _solve(A.matrix, y0, duration, rel_tol, dense=trace_points > 0)
    y = _check_populations(sol.y[:, -1].reshape(-1, 2), y0.sum(axis=0))
    s_plus, s_minus = y[d52].sum(axis=0)
    trace = None
    if trace_points > 0:
        times = np.linspace(0.0, duration, trace_points)
        ys = sol.sol(times).reshape(-1, 2, trace_points)
        trace = (times, ys[d52, 0].sum(axis=0), ys[d52, 1].sum(axis=0))
    return ShelvingResult(float(s_plus - s_minus), float(s_plus), float(s_minus),
                          duration, trace)


def optimal_pulse(scheme: LevelScheme, field: FieldConfig, rabi: float,
                  rel_tol: float = 1e-9, xtol: float = 1e-3,
                  grid_points: int = 121, max_extensions: int = 2) -> tuple[float, float]:
    """Pulse length maximising epsilon, and that maximum.

    epsilon(t) is sampled on a log grid over [0.01, 100]/Gamma_35 and the
    best interior grid point is refined by golden-section search.  If the
    maximum sits at the long end (weak drive at high field) the grid is
    extended by a factor of 100, at most ``max_extensions`` times.
    """
    g35 = scheme.decay_rates[(D52, P32)]
    t_lo, t_hi = 0.01 / g35, 100.0 / g35
    for _ in range(max_extensions + 1):
        t_grid = np.geomspace(t_lo, t_hi, grid_points)
        curve = ShelvingCurve(scheme, field, rabi, t_grid[-1], rel_tol)
        eps = curve.epsilon(t_grid)
        i = int(np.argmax(eps))
        if i != grid_points - 1 or eps[i] <= 0:
            break
        t_hi *= 100.0
        grid_points += 40
    if i == 0 or i == grid_points - 1 or eps[i] <= 0:
        raise ConvergenceError("could not bracket a maximum of epsilon(t)")
    res = minimize_scalar(lambda t: -curve.epsilon(t), method="golden",
                          bracket=(t_grid[i - 1], t_grid[i], t_grid[i + 1]),
                          options={"xtol": xtol})
    return float(res.x), float(-res.fun)


@dataclass(frozen=True)
class ReducedModel:
    """Two-rate model: R1 pumps M=-1/2 into M=+1/2, R2 shelves M=+1/2."""

    R1: float
    R2: float
    branching: float

    @property
    def t_max(self) -> float:
        if math.isclose(self.R1, self.R2, rel_tol=1e-12):
            return 1.0 / self.R1
        return math.log(self.R2 / self.R1) / (self.R2 - self.R1)

    def epsilon(self, t):
        t = np.asarray(t, dtype=float)
        r1, r2 = self.R1, self.R2
        if math.isclose(r1, r2, rel_tol=1e-12):
            out = self.branching * r1 * t * np.exp(-r1 * t)
        else:
            out = self.branching * r2 / (r2 - r1) * (np.exp(-r1 * t) - np.exp(-r2 * t))
        return out if out.ndim else float(out)

    @property
    def epsilon_max(self) -> float:
        return self.epsilon(self.t_max)


def reduced_model(field: FieldConfig, rabi: float,
                  scheme: LevelScheme | None = None) -> ReducedModel:
    if rabi <= 0:
        raise DomainError("Rabi frequency must be > 0")
    scheme = scheme or ca40_scheme()
    g5 = scheme.total_width(P32)
    delta = scheme.transition_shift((P32, 1), (S12, -1), field) \
        - scheme.transition_shift((P32, 3), (S12, 1), field)
    r1 = (2 / 3) * (math.pi / 2) * (1 / 3) * rabi ** 2 * lineshape(delta, g5)
    g35 = scheme.decay_rates[(D52, P32)]
    g25 = scheme.decay_rates.get((D32, P32), 0.0)
    r2 = rabi ** 2 / (2 * rabi ** 2 + g5 ** 2) * g35
    return ReducedModel(r1, r2, g35 / (g35 + g25))


def detection_lasers(rabi14: float, rabi24: float,
                     polarization=LINEAR_PERP) -> list[LaserDrive]:
    return [LaserDrive(S12, P12, rabi14, polarization, "zero_field"),
            LaserDrive(D32, P12, rabi24, polarization, "zero_field")]


def stationary_state(A: np.ndarray, initial: np.ndarray, rank_tol: float = 1e-11,
                     max_condition: float = 1e13) -> tuple[np.ndarray, float]:
    """Long-time limit of dN/dt = A N from ``initial``.

    For a unique steady state this is the normalised null vector.  When the
    null space is degenerate (e.g. uncoupled sink sublevels) the limit is
    the projection of ``initial`` onto it, ``V (W^T V)^-1 W^T N0``.  Returns
    the state and a condition estimate (ratio of the largest to the smallest
    non-zero singular value).
    """
    s = svdvals(A)
    if s[0] == 0:
        return initial / initial.sum(), 1.0
    nonzero = s[s > rank_tol * s[0]]
    condition = float(s[0] / nonzero[-1])
    if condition > max_condition:
        raise SingularSystemError(f"steady-state system ill-conditioned (cond ~ {condition:.3g})",
                                  condition)
    V = null_space(A, rcond=rank_tol)
    if V.shape[1] == 1:
        p = V[:, 0] / V[:, 0].sum()
    else:
        W = null_space(A.T, rcond=rank_tol)
        p = V @ np.linalg.solve(W.T @ V, W.T @ initial)
    if np.any(p < -1e-9):
        raise SingularSystemError("steady state has negative populations", condition)
    p = np.clip(p, 0.0, None)
    return p / p.sum(), condition


def detection_steady_state(scheme: LevelScheme, field: FieldConfig, rabi14: float,
                           rabi24: float, polarization=LINEAR_PERP) -> float:
    """Steady-state P1/2 population under the 397/866 nm detection lasers.

    Only S1/2, D3/2 and P1/2 take part; both lasers sit at the zero-field
    line centres.  The initial state (needed only when the steady state is
    not unique) is M=-1/2 of the ground state.
    """
    A = build_rate_matrix(scheme, detection_lasers(rabi14, rabi24, polarization), field,
                          levels=(S12, D32, P12))
    n0 = np.zeros(len(A.sublevels))
    n0[A.index((S12, -1))] = 1.0
    p, _ = stationary_state(A.matrix, n0)
    pops = SublevelPopulations(p, A.sublevels)
    return pops.level_total(P12)


def readout_success(epsilon: float, r: int, n_ions: int) -> float:
    """Probability ``[1 - (1-eps)^r]^N`` of reading N ions correctly with r repeats."""
    if not 0 < epsilon <= 1:
        raise DomainError("epsilon must lie in (0, 1]")
    if r < 1 or n_ions < 1:
        raise DomainError("r and N must be >= 1")
    return (1.0 - (1.0 - epsilon) ** r) ** n_ions


def readout_repetitions(epsilon: float, n_ions: int, target: float, r_limit: int = 100_000) -> int:
    """Smallest r with readout_success(epsilon, r, N) >= target."""
    if not 0 < target < 1:
        raise DomainError("target probability must lie in (0, 1)")
    readout_success(epsilon, 1, n_ions)
    if epsilon == 1:
        return 1
    # closed-form guess, then step to the exact integer
    r = max(1, math.ceil(math.log(1 - target ** (1 / n_ions)) / math.log(1 - epsilon)))
    while r > 1 and readout_success(epsilon, r - 1, n_ions) >= target:
        r -= 1
    while readout_success(epsilon, r, n_ions) < target:
        r += 1
        if r > r_limit:
            raise ConvergenceError("repetition count exceeds limit")
    return r


def readout_statistics(epsilon: float, n_ions: int, r: int | None = None,
                       target: float | None = None) -> float | int:
    """Success probability for given ``r``, or the minimal ``r`` for ``target``."""
    if (r is None) == (target is None):
        raise DomainError("give exactly one of r and target")
    if r is not None:
        return readout_success(epsilon, r, n_ions)
    return readout_repetitions(epsilon, n_ions, target)
