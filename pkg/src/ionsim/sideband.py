"""Sideband cooling of one motional mode beyond the Lamb-Dicke limit.

All frequencies are in units of the trap frequency omega_z and energies in
units of hbar*omega_z, so the recoil energy is E_R = eta^2.  Scattering
rates are in units of Omega^2/Gamma, which drops out of steady states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .atomic import sideband_lineshape
from .errors import ConvergenceError, DomainError, SingularSystemError

# largest vibrational index for which matrix elements are served
MAX_INDEX = 2000
_RESCALE = 1e150
_UNIT_POWERS = np.array([1, 1j, -1, -1j])


@dataclass(frozen=True)
class TrapGeometry:
    omega_z: float
    recoil: float
    theta: float = 0.0
    photons: int = 1

    def __post_init__(self):
        if self.omega_z <= 0:
            raise DomainError("trap frequency must be positive")
        if self.recoil < 0:
            raise DomainError("recoil frequency must be >= 0")
        if self.photons not in (1, 2):
            raise DomainError("photons must be 1 (single photon) or 2 (Raman)")


def lamb_dicke_parameter(geom: TrapGeometry) -> float:
    """eta = m cos(theta) sqrt(E_R / hbar omega_z)."""
    return geom.photons * math.cos(geom.theta) * math.sqrt(geom.recoil / geom.omega_z)


@dataclass(frozen=True)
class RamanConfig:
    rabi_plus: float
    rabi_minus: float
    big_delta: float
    laser_plus: float = 0.0
    laser_minus: float = 0.0
    zeeman_split: float = 0.0

    def __post_init__(self):
        if abs(self.big_delta) < 10 * max(abs(self.rabi_plus), abs(self.rabi_minus)):
            raise DomainError("two-level reduction needs |Delta| >= 10 max(|Omega_+|, |Omega_-|)")


def raman_effective_params(cfg: RamanConfig) -> tuple[float, float]:
    """Effective two-photon Rabi frequency and detuning (light shift included)."""
    rabi = cfg.rabi_minus * cfg.rabi_plus / (2 * cfg.big_delta)
    delta = (cfg.laser_minus - cfg.laser_plus - cfg.zeeman_split
             - (abs(cfg.rabi_minus) ** 2 - abs(cfg.rabi_plus) ** 2) / (4 * cfg.big_delta))
    return rabi, delta


# ---------------------------------------------------------------------------
# matrix elements of exp(i eta (a + a^dagger))


@lru_cache(maxsize=64)
def _magnitude_table(eta2: float, size: int) -> np.ndarray:
    """U[k, d] = e^{-x/2} x^{d/2} sqrt(k!/(k+d)!) L_k^{(d)}(x), x = eta^2.

    Built with the three-term Laguerre recurrence in k for all d at once.
    Each column carries its own log scale so that neither x^{d/2}/sqrt(d!)
    nor the Laguerre values over/underflow.
    """
    x = eta2
    d = np.arange(size, dtype=float)
    out = np.zeros((size, size))
    if x == 0.0:
        out[:, 0] = 1.0
        return out
    # U_0 = e^{-x/2} x^{d/2} / sqrt(d!)
    logscale = -x / 2 + d * math.log(x) / 2 - 0.5 * np.array([math.lgamma(v + 1) for v in d])
    prev = np.zeros(size)
    cur = np.ones(size)
    out[0] = np.exp(logscale)
    for k in range(1, size):
        # L_k = ((2k-1+d-x) L_{k-1} - (k-1+d) L_{k-2}) / k, rewritten for U
        a = (2 * k - 1 + d - x) * np.sqrt(k / (k + d)) / k
        b = (k - 1 + d) * np.sqrt(k * (k - 1) / ((k + d) * (k + d - 1))) / k if k > 1 else 0.0
        nxt = a * cur - b * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > _RESCALE
        small = (np.abs(cur) < 1 / _RESCALE) & (np.abs(prev) < 1 / _RESCALE) & (cur != 0)
        for mask, factor in ((big, 1 / _RESCALE), (small, _RESCALE)):
            if mask.any():
                cur[mask] *= factor
                prev[mask] *= factor
                logscale[mask] -= math.log(factor)
        with np.errstate(under="ignore"):
            out[k] = cur * np.exp(logscale)
    out.setflags(write=False)
    return out


def displacement_matrix(eta_signed: float, rows: int, cols: int | None = None) -> np.ndarray:
    """Complex matrix ``M[f, n] = <f| exp(i eta (a + a^dag)) |n>``.

    ``rows`` and ``cols`` are the number of Fock states kept for f and n.
    A negative ``eta_signed`` gives the matrix of exp(-i|eta|(a + a^dag)).
    """
    cols = rows if cols is None else cols
    size = max(rows, cols)
    if size > MAX_INDEX + 1:
        raise DomainError(f"Fock index beyond the stable range ({MAX_INDEX})")
    U = _magnitude_table(float(eta_signed) ** 2, size)
    f = np.arange(rows)[:, None]
    n = np.arange(cols)[None, :]
    d = np.abs(f - n)
    k = np.minimum(f, n)
    unit = _UNIT_POWERS if eta_signed >= 0 else _UNIT_POWERS.conj()
    return unit[d % 4] * U[k, d]


def displacement_element(f: int, n: int, eta_signed: float) -> complex:
    """``<f| exp(i eta (a + a^dag)) |n>``."""
    if f < 0 or n < 0:
        raise DomainError("Fock indices must be >= 0")
    if max(f, n) > MAX_INDEX:
        raise DomainError(f"Fock index beyond the stable range ({MAX_INDEX})")
    d, k = abs(f - n), min(f, n)
    U = _magnitude_table(float(eta_signed) ** 2, max(f, n) + 1)
    unit = _UNIT_POWERS if eta_signed >= 0 else _UNIT_POWERS.conj()
    return complex(unit[d % 4] * U[k, d])


def strength(f: int, n: int, eta: float) -> float:
    """Sideband strength I_fn = |<f|exp(ikz)|n>|^2."""
    return abs(displacement_element(f, n, eta)) ** 2


def strength_matrix(eta: float, rows: int, cols: int | None = None) -> np.ndarray:
    cols = rows if cols is None else cols
    U = _magnitude_table(float(eta) ** 2, max(rows, cols))
    f = np.arange(rows)[:, None]
    n = np.arange(cols)[None, :]
    return U[np.minimum(f, n), np.abs(f - n)] ** 2


def ld_expansion_Ifn(f: int, n: int, eta: float) -> float:
    """I_fn expanded to fourth order in eta (zero for |f - n| > 2)."""
    e2 = eta * eta
    e4 = e2 * e2
    if f == n:
        return 1 - e2 * (2 * n + 1) + e4 / 2 * (3 * n * n + 3 * n + 1)
    if f == n - 1:
        return e2 * n * (1 - e2 * n)
    if f == n + 1:
        return e2 * (n + 1) * (1 - e2 * (n + 1))
    if f == n - 2:
        return e4 / 4 * n * (n - 1)
    if f == n + 2:
        return e4 / 4 * (n + 1) * (n + 2)
    return 0.0


def spontaneous_recoil_check(f: int, eta: float, n_max: int = 300) -> float:
    """Mean energy change sum_n (E_n - E_f) I_nf for one emission direction.

    Should equal the recoil energy eta^2 (units of hbar omega_z).
    """
    if f > n_max:
        raise DomainError("f must not exceed n_max")
    I = strength_matrix(eta, n_max + 1, f + 1)[:, f]
    return float(np.dot(np.arange(n_max + 1) - f, I))


# ---------------------------------------------------------------------------
# distributions and configs


@dataclass(frozen=True)
class MotionalDistribution:
    p: np.ndarray
    residual: float = 0.0
    condition: float = 1.0

    @classmethod
    def thermal(cls, mean_n: float, n_max: int) -> "MotionalDistribution":
        s = mean_n / (1 + mean_n)
        p = (1 - s) * s ** np.arange(n_max + 1)
        return cls(p / p.sum())

    @property
    def n(self) -> np.ndarray:
        return np.arange(self.p.size)

    @property
    def mean_n(self) -> float:
        return float(np.dot(self.n, self.p))

    @property
    def mean_n2(self) -> float:
        return float(np.dot(self.n ** 2, self.p))

    @property
    def ground_deficit(self) -> float:
        return float(1.0 - self.p[0])

    @property
    def temperature(self) -> float:
        """k_B T / hbar omega_z from the ratio P0/P1."""
        return float(1.0 / math.log(self.p[0] / self.p[1]))

    def validity_margin(self, gamma: float) -> float:
        """(<n^2> - <n>) / (g2 + g3): small when second-sideband estimates hold."""
        return (self.mean_n2 - self.mean_n) / float(sideband_lineshape(2, gamma)
                                                    + sideband_lineshape(3, gamma))


EMISSION_MODELS = ("two_delta", "dipole_3d")


@dataclass(frozen=True)
class CoolingConfig:
    """Parameters of one steady-state cooling calculation (omega_z units).

    ``rabi`` is optional; when given it is checked against the
    low-intensity condition Omega <= 0.1 min(Gamma, omega_z).  ``j_max``
    bounds the intermediate vibrational index; ``None`` picks it
    automatically from the tail test.
    """

    eta: float
    gamma: float
    m_sideband: int = 1
    alpha: float = 0.0
    n_max: int = 100
    j_max: int | None = None
    emission_model: str = "two_delta"
    rabi: float | None = None

    def __post_init__(self):
        if self.eta < 0:
            raise DomainError("eta must be >= 0")
        if self.gamma <= 0:
            raise DomainError("gamma must be > 0")
        if self.m_sideband < 1:
            raise DomainError("sideband order must be >= 1")
        if self.alpha < 0 or not math.isfinite(self.alpha):
            raise DomainError("alpha must be finite and >= 0")
        if self.n_max < 1:
            raise DomainError("n_max must be >= 1")
        if self.j_max is not None and self.j_max < self.n_max:
            raise DomainError("j_max must be >= n_max")
        if self.emission_model not in EMISSION_MODELS:
            raise DomainError(f"emission_model must be one of {EMISSION_MODELS}")
        if self.rabi is not None and self.rabi > 0.1 * min(self.gamma, 1.0):
            raise DomainError("low-intensity limit requires rabi <= 0.1 min(gamma, 1)")


def _emission_nodes(model: str):
    if model == "two_delta":
        return np.array([1.0, -1.0]), np.array([0.5, 0.5])
    u, w = np.polynomial.legendre.leggauss(16)
    return u, w * 3.0 / 8.0 * (1 + u * u)


# ---------------------------------------------------------------------------
# rates


def _amplitudes(cfg: CoolingConfig, m: int, j_count: int, separate: bool) -> np.ndarray:
    """Rates Gamma_fn(m) summed over intermediate states j < j_count."""
    N = cfg.n_max + 1
    eta, g = cfg.eta, cfg.gamma
    absorb = displacement_matrix(eta, j_count, N)              # <j|e^{ikz}|n>
    j = np.arange(j_count)[:, None]
    n = np.arange(N)[None, :]
    weight = (g / 2) / ((n - m - j) + 1j * g / 2)
    path = absorb * weight                                    # [j, n]
    rates = np.zeros((N, N))
    for u, w in zip(*_emission_nodes(cfg.emission_model)):
        emit = displacement_matrix(-eta * u, N, j_count)      # <f|e^{-ikzu}|j>
        if separate:
            rates += w * (np.abs(emit) ** 2 @ np.abs(path) ** 2)
        else:
            rates += w * np.abs(emit @ path) ** 2
    return rates


def _j_candidates(cfg: CoolingConfig):
    if cfg.j_max is not None:
        return [cfg.j_max]
    out, extra = [], 50
    while cfg.n_max + extra < MAX_INDEX:
        out.append(cfg.n_max + extra)
        extra *= 2
    return out + [MAX_INDEX - 1]


def scattering_matrix(cfg: CoolingConfig, m: int | None = None, separate: bool = False,
                      tail: int = 10, tail_tol: float = 1e-8) -> np.ndarray:
    """All rates ``G[f, n]`` for light on the m-th red sideband.

    Dropping the last ``tail`` intermediate states must change no rate by
    more than ``tail_tol`` times the largest rate, otherwise
    ConvergenceError.  An explicit ``cfg.j_max`` is used as is; without it
    the cutoff starts at n_max + 50 and the margin doubles until the test
    passes.  ``separate=True`` squares each intermediate-state term on its
    own (absorption and emission as independent events).
    """
    m = cfg.m_sideband if m is None else m
    if m < 1:
        raise DomainError("sideband order must be >= 1")
    for j_max in _j_candidates(cfg):
        J = j_max + 1
        full = _amplitudes(cfg, m, J, separate)
        short = _amplitudes(cfg, m, J - tail, separate)
        scale = full.max()
        err = np.abs(full - short).max() / scale if scale > 0 else 0.0
        if err <= tail_tol:
            return full
    raise ConvergenceError(
        f"intermediate-state sum not converged at j_max={j_max} (tail {err:.2e} of max rate)")


def scattering_rate(f: int, n: int, m: int, cfg: CoolingConfig, separate: bool = False) -> float:
    """Rate from vibrational level n to f, units of Omega^2/Gamma."""
    if not (0 <= f <= cfg.n_max and 0 <= n <= cfg.n_max):
        raise DomainError("levels must lie in 0..n_max")
    return float(scattering_matrix(cfg, m, separate)[f, n])


def total_rates(cfg: CoolingConfig, separate: bool = False) -> np.ndarray:
    """Two-frequency rates G(m) + alpha G(1), summed incoherently."""
    rates = scattering_matrix(cfg, cfg.m_sideband, separate)
    if cfg.alpha > 0:
        rates = rates + cfg.alpha * scattering_matrix(cfg, 1, separate)
    return rates


def population_generator(rates: np.ndarray) -> np.ndarray:
    """dP/dt = A P with ``A[f, n] = G[f, n]`` off-diagonal and columns summing to 0."""
    A = rates.copy()
    np.fill_diagonal(A, 0.0)
    A[np.diag_indices_from(A)] = -A.sum(axis=0)
    return A


def steady_state(A: np.ndarray, residual_tol: float = 1e-8,
                 max_condition: float = 1e15) -> MotionalDistribution:
    """Normalised null vector of a rate generator by bordered LU.

    The balance equation with the largest diagonal entry is replaced by
    sum(P) = 1.
    """
    row = int(np.argmax(np.abs(np.diag(A))))
    B = A.copy()
    B[row, :] = 1.0
    rhs = np.zeros(A.shape[0])
    rhs[row] = 1.0
    condition = float(np.linalg.cond(B, 1))
    if not np.isfinite(condition) or condition > max_condition:
        raise SingularSystemError(f"steady-state system singular (cond ~ {condition:.3g})",
                                  condition)
    p = lu_solve(lu_factor(B), rhs)
    if p.min() < -1e-10:
        raise SingularSystemError(f"negative population {p.min():.3g} in steady state", condition)
    p = np.clip(p, 0.0, None)
    p /= p.sum()
    residual = float(np.abs(A @ p).max())
    if residual > residual_tol:
        raise SingularSystemError(f"steady-state residual {residual:.3g} too large", condition)
    return MotionalDistribution(p, residual, condition)


def cooling_steady_state(cfg: CoolingConfig, separate: bool = False) -> MotionalDistribution:
    """Steady vibrational distribution for cooling on sideband m plus alpha x first."""
    return steady_state(population_generator(total_rates(cfg, separate)))


# ---------------------------------------------------------------------------
# energy balance


def energy_rate(dist: MotionalDistribution, cfg: CoolingConfig, delta: float | None = None,
                prefactor: float = 1.0, extra: int = 50) -> float:
    """Mean rate of change of energy per absorption + emission cycle.

    ``delta`` is the laser detuning (default: -m, the m-th red sideband).
    The result is in units of hbar omega_z times ``prefactor``.
    """
    delta = -cfg.m_sideband if delta is None else delta
    terms = _energy_terms(dist, cfg.eta, cfg.gamma, delta, extra)
    return prefactor * float(terms.sum())


def energy_rate_scale(dist: MotionalDistribution, cfg: CoolingConfig,
                      delta: float | None = None, extra: int = 50) -> float:
    """Sum of the magnitudes of the terms in :func:`energy_rate`."""
    delta = -cfg.m_sideband if delta is None else delta
    return float(np.abs(_energy_terms(dist, cfg.eta, cfg.gamma, delta, extra)).sum())


def _energy_terms(dist, eta, gamma, delta, extra):
    N = dist.p.size
    F = N + extra
    I = strength_matrix(eta, F, N)                      # [f, n]
    change = np.arange(F)[:, None] - np.arange(N)[None, :]
    lorentz = sideband_lineshape(delta - change, gamma)
    return (change + eta * eta) * I * lorentz * dist.p[None, :]


def energy_rate_ld(dist: MotionalDistribution, eta: float, gamma: float, m: int,
                   prefactor: float = 1.0) -> float:
    """Energy rate expanded to second order in eta^2 (Lamb-Dicke limit)."""
    g = lambda k: float(sideband_lineshape(k, gamma))
    e2 = eta * eta
    c0 = g(m) + g(m + 1) + e2 * (g(m + 2) - g(m))
    c1 = (g(m + 1) - g(m - 1)) + e2 * (g(m - 1) - g(m + 1) + g(m - 2) / 2
                                      - 2 * g(m) + 1.5 * g(m + 2))
    c2 = e2 * (-g(m - 2) / 2 - g(m + 1) + g(m - 1) + g(m + 2) / 2)
    return prefactor * e2 * (c0 + c1 * dist.mean_n + c2 * dist.mean_n2)


# ---------------------------------------------------------------------------
# analytic limits


@dataclass(frozen=True)
class FirstSidebandPrediction:
    mean_n: float
    closed_form: float


def first_sideband_prediction(eta: float, gamma: float) -> FirstSidebandPrediction:
    """Lamb-Dicke estimate of <n> for first-sideband cooling, thermal ansatz.

    ``mean_n`` uses the lineshape ratio; ``closed_form`` the resolved-
    sideband expansion (5 - 32 eta^2/9) / (16 (1 - 2 eta^2)) gamma^2.
    """
    e2 = eta * eta
    if e2 >= 0.5:
        raise DomainError("prediction diverges at eta^2 >= 1/2")
    g1, g2, g3 = (float(sideband_lineshape(k, gamma)) for k in (1, 2, 3))
    ratio = (g1 + g2 - e2 * (g1 - g3)) / (1 - 2 * e2)
    closed = (5 - 32 * e2 / 9) / (16 * (1 - 2 * e2)) * gamma ** 2
    return FirstSidebandPrediction(ratio, closed)


def second_sideband_prediction(gamma: float) -> float:
    """<n> = (g2 + g3) / (g1 - g3) for cooling on the second sideband alone."""
    g1, g2, g3 = (float(sideband_lineshape(k, gamma)) for k in (1, 2, 3))
    return (g2 + g3) / (g1 - g3)


def optimal_sideband(eta: float) -> int:
    """Smallest integer strictly larger than 2 eta^2 + 0.5."""
    return math.floor(2 * eta * eta + 0.5) + 1


def optimal_parameters(eta: float, gamma: float | None = None, refine: bool = False,
                       n_max: int = 100, **kw) -> tuple[int, float]:
    """Rule-of-thumb sideband and intensity ratio ``(m, 1/(3 eta^2))``.

    With ``refine=True`` (needs ``gamma``) alpha is then tuned to maximise
    P0 by a coarse log grid plus golden-section search at fixed m.
    """
    if eta <= 0:
        raise DomainError("eta must be > 0")
    m = optimal_sideband(eta)
    alpha = 1.0 / (3 * eta * eta)
    if not refine:
        return m, alpha
    if gamma is None:
        raise DomainError("refinement needs gamma")
    from scipy.optimize import minimize_scalar

    def deficit(log_alpha):
        cfg = CoolingConfig(eta, gamma, m, math.exp(log_alpha), n_max=n_max, **kw)
        return cooling_steady_state(cfg).ground_deficit

    grid = np.log(alpha) + np.linspace(-3, 3, 13)
    vals = [deficit(x) for x in grid]
    i = int(np.argmin(vals))
    if i in (0, len(grid) - 1):
        return m, float(math.exp(grid[i]))
    res = minimize_scalar(deficit, bracket=(grid[i - 1], grid[i], grid[i + 1]),
                          method="golden", options={"xtol": 1e-3})
    return m, float(math.exp(res.x))


def approximate_rate(f: int, n: int, eta: float, gamma: float, m: int, alpha: float,
                     j_max: int = 200) -> float:
    """Interference-free rate estimate sum_j I_fj I_jn (g_{n-j-m} + alpha g_{n-j-1})."""
    size = max(f, n, j_max) + 1
    I = strength_matrix(eta, size)
    j = np.arange(j_max + 1)
    g = sideband_lineshape(n - j - m, gamma) + alpha * sideband_lineshape(n - j - 1, gamma)
    return float(np.sum(I[f, j] * I[j, n] * g))


def pumping_ratio(eta: float, gamma: float, m: int, alpha: float, j_max: int = 200) -> float:
    """Gamma_01 / Gamma_10 from interference-free rates summed over j."""
    return (approximate_rate(0, 1, eta, gamma, m, alpha, j_max)
            / approximate_rate(1, 0, eta, gamma, m, alpha, j_max))


@dataclass(frozen=True)
class BetaEstimate:
    beta: float
    ratio: float          # Gamma_01/Gamma_10 ~ (e^{-2 eta^2} eta^2 + beta) / beta
    ground_population: float


def beta_estimate(eta: float, gamma: float, exponent: int = 3) -> BetaEstimate:
    """Off-resonant leak beta ~ (gamma^2/4) / (2 sqrt(pi)) eta^-exponent.

    ``exponent=3`` follows from the Bessel asymptote; ``exponent=5`` is the
    empirically corrected power used by :func:`eta_limit`.
    """
    if eta * eta < 1:
        raise DomainError("asymptotic estimate needs eta^2 >= 1")
    if exponent not in (3, 5):
        raise DomainError("exponent must be 3 or 5")
    beta = gamma ** 2 / 4 / (2 * math.sqrt(math.pi)) * eta ** (-exponent)
    pump = math.exp(-2 * eta * eta) * eta * eta
    ratio = (pump + beta) / beta
    return BetaEstimate(beta, ratio, ratio / (1 + ratio))


@dataclass(frozen=True)
class EtaLimit:
    eta: float
    eta2: float
    residual: float
    iterations: int


def eta_limit(gamma: float, damping: float = 0.5, tol: float = 1e-6,
              max_iter: int = 1000) -> EtaLimit:
    """Largest eta for two-sideband ground-state cooling.

    Solves eta^2 = ln(2/gamma) + (7/4) ln(eta^2) + 2 by damped fixed-point
    iteration.
    """
    if gamma <= 0:
        raise DomainError("gamma must be > 0")
    c = math.log(2 / gamma) + 2
    if c <= 0:
        raise DomainError("no fixed point for this linewidth")

    def rhs(x):
        return c + 1.75 * math.log(x)

    x = c
    for it in range(1, max_iter + 1):
        x_new = (1 - damping) * x + damping * rhs(x)
        if x_new <= 0:
            raise ConvergenceError("iteration left the domain eta^2 > 0")
        if abs(x_new - x) < tol * 1e-3:
            x = x_new
            res = abs(rhs(x) - x)
            if res < tol:
                return EtaLimit(math.sqrt(x), x, res, it)
        x = x_new
    raise ConvergenceError(f"eta limit did not converge in {max_iter} iterations")
