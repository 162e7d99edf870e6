"""Angular-momentum and spectroscopic primitives.

Half-integer quantum numbers are handled as doubled integers internally so
that Clebsch-Gordan weights and Lande factors come out as exact fractions.
Public functions accept ``int``, ``float`` (e.g. ``0.5``) or ``Fraction``
values for J and M.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from .errors import DomainError

TWO_PI = 2.0 * math.pi
# mu_B / hbar in rad s^-1 T^-1
MU_B_OVER_HBAR = TWO_PI * 1.3996246e10


def twice(x) -> int:
    """Return 2*x as an int, raising if x is not a multiple of 1/2."""
    t = Fraction(x) * 2
    if t.denominator != 1:
        raise DomainError(f"{x!r} is not an integer or half-integer")
    return int(t)


@dataclass(frozen=True)
class AngularMomentum:
    twice_value: int

    def __post_init__(self):
        if self.twice_value < 0:
            raise DomainError("angular momentum must be non-negative")

    @classmethod
    def of(cls, j) -> "AngularMomentum":
        return cls(twice(j))

    @property
    def value(self) -> Fraction:
        return Fraction(self.twice_value, 2)

    def projections(self) -> list[int]:
        """Doubled M values from -J to +J."""
        return list(range(-self.twice_value, self.twice_value + 1, 2))

    def contains(self, twice_m: int) -> bool:
        return abs(twice_m) <= self.twice_value and (self.twice_value - twice_m) % 2 == 0


def _cg_sq_twice(tj_up: int, tm_up: int, tj_lo: int, tm_lo: int, q: int) -> Fraction:
    if q not in (-1, 0, 1):
        raise DomainError(f"q must be -1, 0 or +1, got {q}")
    if not AngularMomentum(tj_up).contains(tm_up) or not AngularMomentum(tj_lo).contains(tm_lo):
        raise DomainError("|M| > J or M of wrong parity")
    if abs(tj_up - tj_lo) > 2:
        raise DomainError("not a dipole pair: |J_upper - J_lower| > 1")
    if tm_up != tm_lo + 2 * q:
        return Fraction(0)
    j = Fraction(tj_lo, 2)
    m = Fraction(tm_up, 2)
    if tj_up == tj_lo + 2:
        if q == 1:
            return (j + m) * (j + m + 1) / ((2 * j + 1) * (2 * j + 2))
        if q == 0:
            return (j - m + 1) * (j + m + 1) / ((2 * j + 1) * (j + 1))
        return (j - m) * (j - m + 1) / ((2 * j + 1) * (2 * j + 2))
    if tj_up == tj_lo:
        if tj_lo == 0:
            return Fraction(0)
        if q == 1:
            return (j + m) * (j - m + 1) / (2 * j * (j + 1))
        if q == 0:
            return m * m / (j * (j + 1))
        return (j - m) * (j + m + 1) / (2 * j * (j + 1))
    # J_upper = J_lower - 1
    if q == 1:
        return (j - m) * (j - m + 1) / (2 * j * (2 * j + 1))
    if q == 0:
        return (j - m) * (j + m) / (j * (2 * j + 1))
    return (j + m + 1) * (j + m) / (2 * j * (2 * j + 1))


def clebsch_gordan_sq(j_upper, m_upper, j_lower, m_lower, q: int) -> Fraction:
    """Squared coupling |<J_u M_u | J_l M_l; 1 q>|^2 for a dipole transition.

    Summed over q and M_lower the result is 1 for every upper sublevel, so
    spontaneous decay built from these weights conserves population.

    >>> clebsch_gordan_sq(1.5, 0.5, 0.5, -0.5, 1)
    Fraction(1, 3)
    """
    return _cg_sq_twice(twice(j_upper), twice(m_upper), twice(j_lower), twice(m_lower), q)


def lande_g(L, S, J) -> Fraction:
    """LS-coupling Lande factor ``3/2 + [S(S+1) - L(L+1)] / [2J(J+1)]``."""
    L, S, J = Fraction(twice(L), 2), Fraction(twice(S), 2), Fraction(twice(J), 2)
    if not (abs(L - S) <= J <= L + S) or (J - abs(L - S)).denominator != 1:
        raise DomainError(f"J={J} violates the triangle rule for L={L}, S={S}")
    if J == 0:
        raise DomainError("g factor undefined for J=0")
    return Fraction(3, 2) + (S * (S + 1) - L * (L + 1)) / (2 * J * (J + 1))


@dataclass(frozen=True)
class Level:
    index: int
    label: str
    L: int
    twice_S: int
    twice_J: int

    @property
    def J(self) -> AngularMomentum:
        return AngularMomentum(self.twice_J)

    @property
    def g(self) -> Fraction:
        return lande_g(self.L, Fraction(self.twice_S, 2), Fraction(self.twice_J, 2))


@dataclass(frozen=True)
class FieldConfig:
    """Static magnetic field; ``bohr_frequency`` is mu_B/hbar in rad/s/T."""

    B: float
    bohr_frequency: float = MU_B_OVER_HBAR

    def __post_init__(self):
        if self.B < 0:
            raise DomainError("magnetic field must be >= 0")

    @property
    def larmor(self) -> float:
        """mu_B B / hbar in rad/s."""
        return self.B * self.bohr_frequency


@dataclass(frozen=True)
class LevelScheme:
    """Fine-structure levels numbered by increasing energy, plus the
    spontaneous decay table ``decay_rates[(lower, upper)]`` in rad/s."""

    levels: tuple[Level, ...]
    decay_rates: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        indices = [lv.index for lv in self.levels]
        if indices != sorted(indices) or len(set(indices)) != len(indices):
            raise DomainError("levels must be listed with strictly increasing index")
        for (lo, up), rate in self.decay_rates.items():
            if rate < 0:
                raise DomainError(f"negative decay rate for {lo}<-{up}")
            if lo >= up:
                raise DomainError(f"decay {lo}<-{up} must go from higher to lower index")
            if not self.dipole_allowed(lo, up):
                raise DomainError(f"decay {lo}<-{up} is not an electric-dipole transition")

    def level(self, n: int) -> Level:
        for lv in self.levels:
            if lv.index == n:
                return lv
        raise DomainError(f"no level with index {n}")

    def total_width(self, n: int) -> float:
        return sum(rate for (lo, up), rate in self.decay_rates.items() if up == n)

    def dipole_allowed(self, lower: int, upper: int) -> bool:
        a, b = self.level(lower), self.level(upper)
        return (abs(a.L - b.L) == 1 and abs(a.twice_J - b.twice_J) <= 2
                and a.twice_S == b.twice_S)

    def sublevels(self, levels: Iterable[int] | None = None) -> list[tuple[int, int]]:
        """(level index, doubled M) pairs in level order, M ascending."""
        keep = None if levels is None else set(levels)
        return [(lv.index, tm) for lv in self.levels
                if keep is None or lv.index in keep
                for tm in lv.J.projections()]

    def zeeman_shift(self, n: int, twice_m: int, field: FieldConfig) -> float:
        """Energy shift g M mu_B B / hbar of a sublevel, rad/s."""
        lv = self.level(n)
        if not lv.J.contains(twice_m):
            raise DomainError(f"M={Fraction(twice_m, 2)} not a sublevel of {lv.label}")
        return float(lv.g * Fraction(twice_m, 2)) * field.larmor

    def transition_shift(self, upper: tuple[int, int], lower: tuple[int, int],
                         field: FieldConfig) -> float:
        return self.zeeman_shift(*upper, field) - self.zeeman_shift(*lower, field)

    @classmethod
    def from_dict(cls, data: Mapping) -> "LevelScheme":
        """Build from ``{"levels": [...], "decay_rates_hz": [...]}``.

        Each level is ``{"index", "label", "L", "S", "J"}`` (S and J may be
        strings like ``"1/2"``); each rate is ``{"lower", "upper", "rate_hz"}``
        with the rate given as an ordinary frequency (multiplied by 2 pi).
        """
        levels = tuple(
            Level(int(d["index"]), str(d.get("label", d["index"])), int(d["L"]),
                  twice(str(d["S"])), twice(str(d["J"])))
            for d in data["levels"])
        rates = {(int(d["lower"]), int(d["upper"])): TWO_PI * float(d["rate_hz"])
                 for d in data.get("decay_rates_hz", [])}
        return cls(levels, rates)


S12, D32, D52, P12, P32 = 1, 2, 3, 4, 5


def ca40_scheme() -> LevelScheme:
    """The five lowest levels of 40Ca+ with their dipole decay rates."""
    levels = (
        Level(S12, "S1/2", 0, 1, 1),
        Level(D32, "D3/2", 2, 1, 3),
        Level(D52, "D5/2", 2, 1, 5),
        Level(P12, "P1/2", 1, 1, 1),
        Level(P32, "P3/2", 1, 1, 3),
    )
    mhz = TWO_PI * 1e6
    rates = {
        (S12, P12): 20.7 * mhz,
        (D32, P12): 1.69 * mhz,
        (S12, P32): 21.5 * mhz,
        (D32, P32): 0.177 * mhz,
        (D52, P32): 1.58 * mhz,
    }
    return LevelScheme(levels, rates)


def zeeman_detuning(scheme: LevelScheme, upper: tuple[int, int], lower: tuple[int, int],
                    field: FieldConfig,
                    reference: tuple[tuple[int, int], tuple[int, int]] | None = None) -> float:
    """Zeeman offset of the component ``lower -> upper`` from a reference.

    Sublevels are ``(level index, doubled M)``. ``reference`` is the
    ``(upper, lower)`` component a laser is locked to; ``None`` means the
    zero-field line centre.
    """
    shift = scheme.transition_shift(upper, lower, field)
    if reference is not None:
        shift -= scheme.transition_shift(reference[0], reference[1], field)
    return shift


def lineshape(delta, level_width: float, normalized: bool = False):
    """Lorentzian ``(G/2pi) / (delta^2 + G^2/4)``.

    With ``normalized=True`` returns ``g * G * pi / 2`` which equals 1 on
    resonance.
    """
    if level_width <= 0:
        raise DomainError("level width must be positive")
    delta = np.asarray(delta, dtype=float)
    quarter = level_width * level_width / 4.0
    if normalized:
        out = quarter / (delta * delta + quarter)
    else:
        out = (level_width / TWO_PI) / (delta * delta + quarter)
    return out if out.ndim else float(out)


def sideband_lineshape(m, gamma: float):
    """Normalised lineshape at ``m`` trap quanta: ``G^2 / (4 m^2 + G^2)``.

    ``gamma`` is in units of the trap frequency; ``m`` may be an array.
    """
    return lineshape(m, gamma, normalized=True)
