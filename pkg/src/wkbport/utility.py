"""HARA-family utility functions and their risk-aversion functionals.

Four members are supported::

    HARA   U(v) = g/(1-g) * (a + b v / g)**(1-g)
    CRRA   U(v) = v**(1-g) / (1-g)
    CARA   U(v) = -exp(-g v) / g
    LOG    U(v) = log v

Each member has a constant ``kappa = -U'(v)**2 / (U''(v) U(v))`` which is the
only utility information the value-function solver needs.  Wealth outside the
domain raises :class:`~wkbport.errors.DomainError`; nothing is clamped.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "UtilityKind",
    "UtilitySpec",
    "evaluate",
    "absolute_risk_aversion",
    "kappa",
]


class UtilityKind(str, Enum):
    HARA = "hara"
    CRRA = "crra"
    CARA = "cara"
    LOG = "log"


@dataclass(frozen=True)
class UtilitySpec:
    """A member of the HARA family.

    Use the ``hara``, ``crra``, ``cara`` and ``log`` constructors rather than
    the raw initializer; they validate parameters.
    """

    kind: UtilityKind
    gamma: float = 1.0
    a: float = 0.0
    b: float = 1.0

    @classmethod
    def hara(cls, a: float, b: float, gamma: float) -> "UtilitySpec":
        if not b > 0:
            raise ValueError(f"HARA requires b > 0, got {b}")
        if gamma in (0.0, 1.0):
            raise ValueError("HARA requires gamma not in {0, 1}")
        return cls(UtilityKind.HARA, gamma=float(gamma), a=float(a), b=float(b))

    @classmethod
    def crra(cls, gamma: float) -> "UtilitySpec":
        if not gamma > 0 or gamma == 1.0:
            raise ValueError(f"CRRA requires gamma > 0, gamma != 1, got {gamma}")
        return cls(UtilityKind.CRRA, gamma=float(gamma))

    @classmethod
    def cara(cls, gamma: float) -> "UtilitySpec":
        if not gamma > 0:
            raise ValueError(f"CARA requires gamma > 0, got {gamma}")
        return cls(UtilityKind.CARA, gamma=float(gamma))

    @classmethod
    def log(cls) -> "UtilitySpec":
        return cls(UtilityKind.LOG)

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "UtilitySpec":
        """Build from a mapping such as ``{"kind": "crra", "gamma": 2.0}``."""
        try:
            kind = UtilityKind(str(cfg["kind"]).lower())
            if kind is UtilityKind.HARA:
                return cls.hara(cfg["a"], cfg["b"], cfg["gamma"])
            if kind is UtilityKind.CRRA:
                return cls.crra(cfg["gamma"])
            if kind is UtilityKind.CARA:
                return cls.cara(cfg["gamma"])
            return cls.log()
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"invalid utility section {dict(cfg)!r}: {exc}") from exc

    def to_config(self) -> dict[str, Any]:
        if self.kind is UtilityKind.HARA:
            return {"kind": "hara", "a": self.a, "b": self.b, "gamma": self.gamma}
        if self.kind is UtilityKind.LOG:
            return {"kind": "log"}
        return {"kind": self.kind.value, "gamma": self.gamma}

    # -- domain -------------------------------------------------------------

    def in_domain(self, v):
        """Boolean (array) mask of admissible wealth values."""
        v = np.asarray(v, dtype=float)
        if self.kind is UtilityKind.CARA:
            return np.isfinite(v)
        if self.kind is UtilityKind.HARA:
            return self.a + (self.b / self.gamma) * v > 0
        return v > 0

    def _check(self, v):
        v_arr = np.asarray(v, dtype=float)
        if not np.all(self.in_domain(v_arr)):
            raise DomainError(f"wealth {v!r} outside the domain of {self.kind.value} utility")
        return v_arr

    @staticmethod
    def _out(x):
        return float(x) if np.ndim(x) == 0 else x

    # -- closed forms -------------------------------------------------------

    def value(self, v):
        v = self._check(v)
        g = self.gamma
        if self.kind is UtilityKind.HARA:
            base = self.a + (self.b / g) * v
            out = g / (1.0 - g) * base ** (1.0 - g)
        elif self.kind is UtilityKind.CRRA:
            out = v ** (1.0 - g) / (1.0 - g)
        elif self.kind is UtilityKind.CARA:
            out = -np.exp(-g * v) / g
        else:
            out = np.log(v)
        return self._out(out)

    def first(self, v):
        """U'(v)."""
        v = self._check(v)
        g = self.gamma
        if self.kind is UtilityKind.HARA:
            out = self.b * (self.a + (self.b / g) * v) ** (-g)
        elif self.kind is UtilityKind.CRRA:
            out = v ** (-g)
        elif self.kind is UtilityKind.CARA:
            out = np.exp(-g * v)
        else:
            out = 1.0 / v
        return self._out(out)

    def second(self, v):
        """U''(v)."""
        v = self._check(v)
        g = self.gamma
        if self.kind is UtilityKind.HARA:
            out = -self.b**2 * (self.a + (self.b / g) * v) ** (-g - 1.0)
        elif self.kind is UtilityKind.CRRA:
            out = -g * v ** (-g - 1.0)
        elif self.kind is UtilityKind.CARA:
            out = -g * np.exp(-g * v)
        else:
            out = -1.0 / v**2
        return self._out(out)

    def absolute_risk_aversion(self, v):
        """-U''(v)/U'(v), computed from simplified closed forms."""
        v = self._check(v)
        g = self.gamma
        if self.kind is UtilityKind.HARA:
            out = self.b / (self.a + (self.b / g) * v)
        elif self.kind is UtilityKind.CRRA:
            out = g / v
        elif self.kind is UtilityKind.CARA:
            out = np.full_like(v, g)
        else:
            out = 1.0 / v
        return self._out(out)

    def relative_risk_aversion(self, v):
        return self._out(np.asarray(v, dtype=float) * self.absolute_risk_aversion(v))

    @property
    def kappa(self) -> float:
        if self.kind is UtilityKind.CARA:
            return -1.0
        if self.kind is UtilityKind.LOG:
            return 0.0
        return (1.0 - self.gamma) / self.gamma

    def sample_domain(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw admissible wealth values, used by property tests."""
        if self.kind is UtilityKind.HARA:
            # a + (b/g) v in (0.05, 5)
            base = rng.uniform(0.05, 5.0, size=count)
            return (base - self.a) * self.gamma / self.b
        if self.kind is UtilityKind.CARA:
            return rng.uniform(-3.0, 3.0, size=count)
        return rng.uniform(0.05, 5.0, size=count)


def evaluate(u: UtilitySpec, v):
    return u.value(v)


def absolute_risk_aversion(u: UtilitySpec, v):
    return u.absolute_risk_aversion(v)


def kappa(u: UtilitySpec) -> float:
    return u.kappa


def kappa_ratio(u: UtilitySpec, v):
    """-U'(v)^2 / (U''(v) U(v)); equals ``u.kappa`` wherever U(v) != 0."""
    return -u.first(v) ** 2 / (u.second(v) * u.value(v))
