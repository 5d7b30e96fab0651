"""offspring.py — Offspring laws (pmf on ℕ₀) with cached moments."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import brentq

from config import PMF_TOLERANCE

from .errors import InvalidPmf, SubcriticalOffspring


@dataclass(frozen=True)
class OffspringLaw:
    pmf: tuple[tuple[int, float], ...]
    m1: float
    m2: float
    _ks:  np.ndarray = field(repr=False, compare=False)
    _cdf: np.ndarray = field(repr=False, compare=False)

    @property
    def variance(self) -> float:
        return self.m2 - self.m1 ** 2

    def as_dict(self) -> dict[int, float]:
        return dict(self.pmf)

    def sample(self, stream) -> int:
        """One draw k ~ pmf by inversion of a single uniform."""
        u = stream.random()
        i = int(np.searchsorted(self._cdf, u, side="right"))
        return int(self._ks[min(i, len(self._ks) - 1)])

    def generating(self, s: float) -> float:
        """f(s) = Σ_k p_k s^k."""
        return sum(p * s ** k for k, p in self.pmf)


def make_offspring(pmf: Mapping) -> OffspringLaw:
    """Validate a pmf and build its law.

    Keys may be ints or numeric strings (config files give strings). Rejects
    negative mass, bad normalization and laws with mean at most 1.
    """
    if not pmf:
        raise InvalidPmf("offspring pmf is empty")
    items: dict[int, float] = {}
    for k, p in pmf.items():
        try:
            ki = int(k)
        except (TypeError, ValueError):
            raise InvalidPmf(f"offspring count {k!r} is not an integer") from None
        if ki < 0:
            raise InvalidPmf(f"offspring count {ki} is negative")
        p = float(p)
        if not math.isfinite(p) or p < 0:
            raise InvalidPmf(f"offspring mass P(m={ki}) = {p} is negative or not finite")
        items[ki] = items.get(ki, 0.0) + p

    total = math.fsum(items.values())
    if abs(total - 1.0) > PMF_TOLERANCE:
        raise InvalidPmf(f"offspring pmf sums to {total!r}, not 1 (tolerance {PMF_TOLERANCE})")

    ordered = tuple(sorted((k, p) for k, p in items.items() if p > 0))
    m1 = math.fsum(k * p for k, p in ordered)
    m2 = math.fsum(k * k * p for k, p in ordered)
    if m1 <= 1:
        raise SubcriticalOffspring(f"offspring mean must exceed 1 (supercritical branching), got m1 = {m1}")
    # Jensen; fails only on rounding garbage
    assert m2 >= m1 * m1 - 1e-12, (m1, m2)

    ks = np.array([k for k, _ in ordered], dtype=np.int64)
    cdf = np.cumsum([p for _, p in ordered])
    cdf[-1] = 1.0
    return OffspringLaw(pmf=ordered, m1=m1, m2=m2, _ks=ks, _cdf=cdf)


def extinction_fixed_point(law: OffspringLaw) -> float:
    """Smallest root in [0, 1] of q = f(q): extinction probability without motion or killing.

    With a constant branching rate the embedded generation process is a
    Galton–Watson tree, so the rate r does not enter.
    """
    p0 = law.as_dict().get(0, 0.0)
    if p0 == 0.0:
        return 0.0
    # f(q) - q is positive at 0 and negative just below 1 when m1 > 1
    hi = 1.0 - 1e-12
    g = lambda q: law.generating(q) - q  # noqa: E731
    while g(hi) >= 0 and hi > 0.5:
        hi = 1.0 - (1.0 - hi) * 10
    return brentq(g, 0.0, hi, xtol=1e-15)
