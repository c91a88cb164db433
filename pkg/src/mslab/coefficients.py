"""Scalar multiscale coefficients a(x, y_1, ..., y_n) and named presets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class MultiscaleCoefficient:
    """Scalar coefficient with ellipticity bounds and scale list.

    ``evaluate(x, ys)`` receives points ``x`` of shape ``(P, d)`` and a list of
    fast variables ``ys`` (each ``(P, d)``, not reduced modulo 1) and returns
    ``(P,)`` values. It must be 1-periodic in every fast variable.
    """

    evaluate: Callable
    epsilons: tuple = ()
    alpha: float = 1.0
    beta: float = 1.0
    name: str = "custom"
    x_dependent: bool = True
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if any(not (0.0 < e < 1.0) for e in eps):
            raise DomainError(f"scales must lie in (0,1), got {eps}")
        if any(eps[i] <= eps[i + 1] for i in range(len(eps) - 1)):
            raise DomainError(f"scales must be strictly decreasing, got {eps}")
        if not (self.alpha > 0 and self.beta >= self.alpha):
            raise DomainError(f"need 0 < alpha <= beta, got {self.alpha}, {self.beta}")
        object.__setattr__(self, "epsilons", eps)

    @property
    def n(self) -> int:
        return len(self.epsilons)

    def __call__(self, x, *ys):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.evaluate(x, [np.atleast_2d(np.asarray(y, dtype=float)) for y in ys]), dtype=float)

    def canonical(self, x):
        """a_eps(x) = a(x, x/eps_1, ..., x/eps_n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self(x, *[x / e for e in self.epsilons])

    def with_scales(self, epsilons: Sequence[float]) -> "MultiscaleCoefficient":
        return MultiscaleCoefficient(
            self.evaluate, tuple(epsilons), self.alpha, self.beta, self.name, self.x_dependent, dict(self.params)
        )

    def check_bounds(self, d: int, samples: int = 2000, rng=None) -> tuple[float, float]:
        rng = np.random.default_rng(0) if rng is None else rng
        x = rng.random((samples, d))
        ys = [rng.random((samples, d)) for _ in range(max(self.n, 1))][: self.n]
        vals = self(x, *ys)
        lo, hi = float(vals.min()), float(vals.max())
        if lo < self.alpha * (1 - 1e-12) or hi > self.beta * (1 + 1e-12):
            raise DomainError(f"{self.name}: sampled range [{lo}, {hi}] outside [{self.alpha}, {self.beta}]")
        return lo, hi

    def check_periodic(self, d: int, samples: int = 200, rng=None) -> float:
        rng = np.random.default_rng(1) if rng is None else rng
        x = rng.random((samples, d))
        ys = [rng.random((samples, d)) for _ in range(self.n)]
        base = self(x, *ys)
        worst = 0.0
        for k in range(self.n):
            for j in range(d):
                shifted = [y.copy() for y in ys]
                shifted[k][:, j] += 1.0
                worst = max(worst, float(np.abs(self(x, *shifted) - base).max()))
        return worst


def constant(value: float = 1.0, epsilons=()) -> MultiscaleCoefficient:
    def ev(x, ys):
        return np.full(x.shape[0], float(value))

    return MultiscaleCoefficient(ev, tuple(epsilons), value, value, "constant", False, {"value": value})


def sin1d(epsilons=(0.125,)) -> MultiscaleCoefficient:
    """2 + sin(2 pi y) acting on the first coordinate of the first fast variable."""

    def ev(x, ys):
        return 2.0 + np.sin(TWO_PI * ys[0][:, 0])

    return MultiscaleCoefficient(ev, tuple(epsilons), 1.0, 3.0, "sin1d", False)


def inverse_sin1d(epsilons=(0.125,)) -> MultiscaleCoefficient:
    def ev(x, ys):
        return 1.0 / (2.0 + np.sin(TWO_PI * ys[0][:, 0]))

    return MultiscaleCoefficient(ev, tuple(epsilons), 1.0 / 3.0, 1.0, "inverse_sin1d", False)


def cos_xy(epsilons=(0.125,)) -> MultiscaleCoefficient:
    """2 + cos(2 pi y_1), used by the two-scale oracle tests."""

    def ev(x, ys):
        return 2.0 + np.cos(TWO_PI * ys[0][:, 0])

    return MultiscaleCoefficient(ev, tuple(epsilons), 1.0, 3.0, "cos_xy", False)


def checker2d(epsilons=(0.125,)) -> MultiscaleCoefficient:
    """Checkerboard with values 1 and 5 on the unit cell.

    In one dimension it degenerates to a two-phase laminate.
    """

    def ev(x, ys):
        y = ys[0]
        s = np.sign(np.sin(TWO_PI * y[:, 0]))
        if y.shape[1] > 1:
            s = s * np.sign(np.sin(TWO_PI * y[:, 1]))
        return 3.0 + 2.0 * s

    return MultiscaleCoefficient(ev, tuple(epsilons), 1.0, 5.0, "checker2d", False)


def product_nscale(epsilons=(0.125,)) -> MultiscaleCoefficient:
    """(1 + mean(x)/2) * prod_k (3 + sin(2 pi sum(y_k))) / 2.

    Depends on the slow variable and on every fast variable, which makes all
    coupling blocks of the homogenized operators structurally nonzero.
    """
    n = len(epsilons)

    def ev(x, ys):
        out = 1.0 + 0.5 * x.mean(axis=1)
        for y in ys:
            out = out * (3.0 + np.sin(TWO_PI * y.sum(axis=1))) / 2.0
        return out

    return MultiscaleCoefficient(ev, tuple(epsilons), 1.0, 1.5 * 2.0 ** n, "product_nscale", True)


def smooth(func: Callable, alpha: float, beta: float, name: str = "smooth") -> MultiscaleCoefficient:
    """Coefficient without fast scales, a(x) = func(x)."""

    def ev(x, ys):
        return np.broadcast_to(np.asarray(func(x), dtype=float), (x.shape[0],)).copy()

    return MultiscaleCoefficient(ev, (), alpha, beta, name, True)


PRESETS = {
    "constant": constant,
    "sin1d": sin1d,
    "inverse_sin1d": inverse_sin1d,
    "cos_xy": cos_xy,
    "checker2d": checker2d,
    "product_nscale": product_nscale,
}

_custom: dict[str, Callable] = {}


def register(name: str, factory: Callable) -> None:
    """Register a coefficient factory ``factory(epsilons) -> MultiscaleCoefficient``."""
    _custom[name] = factory


def preset(name: str, epsilons=(0.125,)) -> MultiscaleCoefficient:
    if name in _custom:
        return _custom[name](tuple(epsilons))
    if name not in PRESETS:
        raise KeyError(f"unknown coefficient preset {name!r}; known: {sorted(PRESETS) + sorted(_custom)}")
    if name == "constant":
        return constant(1.0, epsilons)
    return PRESETS[name](tuple(epsilons))
