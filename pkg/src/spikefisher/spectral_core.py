"""Discrete spectral measures and Stieltjes-transform solvers.

Conventions
-----------
The Stieltjes transform of a measure ``G`` is ``m(z) = int dG(t) / (t - z)``.
It is positive for real ``z`` below the support and negative above it.

``m2``
    Transform of the limiting spectral distribution of the noncentral sample
    covariance matrix ``C_n = (Xi + X)(Xi + X)^* / n``.  It solves
    ``m = b * m1(b * (b*z - (1 - c1)))`` with ``b = 1 + c1*m`` and ``m1`` the
    transform of the signal spectrum ``H``.
``m3``
    Transform of the limiting spectral distribution of the noncentral Fisher
    matrix ``F = C_n S_N^{-1}``.  It solves
    ``m = int dH(t) / (t/e + (1 - c1)/d - z*e/d)`` with ``d = 1 + c2*z*m`` and
    ``e = 1 + (c1 + c2*z)*m``.
``silverstein``
    Transform of the generalized Marchenko-Pastur law with population
    spectrum ``H`` and ratio ``y``, obtained from the companion fixed point
    ``v = -1 / (z - y * int t dH(t) / (1 + t*v))``.

The base measure ``H`` of ``m2`` and ``m3`` may itself be a generalized
Marchenko-Pastur law (:class:`MPLaw`), which is how the canonical correlation
chain is evaluated without discretizing a density.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from . import _kernels as K
from .errors import BranchError, DomainError, PoleError, SolverError

DEFAULT_TOL = 1e-10
DEFAULT_MAXIT = 10_000
DAMPING = 0.5
# heavier damping is tried only when the default oscillates (ratios near 1)
DAMPING_SCHEDULE = (DAMPING, 0.25, 0.1)
# tolerance used when a transform feeds a finite-difference derivative
TIGHT_TOL = 1e-13


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure on ``[0, inf)``.

    Build instances with :meth:`from_atoms`, :meth:`delta` or
    :meth:`empirical`; these normalize ordering and merge duplicate atoms.
    """

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).ravel()
        wts = np.asarray(self.weights, dtype=float).ravel()
        if loc.shape != wts.shape or loc.size == 0:
            raise ValueError("locations and weights must be non-empty and equally long")
        if not np.all(np.isfinite(loc)) or np.any(loc < 0):
            raise ValueError("atom locations must be finite and nonnegative")
        if np.any(wts <= 0):
            raise ValueError("atom weights must be positive")
        if abs(wts.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {wts.sum()!r}, not 1")
        if np.any(np.diff(loc) <= 0):
            raise ValueError("locations must be strictly increasing; use from_atoms")
        loc.setflags(write=False)
        wts.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", wts)

    @classmethod
    def from_atoms(cls, locations, weights=None, normalize=False) -> "DiscreteMeasure":
        loc = np.asarray(locations, dtype=float).ravel()
        if weights is None:
            wts = np.full(loc.size, 1.0 / max(loc.size, 1))
        else:
            wts = np.asarray(weights, dtype=float).ravel()
        if normalize:
            wts = wts / wts.sum()
        uniq, inv = np.unique(loc, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inv, wts)
        return cls(uniq, merged)

    @classmethod
    def delta(cls, x: float) -> "DiscreteMeasure":
        return cls(np.array([float(x)]), np.array([1.0]))

    @classmethod
    def empirical(cls, values) -> "DiscreteMeasure":
        """Empirical spectral distribution: mass ``1/len(values)`` per value."""
        return cls.from_atoms(values)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.locations.tolist(), self.weights.tolist()))

    @property
    def max_atom(self) -> float:
        return float(self.locations[-1])

    def stieltjes(self, z):
        return st_eval(self, z)

    def integrate(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.sum(self.weights * fn(self.locations)))

    def pushforward(self, fn: Callable[[np.ndarray], np.ndarray]) -> "DiscreteMeasure":
        return DiscreteMeasure.from_atoms(fn(self.locations), self.weights)

    def mixture(self, other: "DiscreteMeasure", weight_other: float) -> "DiscreteMeasure":
        loc = np.concatenate([self.locations, other.locations])
        wts = np.concatenate([self.weights * (1 - weight_other), other.weights * weight_other])
        return DiscreteMeasure.from_atoms(loc, wts, normalize=True)

    def to_dict(self) -> dict:
        return {"locations": self.locations.tolist(), "weights": self.weights.tolist()}


@dataclass(frozen=True)
class MPLaw:
    """Generalized Marchenko-Pastur law with population ``population`` and ratio ``y``."""

    population: DiscreteMeasure
    y: float

    def __post_init__(self):
        if not 0 < self.y < 1:
            raise ValueError("MP ratio must lie in (0, 1)")

    @property
    def max_atom(self) -> float:
        # crude upper bound of the support, only used to set solver scales
        return self.population.max_atom * (1 + np.sqrt(self.y)) ** 2

    def stieltjes(self, z):
        return solve_silverstein(self.population, self.y, z).value


Law = Union[DiscreteMeasure, MPLaw]


@dataclass(frozen=True)
class AspectRatios:
    """Dimension ratios used across the three ensembles."""

    p: int
    n: int
    N: int | None = None
    q: int | None = None

    def __post_init__(self):
        if self.p <= 0 or self.n <= 0:
            raise ValueError("dimensions must be positive")
        if self.p >= self.n:
            raise ValueError("need p < n")
        if self.N is not None and self.p >= self.N:
            raise ValueError("need p < N")
        if self.q is not None and not (self.p <= self.q < self.n):
            raise ValueError("need p <= q < n")

    @property
    def c1n(self) -> float:
        return self.p / self.n

    @property
    def c2N(self) -> float:
        if self.N is None:
            raise ValueError("N not set")
        return self.p / self.N

    @property
    def c3(self) -> float:
        return self.p / self._q()

    @property
    def c4(self) -> float:
        return self.p / (self.n - self._q())

    @property
    def r1(self) -> float:
        return self.p / self.n

    @property
    def r2(self) -> float:
        return self._q() / self.n

    def _q(self) -> int:
        if self.q is None:
            raise ValueError("q not set")
        return self.q


@dataclass(frozen=True)
class StSolution:
    value: complex | float
    residual: float
    iterations: int
    branch: str = "continuation"


def _law_arrays(H: Law):
    if isinstance(H, MPLaw):
        pop = H.population
        return K.LAW_MP, pop.locations, pop.weights, float(H.y), H.max_atom
    return K.LAW_DISCRETE, H.locations, H.weights, 0.0, H.max_atom


def st_eval(measure: DiscreteMeasure, x):
    """``sum w_i / (t_i - x)``; raises :class:`PoleError` at an atom."""
    if np.isrealobj(x) or (isinstance(x, complex) and x.imag == 0):
        xr = float(np.real(x))
        hit = np.abs(measure.locations - xr) <= 1e-14 * max(1.0, abs(xr))
        if np.any(hit):
            raise PoleError(f"x={xr!r} coincides with an atom of the measure")
        return float(np.sum(measure.weights / (measure.locations - xr)))
    return complex(np.sum(measure.weights / (measure.locations - x)))


def _solve(eq: int, H: Law, z, c1: float, c2: float, tol: float, maxit: int) -> StSolution:
    law, t, w, y, top = _law_arrays(H)
    zc = complex(z)
    if zc.imag < 0:
        raise DomainError("evaluation point must lie in the closed upper half plane")
    real_point = zc.imag == 0
    if eq == K.EQ_LAW and law == K.LAW_MP and real_point and zc.real == 0:
        raise PoleError("z = 0 is a pole of the companion relation")
    scale = max(1.0, abs(zc), 1.0 + top)
    for damp in DAMPING_SCHEDULE:
        m, v, resid, iters, status = K.fixed_point(
            eq, law, t, w, y, float(c1), float(c2), zc, scale, float(tol), int(maxit), damp
        )
        spurious = real_point and abs(m.imag) > max(1e3 * tol, 1e-8) * (1.0 + abs(m))
        if status == K.OK and not spurious:
            break
    if not np.isfinite(m.real) or not np.isfinite(m.imag):
        raise DomainError(f"transform diverged at z={z!r}")
    if real_point:
        if abs(m.imag) > max(1e3 * tol, 1e-8) * (1.0 + abs(m)):
            if eq != K.EQ_LAW and zc.real < 0 and t.min() >= 0:
                # a nonnegative support cannot contain z; the iteration stalled
                raise SolverError(f"no real fixed point found at z={zc.real!r} (hard edge)")
            raise DomainError(
                f"z={zc.real!r} lies inside the support (Im m = {m.imag:.3g})"
            )
        if status != K.OK:
            raise SolverError(f"no convergence at z={zc.real!r} after {iters} iterations")
        return StSolution(float(m.real), float(resid), int(iters))
    if status != K.OK:
        raise SolverError(f"no convergence at z={z!r} after {iters} iterations")
    return StSolution(complex(m), float(resid), int(iters))


def solve_m2(H: Law, c1: float, z, tol: float = DEFAULT_TOL, maxit: int = DEFAULT_MAXIT) -> StSolution:
    """Stieltjes transform of the noncentral sample covariance LSD at ``z``."""
    if not 0 <= c1 <= 1:
        raise ValueError("c1 must lie in [0, 1]")
    return _solve(K.EQ_M2, H, z, c1, 0.0, tol, maxit)


def solve_m3(
    H: Law,
    c1: float,
    c2: float,
    z,
    tol: float = DEFAULT_TOL,
    maxit: int = DEFAULT_MAXIT,
    check_identity: bool = True,
) -> StSolution:
    """Stieltjes transform of the noncentral Fisher LSD at ``z``.

    With ``check_identity`` the result is cross-checked against ``m2`` through
    ``m3/(1 + c2 z m3) = m2(z (1 + c2 z m3))``; a mismatch above ``10*tol``
    (relative to the size of the terms) raises :class:`BranchError`.
    """
    if not 0 <= c1 <= 1 or not 0 <= c2 < 1:
        raise ValueError("need 0 <= c1 <= 1 and 0 <= c2 < 1")
    sol = _solve(K.EQ_M3, H, z, c1, c2, tol, maxit)
    if check_identity and c2 > 0:
        res = identity_residual(H, c1, c2, z, sol.value, tol=min(tol, 1e-12))
        m = sol.value
        if abs(res) > 10 * tol * (1.0 + abs(m)) * (1.0 + abs(c2 * complex(z) * m)):
            raise BranchError(f"m3/m2 identity violated by {abs(res):.3g} at z={z!r}")
    return sol


def identity_residual(H: Law, c1: float, c2: float, z, m3, tol: float = TIGHT_TOL):
    """``m3/(1+c2 z m3) - m2(z(1+c2 z m3))`` for a given ``m3`` value."""
    d = 1 + c2 * z * m3
    u = z * d
    if np.isrealobj(z) and np.isrealobj(m3):
        u = float(u)
    m2 = solve_m2(H, c1, u, tol=tol).value
    return m3 / d - m2


def underline_m2(H: Law | None, c1: float, z, tol: float = DEFAULT_TOL, m2=None):
    """Companion transform ``-(1 - c1)/z + c1 * m2(z)``.

    A precomputed ``m2`` value skips the solve (``H`` is then unused).
    """
    if z == 0:
        raise PoleError("companion transform has a pole at z = 0")
    if m2 is None:
        m2 = solve_m2(H, c1, z, tol=tol).value
    return -(1 - c1) / z + c1 * m2


def solve_silverstein(
    Hpop: DiscreteMeasure, y: float, z, tol: float = DEFAULT_TOL, maxit: int = DEFAULT_MAXIT
) -> StSolution:
    """Stieltjes transform of the generalized MP law ``F^{y, Hpop}`` at ``z``."""
    if not 0 < y < 1:
        raise ValueError("y must lie in (0, 1)")
    return _solve(K.EQ_LAW, MPLaw(Hpop, y), z, 0.0, 0.0, tol, maxit)


def law_st(H: Law, z, tol: float = DEFAULT_TOL):
    if isinstance(H, MPLaw):
        return solve_silverstein(H.population, H.y, z, tol=tol).value
    return st_eval(H, z)


def fd_step(z: float) -> float:
    return max(1e-6, 1e-6 * abs(z))


def derivative(fn: Callable[[float], float], z: float, h: float | None = None) -> float:
    """Central difference with one Richardson extrapolation.

    Any :class:`DomainError` raised within ``2h`` of ``z`` is re-raised with a
    clearance message.
    """
    h = fd_step(z) if h is None else h
    try:
        d1 = (fn(z + h) - fn(z - h)) / (2 * h)
        d2 = (fn(z + h / 2) - fn(z - h / 2)) / h
    except DomainError as exc:
        raise DomainError(f"insufficient clearance from the support at z={z!r}: {exc}") from exc
    return (4 * d2 - d1) / 3


_TRANSFORMS = ("m1", "m2", "m3", "underline_m2", "silverstein")


def transform_fn(kind: str, **params) -> Callable[[float], float]:
    """Real-valued callable for one of the named transforms.

    Parameters per kind: ``m1(H)``, ``m2(H, c1)``, ``m3(H, c1, c2)``,
    ``underline_m2(H, c1)``, ``silverstein(H, y)``.
    """
    H = params["H"]
    if kind == "m1":
        return lambda x: law_st(H, x, tol=TIGHT_TOL)
    if kind == "m2":
        c1 = params["c1"]
        return lambda x: solve_m2(H, c1, x, tol=TIGHT_TOL).value
    if kind == "m3":
        c1, c2 = params["c1"], params["c2"]
        return lambda x: solve_m3(H, c1, c2, x, tol=TIGHT_TOL, check_identity=False).value
    if kind == "underline_m2":
        c1 = params["c1"]
        return lambda x: underline_m2(H, c1, x, tol=TIGHT_TOL)
    if kind == "silverstein":
        y = params["y"]
        return lambda x: solve_silverstein(H, y, x, tol=TIGHT_TOL).value
    raise ValueError(f"unknown transform {kind!r}; expected one of {_TRANSFORMS}")


def st_derivative(kind: str, z: float, **params) -> float:
    """Numerical derivative of a named transform at a real point ``z``."""
    return derivative(transform_fn(kind, **params), float(z))


def empirical_st(eigs: Sequence[float], z) -> complex | float:
    """``mean(1/(l_i - z))`` of a spectrum."""
    e = np.asarray(eigs, dtype=float)
    return st_eval(DiscreteMeasure.from_atoms(e), z)
