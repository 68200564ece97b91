"""Deterministic spike-limit maps and phase-transition checks.

Maps
----
``psi_cov(a)``
    Almost-sure limit of a sample eigenvalue of ``C_n`` driven by a signal
    spike ``a``: ``a*k**2 + (1 - c1)*k`` with ``k = 1 - c1*m1(a)``.
``psi_fisher(x)``
    Pushes a ``C_n`` outlier ``x`` through the independent Wishart
    denominator: ``x / (1 + c2*x*m2(x))``.
CCA chain
    ``t = g_inv(psi_F(psi_C(psi_Xi(f(alpha)))))`` where ``f`` rescales a
    squared canonical correlation to a signal eigenvalue, ``psi_Xi`` accounts
    for the randomness of the signal matrix, and ``g_inv`` maps the Fisher
    scale back to squared correlations.

Finite-sample measures
----------------------
When centering sample eigenvalues, the signal spectrum fed to the maps should
be the empirical one with the spike's own block removed
(:func:`leave_one_out`).  The remaining spikes stay in the measure; at
moderate ``p`` they shift the outliers by ``O(1/p)``, which is visible at the
``sqrt(n)`` scale of the fluctuation statistics.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, PoleError, SingularityError, SolverError, SpecError
from .spectral_core import (
    TIGHT_TOL,
    DiscreteMeasure,
    MPLaw,
    derivative,
    law_st,
    solve_m2,
    solve_silverstein,
    st_eval,
)

PHASE_MARGIN = 1e-8
DEFAULT_SEPARATION = 1e-3


@dataclass(frozen=True)
class SpikeSpec:
    """One population spike with its multiplicity.

    ``rank_set`` holds the 0-based positions of the matching sample
    eigenvalues in the descending spectrum; :func:`assign_rank_sets` fills it.
    """

    value: float
    multiplicity: int = 1
    rank_set: tuple[int, ...] = ()

    def __post_init__(self):
        if self.multiplicity < 1:
            raise SpecError("multiplicity must be a positive integer")
        if not np.isfinite(self.value):
            raise SpecError("spike value must be finite")
        if self.rank_set and len(self.rank_set) != self.multiplicity:
            raise SpecError("rank_set length must equal multiplicity")


def assign_rank_sets(
    spikes: Sequence[SpikeSpec | float],
    separation: float = DEFAULT_SEPARATION,
    cca: bool = False,
) -> list[SpikeSpec]:
    """Sort spikes descending, validate separation and attach rank sets."""
    specs = [s if isinstance(s, SpikeSpec) else SpikeSpec(float(s)) for s in spikes]
    specs.sort(key=lambda s: -s.value)
    for i, s in enumerate(specs):
        if cca and not 0 < s.value < 1:
            raise SpecError(f"canonical correlation spike {s.value} must lie in (0, 1)")
        if not cca and s.value <= 0:
            raise SpecError(f"spike {s.value} must be positive")
        for other in specs[:i]:
            if abs(s.value / other.value - 1) <= separation:
                raise SpecError(
                    f"spikes {other.value} and {s.value} violate the separation d={separation}"
                )
    out, start = [], 0
    for s in specs:
        ranks = tuple(range(start, start + s.multiplicity))
        out.append(SpikeSpec(s.value, s.multiplicity, ranks))
        start += s.multiplicity
    return out


def leave_one_out(
    bulk: DiscreteMeasure, spikes: Sequence[SpikeSpec], p: int, k: int | None
) -> DiscreteMeasure:
    """Empirical signal spectrum with the block of spike ``k`` removed.

    ``bulk`` describes the ``p - M`` non-spiked eigenvalues.  ``k=None``
    returns the bulk alone.
    """
    M = sum(s.multiplicity for s in spikes)
    if M >= p:
        raise SpecError("spike multiplicities exhaust the dimension")
    if k is None:
        return bulk
    others = [s for j, s in enumerate(spikes) if j != k]
    if not others:
        return bulk
    locs = np.concatenate([bulk.locations, [s.value for s in others]])
    wts = np.concatenate([bulk.weights * (p - M), [float(s.multiplicity) for s in others]])
    return DiscreteMeasure.from_atoms(locs, wts, normalize=True)


# ---------------------------------------------------------------- basic maps


def _m1(H, a, tol=TIGHT_TOL):
    if isinstance(H, DiscreteMeasure):
        return st_eval(H, a)
    return law_st(H, a, tol=tol)


def psi_cov(a: float, H, c1: float, sign: float = 1.0) -> float:
    """Limit of the sample outlier of ``C_n`` produced by a signal spike ``a``.

    ``H`` may be a :class:`DiscreteMeasure` or an :class:`MPLaw`.  ``sign``
    multiplies the ``(1 - c1)`` term; only the CCA compatibility path ever
    passes ``-1``.
    """
    k = 1.0 - c1 * _m1(H, a)
    return a * k * k + sign * (1.0 - c1) * k


def psi_fisher(x: float, H, c1: float, c2: float) -> float:
    """``x / (1 + c2 x m2(x))`` with ``m2`` the LSD transform of ``C_n``."""
    if c2 == 0:
        return float(x)
    m2 = solve_m2(H, c1, x, tol=TIGHT_TOL).value
    den = 1.0 + c2 * x * m2
    if abs(den) < 1e-12:
        raise SingularityError(f"psi_F denominator vanishes at x={x!r}")
    return x / den


def g_map(lambda_sq: float, q: int, n: int) -> float:
    """Fisher-scale eigenvalue ``(n-q) l / (q (1 - l))`` of a squared correlation ``l``."""
    if not 0 <= lambda_sq < 1:
        raise DomainError("squared canonical correlation must lie in [0, 1)")
    if not q < n:
        raise DomainError("need q < n")
    return (n - q) * lambda_sq / (q * (1.0 - lambda_sq))


def g_inv(l: float, q: int, n: int) -> float:
    if l < 0:
        raise DomainError("Fisher-scale eigenvalue must be nonnegative")
    return l * q / ((n - q) + l * q)


def phi_zero_case(alpha: float, r1: float, r2: float) -> tuple[float, float]:
    """Closed form of the CCA limit when the correlation bulk is a point mass at 0.

    Returns ``(phi(alpha), alpha_r)`` where ``alpha_r`` is the detection
    threshold.
    """
    if alpha == 0:
        raise PoleError("phi has a pole at alpha = 0")
    phi = (alpha * (1 - r1) + r1) * (alpha * (1 - r2) + r2) / alpha
    alpha_r = np.sqrt(r1 * r2 / ((1 - r1) * (1 - r2)))
    return float(phi), float(alpha_r)


# ------------------------------------------------------------- phase checks


@dataclass
class PhaseCheck:
    valid: bool
    status: str  # "valid" | "invalid" | "critical" | "pole"
    derivatives: dict = field(default_factory=dict)
    reason: str = ""


def _classify(derivs: dict, margin: float = PHASE_MARGIN) -> PhaseCheck:
    status = "valid"
    reasons = []
    for name, d in derivs.items():
        if d < -margin:
            status = "invalid"
            reasons.append(f"{name} = {d:.6g} < 0")
        elif d <= margin and status != "invalid":
            status = "critical"
            reasons.append(f"|{name}| = {abs(d):.3g} within margin")
    return PhaseCheck(status == "valid", status, derivs, "; ".join(reasons))


def check_phase(
    value: float,
    kind: str,
    H=None,
    c1: float | None = None,
    c2: float | None = None,
    dims: tuple[int, int, int] | None = None,
    margin: float = PHASE_MARGIN,
) -> PhaseCheck:
    """Strict positivity of every map derivative along the relevant chain.

    ``kind`` is ``covariance`` or ``fisher`` (``value`` is the spike ``a``,
    ``H`` the signal bulk) or ``cca`` (``value`` is ``alpha``, ``H`` the
    squared-correlation bulk, ``dims = (p, q, n)``).
    """
    derivs: dict[str, float] = {}
    try:
        if kind in ("covariance", "fisher"):
            psi_cov(value, H, c1)  # a spike sitting on a bulk atom is a pole
            derivs["psi_C'"] = derivative(lambda a: psi_cov(a, H, c1), value)
            if kind == "fisher" and derivs["psi_C'"] > margin:
                lc = psi_cov(value, H, c1)
                derivs["psi_F'"] = derivative(lambda x: psi_fisher(x, H, c1, c2), lc)
        elif kind == "cca":
            p, q, n = dims
            ctx = _CcaContext.build(H, p, q, n)
            fa = ctx.f(value)
            ctx.psi_xi(fa)
            derivs["psi_Xi'"] = derivative(ctx.psi_xi, fa)
            if derivs["psi_Xi'"] > margin:
                x = ctx.psi_xi(fa)
                derivs["psi_C'"] = derivative(ctx.psi_c, x)
                if derivs["psi_C'"] > margin:
                    derivs["psi_F'"] = derivative(ctx.psi_f, ctx.psi_c(x))
        else:
            raise SpecError(f"unknown model kind {kind!r}")
    except PoleError as exc:
        return PhaseCheck(False, "pole", derivs, f"PoleError: {exc}")
    except (DomainError, SolverError) as exc:
        return PhaseCheck(False, "invalid", derivs, f"{type(exc).__name__}: {exc}")
    return _classify(derivs, margin)


# ----------------------------------------------------------- spike reports


@dataclass
class SpikeLimit:
    """Limits for one spike; CCA-only fields stay ``None`` otherwise."""

    value: float
    valid: bool
    status: str
    lambda_c: float | None = None
    lam: float | None = None
    f: float | None = None
    psi_xi: float | None = None
    psi_c: float | None = None
    psi: float | None = None
    t: float | None = None
    reason: str = ""
    stage: str = ""

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class SpikeLimitReport:
    kind: str
    entries: list[SpikeLimit]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "entries": [e.to_dict() for e in self.entries]}


def covariance_spike_limit(spec: SpikeSpec | float, H, c1: float) -> SpikeLimit:
    a = spec.value if isinstance(spec, SpikeSpec) else float(spec)
    chk = check_phase(a, "covariance", H, c1)
    if not chk.valid:
        return SpikeLimit(a, False, chk.status, reason=chk.reason, stage="psi_C")
    return SpikeLimit(a, True, "valid", lambda_c=psi_cov(a, H, c1))


def fisher_spike_limit(spec: SpikeSpec | float, H, c1: float, c2: float) -> SpikeLimit:
    """``lambda_C = psi_C(a)`` and ``lambda = psi_F(lambda_C)`` with a phase flag."""
    a = spec.value if isinstance(spec, SpikeSpec) else float(spec)
    chk = check_phase(a, "fisher", H, c1, c2)
    if not chk.valid:
        stage = "psi_F" if "psi_F'" in chk.derivatives else "psi_C"
        return SpikeLimit(a, False, chk.status, reason=chk.reason, stage=stage)
    lc = psi_cov(a, H, c1)
    return SpikeLimit(a, True, "valid", lambda_c=lc, lam=psi_fisher(lc, H, c1, c2))


# ---------------------------------------------------------------- CCA chain


@dataclass(frozen=True)
class _CcaContext:
    """Measures and ratios shared by all stages of the CCA chain."""

    p: int
    q: int
    n: int
    h_tilde: DiscreteMeasure
    bulk_c: MPLaw
    sign: float

    @classmethod
    def build(cls, Hcca: DiscreteMeasure, p: int, q: int, n: int, sign: float = 1.0):
        if not p <= q < n:
            raise DomainError("CCA requires p <= q < n")
        if Hcca.max_atom >= 1:
            raise DomainError("squared canonical correlations must lie in [0, 1)")
        h_tilde = Hcca.pushforward(lambda r: (n / q) * r / (1 - r))
        return cls(p, q, n, h_tilde, MPLaw(h_tilde, p / n), sign)

    @property
    def c3(self) -> float:
        return self.p / self.q

    @property
    def c4(self) -> float:
        return self.p / (self.n - self.q)

    def f(self, alpha: float) -> float:
        if not 0 <= alpha < 1:
            raise DomainError("alpha must lie in [0, 1)")
        return (self.n / self.q) * alpha / (1 - alpha)

    def psi_xi(self, x: float) -> float:
        ht = self.h_tilde
        if np.any(np.abs(ht.locations - x) <= 1e-14 * max(1.0, abs(x))):
            raise PoleError(f"f(alpha)={x!r} coincides with a bulk atom")
        return x * (1 + (self.p / self.n) * ht.integrate(lambda t: t / (x - t)))

    def psi_c(self, x: float) -> float:
        return psi_cov(x, self.bulk_c, self.c3, sign=self.sign)

    def m_c(self, x: float, tol: float = TIGHT_TOL) -> float:
        return solve_m2(self.bulk_c, self.c3, x, tol=tol).value

    def psi_f(self, x: float) -> float:
        return psi_fisher(x, self.bulk_c, self.c3, self.c4)

    def g_inv(self, l: float) -> float:
        return g_inv(l, self.q, self.n)


def cca_chain(
    alpha: float,
    Hcca: DiscreteMeasure,
    p: int,
    q: int,
    n: int,
    literal_sign: bool = False,
) -> SpikeLimit:
    """Limit ``t(alpha)`` of a squared sample canonical correlation.

    ``Hcca`` is the distribution of the non-spiked squared population
    correlations.  ``literal_sign=True`` flips the sign of the ``(1 - p/q)``
    term in the covariance stage; see the README for why the default is
    ``+``.
    """
    sign = -1.0 if literal_sign else 1.0
    try:
        ctx = _CcaContext.build(Hcca, p, q, n, sign)
    except DomainError as exc:
        return SpikeLimit(alpha, False, "invalid", reason=str(exc), stage="setup")
    if alpha == 0:
        # f(0) = 0 lies at or below the bulk; report the boundary value only
        return SpikeLimit(alpha, False, "invalid", f=0.0, reason="alpha = 0", stage="f")
    chk = check_phase(alpha, "cca", Hcca, dims=(p, q, n))
    out = SpikeLimit(alpha, chk.valid, chk.status, reason=chk.reason)
    if not chk.valid:
        failed = [k for k, v in chk.derivatives.items() if v <= PHASE_MARGIN]
        out.stage = failed[0].rstrip("'") if failed else "evaluation"
        return out
    stage = "f"
    try:
        out.f = ctx.f(alpha)
        stage = "psi_Xi"
        out.psi_xi = ctx.psi_xi(out.f)
        stage = "psi_C"
        out.psi_c = ctx.psi_c(out.psi_xi)
        stage = "psi_F"
        out.psi = ctx.psi_f(out.psi_c)
        stage = "g_inv"
        out.t = ctx.g_inv(out.psi)
    except (DomainError, SolverError) as exc:
        out.valid = False
        out.status = "invalid"
        out.reason = f"{stage}: {exc}"
        out.stage = stage
    return out


def spike_limits(
    kind: str,
    spikes: Sequence[SpikeSpec],
    bulk: DiscreteMeasure,
    p: int,
    n: int,
    N: int | None = None,
    q: int | None = None,
    finite: bool = True,
) -> SpikeLimitReport:
    """Limits for every spike of a model.

    With ``finite=True`` each spike sees the empirical signal spectrum with
    its own block removed; otherwise the bulk measure alone.
    """
    entries = []
    for k, s in enumerate(spikes):
        H = leave_one_out(bulk, spikes, p, k if finite else None)
        if kind == "covariance":
            entries.append(covariance_spike_limit(s, H, p / n))
        elif kind == "fisher":
            entries.append(fisher_spike_limit(s, H, p / n, p / N))
        elif kind == "cca":
            entries.append(cca_chain(s.value, H, p, q, n))
        else:
            raise SpecError(f"unknown model kind {kind!r}")
    return SpikeLimitReport(kind, entries)
