"""Scale parameters of the Gaussian fluctuations of spiked eigenvalues.

For a simple spike the normalized statistic divided by ``sqrt(beta * theta)``
is asymptotically standard normal.  ``beta`` follows the convention used
throughout this package: ``beta = 2`` for real Gaussian entries and
``beta = 1`` for complex ones (the reverse of the usual Dyson index).

All transforms are evaluated with whatever measure and ratios the caller
passes, so finite-sample and limiting parameters use the same code.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import DomainError
from .phase_maps import SpikeLimit, _CcaContext, check_phase, psi_fisher
from .spectral_core import (
    TIGHT_TOL,
    DiscreteMeasure,
    derivative,
    solve_m2,
    solve_m3,
    solve_silverstein,
)


@dataclass
class VarianceReport:
    beta: int
    theta1: float | None = None
    vartheta: float | None = None
    theta2: float | None = None
    eta1: float | None = None
    eta2: float | None = None
    eta3: float | None = None
    eta: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def beta_for(field: str) -> int:
    if field == "real":
        return 2
    if field == "complex":
        return 1
    raise ValueError(f"field must be 'real' or 'complex', got {field!r}")


def _m2_and_prime(H, c1, x):
    m = solve_m2(H, c1, x, tol=TIGHT_TOL).value
    mp = derivative(lambda z: solve_m2(H, c1, z, tol=TIGHT_TOL).value, x)
    return m, mp


def _theta1_formula(a: float, lc: float, c1: float, m: float, mp: float) -> float:
    um = -(1 - c1) / lc + c1 * m
    ump = (1 - c1) / lc**2 + c1 * mp
    b = 1 + c1 * m
    den = (lc * ump + a * (1 + c1 * m + c1 * lc * mp) / (lc * b * b)) ** 2
    num = ump + a * a * c1 * mp / (lc**2 * b**4) + 2 * a * (1 + um + lc * ump) / (lc**2 * b * b)
    return num / den


def _vartheta_formula(lam: float, c2: float, m3: float, m3p: float) -> float:
    return 1 + 2 * lam * c2 * m3 + c2 * lam**2 * m3p


def _require_valid(a, kind, H, c1, c2=None):
    chk = check_phase(a, kind, H, c1, c2)
    if not chk.valid:
        raise DomainError(f"spike {a!r} is not above the phase transition ({chk.reason})")


def theta1(a: float, lambdaC: float, H, c1: float, check: bool = True) -> float:
    """Scale parameter of ``sqrt(n) (l / lambdaC - 1)`` for a covariance spike."""
    if check:
        _require_valid(a, "covariance", H, c1)
    if c1 == 0:
        # m2(z) = m1(z - 1) and the companion is -1/z
        return (1 + 2 * a) / (1 + a) ** 2
    m, mp = _m2_and_prime(H, c1, lambdaC)
    return _theta1_formula(a, lambdaC, c1, m, mp)


def theta2(
    a: float, lambdaC: float, lam: float, H, c1: float, c2: float, check: bool = True
) -> tuple[float, float]:
    """``(vartheta, theta2)`` for the Fisher statistic ``sqrt(n) (l - lam) / lam``."""
    if check:
        _require_valid(a, "fisher", H, c1, c2)
    th1 = theta1(a, lambdaC, H, c1, check=False)
    if c2 == 0:
        return 1.0, th1
    m3 = solve_m3(H, c1, c2, lam, tol=TIGHT_TOL, check_identity=False).value
    m3p = derivative(
        lambda z: solve_m3(H, c1, c2, z, tol=TIGHT_TOL, check_identity=False).value, lam
    )
    vt = _vartheta_formula(lam, c2, m3, m3p)
    _, m2p = _m2_and_prime(H, c1, lambdaC)
    bracket = (1 - c2 * lambdaC**2 * m2p) / (1 + c2 * lam * m3)
    return vt, c2 / (c1 * vt) + bracket**2 * th1


def eta(
    alpha: float, chain: SpikeLimit, p: int, q: int, n: int, Hcca: DiscreteMeasure
) -> tuple[float, float, float, float]:
    """``(eta1, eta2, eta3, eta)`` for ``sqrt(q) (lambda^2 - t) / t``.

    ``chain`` is the :func:`~spikefisher.phase_maps.cca_chain` entry of
    ``alpha`` computed with the same ``Hcca`` and dimensions.
    """
    if not q < n:
        raise DomainError("need q < n")
    if not chain.valid or chain.t is None:
        raise DomainError(f"alpha={alpha!r} is not above the phase transition ({chain.reason})")
    ctx = _CcaContext.build(Hcca, p, q, n)
    c3, c4 = ctx.c3, ctx.c4
    x_xi, x_c, big_psi, t = chain.psi_xi, chain.psi_c, chain.psi, chain.t
    law = ctx.bulk_c

    # eta1: covariance-stage scale with population spike psi_Xi(f(alpha))
    m_c, m_cp = _m2_and_prime(law, c3, x_c)
    eta1 = _theta1_formula(x_xi, x_c, c3, m_c, m_cp)

    # eta2: Fisher-stage vartheta at Psi(alpha)
    def m_f(z):
        return solve_m3(law, c3, c4, z, tol=TIGHT_TOL, check_identity=False).value

    mf = m_f(big_psi)
    eta2 = _vartheta_formula(big_psi, c4, mf, derivative(m_f, big_psi))

    # eta3: randomness of the signal matrix built from the y-sample
    y = p / n

    def u_mp(z):
        return -(1 - y) / z + y * solve_silverstein(ctx.h_tilde, y, z, tol=TIGHT_TOL).value

    ump = derivative(u_mp, x_xi)
    dpsi_f = (1 - c4 * x_c**2 * m_cp) / (1 + c4 * x_c * m_c) ** 2
    dpsi_c = derivative(ctx.psi_c, x_xi)
    eta3 = (q / n) * dpsi_f**2 * dpsi_c**2 / (x_xi**2 * ump) * x_xi**2 / big_psi**2

    bracket = (1 - c4 * x_c**2 * m_cp) / (1 + c4 * big_psi * mf)
    pref = c3**2 * c4**2 * big_psi**2 / ((c3 + c4 * big_psi) ** 4 * t**2)
    total = (c4 / (c3 * eta2) + bracket**2 * eta1 + eta3) * pref
    return eta1, eta2, eta3, total


def variance_report(
    kind: str,
    value: float,
    limit: SpikeLimit,
    H,
    p: int,
    n: int,
    N: int | None = None,
    q: int | None = None,
    field: str = "real",
) -> VarianceReport:
    """All scale parameters relevant to ``kind`` for one valid spike."""
    rep = VarianceReport(beta=beta_for(field))
    if kind == "covariance":
        rep.theta1 = theta1(value, limit.lambda_c, H, p / n, check=False)
    elif kind == "fisher":
        rep.theta1 = theta1(value, limit.lambda_c, H, p / n, check=False)
        rep.vartheta, rep.theta2 = theta2(
            value, limit.lambda_c, limit.lam, H, p / n, p / N, check=False
        )
    elif kind == "cca":
        rep.eta1, rep.eta2, rep.eta3, rep.eta = eta(value, limit, p, q, n, H)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return rep


def psi_fisher_prime(x: float, H, c1: float, c2: float) -> float:
    return derivative(lambda z: psi_fisher(z, H, c1, c2), x)
