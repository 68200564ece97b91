"""Plug-in estimators of population spikes from observed spectra.

The unknown Stieltjes transform at an outlier is replaced by a local average
over the sample eigenvalues that are not within a relative window of the
outlier, and the limit maps of :mod:`spikefisher.phase_maps` are inverted
algebraically.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import DegenerateSpectrumError, DomainError, SingularityError

DEFAULT_THRESHOLD = 0.2


@dataclass
class EstimateReport:
    index: int
    observed: float
    exclusion_set_size: int
    adjusted_ratio: float
    local_st: float
    estimate: float
    intermediate: float | None = None  # Fisher path: estimate of psi_C(a)
    adjusted_ratio_c1: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _descending(eigs) -> np.ndarray:
    e = np.asarray(eigs, dtype=float).ravel()
    if e.size < 2:
        raise DegenerateSpectrumError("need at least two eigenvalues")
    if np.any(np.diff(e) > 0):
        raise ValueError("eigenvalues must be sorted in descending order")
    return e


def _observed(e: np.ndarray, k: int, block: Sequence[int] | None) -> float:
    if block:
        return float(np.mean(e[list(block)]))
    return float(e[k])


def local_stieltjes(
    eigs,
    k: int,
    threshold: float = DEFAULT_THRESHOLD,
    denom: float = 1.0,
    center: float | None = None,
) -> tuple[float, float, int]:
    """Local Stieltjes estimate at the ``k``-th largest eigenvalue (0-based).

    Returns ``(m_hat, c_tilde, |J_k|)`` where ``J_k`` collects every
    eigenvalue within relative distance ``threshold`` of the center, ``m_hat``
    averages ``1/(l_i - center)`` over the rest and
    ``c_tilde = (p - |J_k|) / denom``.
    """
    e = _descending(eigs)
    if not 0 <= k < e.size:
        raise IndexError(f"index {k} out of range for {e.size} eigenvalues")
    lk = float(e[k]) if center is None else float(center)
    if lk == 0:
        raise DomainError("target eigenvalue is zero")
    s, outside = K.local_sum(e, lk, float(threshold))
    if outside == 0:
        raise DegenerateSpectrumError("every eigenvalue falls inside the exclusion window")
    return s / outside, outside / denom, e.size - outside


def invert_cov(lam: float, m2: float, c1: float) -> float:
    """Population spike from an outlier of ``C_n`` and ``m2`` at the outlier."""
    b = 1 + c1 * m2
    return lam * b * b - (1 - c1) * b


def invert_fisher(
    lam: float, m3: float, c1: float, c2: float, literal_plus: bool = False
) -> tuple[float, float]:
    """``(psi_C estimate, population spike)`` from a Fisher outlier and ``m3``.

    ``literal_plus`` switches the ``(1 - c1)`` term to ``+`` for comparison
    with the uncorrected display of the Fisher-path formula.
    """
    d = 1 + c2 * lam * m3
    if abs(d) < 1e-12:
        raise SingularityError("1 + c2 * lambda * m3 vanishes")
    a_tilde = lam * d
    m2 = m3 / d
    b = 1 + c1 * m2
    s = 1.0 if literal_plus else -1.0
    return a_tilde, (a_tilde * b + s * (1 - c1)) * b


def estimate_spike_cov(
    eigs,
    k: int,
    p: int,
    n: int,
    threshold: float = DEFAULT_THRESHOLD,
    block: Sequence[int] | None = None,
) -> EstimateReport:
    """Estimate ``a`` from the spectrum of ``C_n``.

    ``block`` lists 0-based positions of a multiple spike; their eigenvalues
    are averaged before plugging in.
    """
    e = _descending(eigs)
    lam = _observed(e, k, block)
    m_hat, c1t, size = local_stieltjes(e, k, threshold, n, center=lam)
    return EstimateReport(k, lam, size, c1t, m_hat, invert_cov(lam, m_hat, c1t))


def estimate_spike_fisher(
    eigs,
    k: int,
    p: int,
    n: int,
    N: int,
    threshold: float = DEFAULT_THRESHOLD,
    block: Sequence[int] | None = None,
    literal_plus: bool = False,
) -> EstimateReport:
    """Estimate ``a`` from the spectrum of ``F = C_n S_N^{-1}``.

    Both ratios are adjusted by the exclusion set:
    ``c1 = (p - |J|)/n`` and ``c2 = (p - |J|)/N``.
    """
    e = _descending(eigs)
    lam = _observed(e, k, block)
    m3_hat, c2t, size = local_stieltjes(e, k, threshold, N, center=lam)
    c1t = (p - size) / n
    a_tilde, a_hat = invert_fisher(lam, m3_hat, c1t, c2t, literal_plus)
    return EstimateReport(k, lam, size, c2t, m3_hat, a_hat, a_tilde, c1t)


def rho_sq_from_a(a_hat: float, q: int, n: int) -> float:
    r = q / n * a_hat
    return r / (1 + r)


def estimate_cca(
    lambda_sq,
    p: int,
    q: int,
    n: int,
    indices: Sequence[int] | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    blocks: dict[int, Sequence[int]] | None = None,
    literal_plus: bool = False,
) -> list[EstimateReport]:
    """Estimate squared population canonical correlations.

    The squared sample correlations are mapped to the Fisher scale
    ``l = lambda^2/(1 - lambda^2) * (n - q)/q``; the Fisher-path estimator is
    applied with ``q`` numerator and ``n - q`` denominator degrees of freedom,
    and ``a`` is mapped back by ``(q/n) a / (1 + (q/n) a)``.  The returned
    reports carry the squared correlation in ``estimate`` and the Fisher-scale
    spike in ``intermediate``.
    """
    l2 = np.asarray(lambda_sq, dtype=float).ravel()
    if np.any(l2 < 0) or np.any(l2 >= 1):
        raise DomainError("squared canonical correlations must lie in [0, 1)")
    if not p <= q < n:
        raise DomainError("need p <= q < n")
    order = np.argsort(-l2, kind="stable")
    l2 = l2[order]
    lf = l2 / (1 - l2) * (n - q) / q
    idx = range(l2.size) if indices is None else indices
    blocks = blocks or {}
    out = []
    for k in idx:
        rep = estimate_spike_fisher(
            lf, k, p, q, n - q, threshold, blocks.get(k), literal_plus
        )
        a_hat = rep.estimate
        out.append(
            EstimateReport(
                k,
                float(np.mean(l2[list(blocks[k])])) if k in blocks else float(l2[k]),
                rep.exclusion_set_size,
                rep.adjusted_ratio,
                rep.local_st,
                rho_sq_from_a(a_hat, q, n),
                intermediate=a_hat,
                adjusted_ratio_c1=rep.adjusted_ratio_c1,
            )
        )
    return out
