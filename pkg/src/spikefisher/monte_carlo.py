"""Seeded simulation of the three spiked ensembles and experiment harnesses.

Randomness
----------
Replication ``r`` of an experiment with master seed ``s`` draws from a Philox
counter-based generator keyed by ``SeedSequence(s, spawn_key=(r,))``.  Every
replication therefore sees the same stream whatever the order or the number
of worker threads, and aggregation happens after all replications are placed
by index.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy import stats

from .errors import DomainError, InsufficientDataError, NumericalRankError, SpecError
from .fluctuation_laws import beta_for, eta, theta1, theta2
from .phase_maps import (
    SpikeSpec,
    assign_rank_sets,
    cca_chain,
    covariance_spike_limit,
    fisher_spike_limit,
    leave_one_out,
)
from .spectral_core import DiscreteMeasure
from .spike_estimators import estimate_cca, estimate_spike_cov, estimate_spike_fisher

KINDS = ("covariance", "fisher", "cca")


@dataclass(frozen=True)
class ModelSpec:
    """A spiked model.

    For ``covariance`` and ``fisher`` the spikes and the bulk describe the
    eigenvalues of ``Xi Xi^* / n``.  For ``cca`` they describe squared
    population canonical correlations; ``lambda_diag`` is derived from them.
    The bulk weights times ``p - M`` must be integers.
    """

    kind: str
    p: int
    n: int
    N: int | None = None
    q: int | None = None
    spikes: tuple[SpikeSpec, ...] = ()
    bulk: DiscreteMeasure | None = None  # delta at 1, or at 0 for cca
    field: str = "real"

    def __post_init__(self):
        if self.bulk is None:
            object.__setattr__(
                self, "bulk", DiscreteMeasure.delta(0.0 if self.kind == "cca" else 1.0)
            )
        if self.kind not in KINDS:
            raise SpecError(f"kind must be one of {KINDS}")
        if self.field not in ("real", "complex"):
            raise SpecError("field must be 'real' or 'complex'")
        if not 0 < self.p < self.n:
            raise SpecError("need 0 < p < n")
        if self.kind == "fisher" and (self.N is None or not self.p < self.N):
            raise SpecError("fisher model needs p < N")
        if self.kind == "cca":
            if self.q is None or not self.p <= self.q < self.n:
                raise SpecError("cca model needs p <= q < n")
            if self.bulk.max_atom >= 1:
                raise SpecError("squared correlations must lie in [0, 1)")
        specs = assign_rank_sets(self.spikes, cca=self.kind == "cca")
        object.__setattr__(self, "spikes", tuple(specs))
        self.bulk_counts()  # validates integrality

    @property
    def M(self) -> int:
        return sum(s.multiplicity for s in self.spikes)

    def bulk_counts(self) -> np.ndarray:
        rest = self.p - self.M
        if rest <= 0:
            raise SpecError("spike multiplicities exhaust the dimension")
        raw = self.bulk.weights * rest
        counts = np.rint(raw).astype(int)
        if np.any(np.abs(raw - counts) > 1e-9) or counts.sum() != rest:
            raise SpecError("bulk weights times (p - M) must be integers")
        return counts

    def population(self) -> np.ndarray:
        """All ``p`` population values, spikes first then bulk descending."""
        vals = [s.value for s in self.spikes for _ in range(s.multiplicity)]
        counts = self.bulk_counts()
        for loc, c in sorted(zip(self.bulk.locations, counts), reverse=True):
            vals.extend([loc] * c)
        return np.asarray(vals, dtype=float)

    @property
    def lambda_diag(self) -> np.ndarray:
        if self.kind != "cca":
            raise SpecError("lambda_diag only exists for cca models")
        return np.sqrt(self.population())

    def scaled(self, p: int) -> "ModelSpec":
        """Same model at dimension ``p`` with every ratio preserved."""
        f = p / self.p
        def sc(x):
            if x is None:
                return None
            v = x * f
            if abs(v - round(v)) > 1e-9:
                raise SpecError(f"dimension {x} does not scale to an integer at p={p}")
            return int(round(v))
        return replace(self, p=p, n=sc(self.n), N=sc(self.N), q=sc(self.q))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "p": self.p,
            "n": self.n,
            "N": self.N,
            "q": self.q,
            "spikes": [{"value": s.value, "multiplicity": s.multiplicity} for s in self.spikes],
            "bulk": self.bulk.to_dict(),
            "field": self.field,
        }


# ----------------------------------------------------------------- sampling


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(rep),))
    return np.random.Generator(np.random.Philox(ss))


def _gaussian(rng: np.random.Generator, shape, field: str) -> np.ndarray:
    if field == "real":
        return rng.standard_normal(shape)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


def make_xi(bulk: DiscreteMeasure, spikes: Sequence[SpikeSpec | float], p: int, n: int) -> np.ndarray:
    """``p x n`` matrix with diagonal ``sqrt(n l_i)`` so that ``Xi Xi^T / n`` has the given spectrum."""
    if not p < n:
        raise SpecError("need p < n")
    spec = ModelSpec("covariance", p, n, spikes=tuple(spikes), bulk=bulk)
    xi = np.zeros((p, n))
    xi[np.arange(p), np.arange(p)] = np.sqrt(n * spec.population())
    return xi


def _gram(a: np.ndarray, n: int) -> np.ndarray:
    g = a @ a.conj().T / n
    return (g + g.conj().T) / 2


def sample_spectrum(spec: ModelSpec, seed: int, rep: int = 0) -> np.ndarray:
    """Eigenvalues of one draw of the model, in descending order."""
    rng = replication_rng(seed, rep)
    p, n = spec.p, spec.n
    if spec.kind in ("covariance", "fisher"):
        xi = make_xi(spec.bulk, spec.spikes, p, n)
        c = _gram(xi + _gaussian(rng, (p, n), spec.field), n)
        if spec.kind == "covariance":
            return np.linalg.eigvalsh(c)[::-1]
        s = _gram(_gaussian(rng, (p, spec.N), spec.field), spec.N)
        try:
            vals = scipy.linalg.eigh(c, s, eigvals_only=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalRankError(f"S_N is not positive definite: {exc}") from exc
        return vals[::-1]
    q = spec.q
    rho = spec.lambda_diag
    y = _gaussian(rng, (n, q), spec.field)
    e = _gaussian(rng, (n, p), spec.field)
    x = y[:, :p] * rho + e * np.sqrt(1 - rho**2)
    return cca_eigenvalues(x, y, center=False)


def cca_eigenvalues(x: np.ndarray, y: np.ndarray, center: bool = True) -> np.ndarray:
    """Squared sample canonical correlations of the columns of ``x`` and ``y``.

    Computed as squared singular values of ``Qx^* Qy`` from thin QR
    factorizations, which equals the spectrum of
    ``S_xx^{-1} S_xy S_yy^{-1} S_yx`` without forming any inverse.  Returned in
    descending order, ``min(p, q)`` values.
    """
    if center:
        x = x - x.mean(axis=0)
        y = y - y.mean(axis=0)
    n = x.shape[0]
    if y.shape[0] != n:
        raise SpecError("x and y must have the same number of rows")
    qx, rx = np.linalg.qr(x)
    qy, ry = np.linalg.qr(y)
    tiny = 1e-12 * np.sqrt(n) * max(np.abs(rx).max(), np.abs(ry).max(), 1.0)
    if np.min(np.abs(np.diag(rx))) < tiny or np.min(np.abs(np.diag(ry))) < tiny:
        raise NumericalRankError("sample covariance block is numerically singular")
    sv = np.linalg.svd(qx.conj().T @ qy, compute_uv=False)
    return np.clip(sv**2, 0.0, np.nextafter(1.0, 0.0))


def _map_reps(fn: Callable[[int], object], reps: int, workers: int) -> list:
    if workers <= 1:
        return [fn(r) for r in range(reps)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(reps)))


# --------------------------------------------------------------------- CLT


def ks_normal(samples) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov distance to N(0,1) and asymptotic p-value."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 20:
        raise InsufficientDataError("KS test needs at least 20 samples")
    res = stats.kstest(x, "norm", method="asymp")
    return float(res.statistic), float(res.pvalue)


@dataclass
class ExperimentSummary:
    kind: str
    seed: int
    reps: int
    targets: list[int]
    eigenvalues: np.ndarray | None = None  # reps x targets
    gamma: np.ndarray | None = None
    centers: list[float] | None = None
    scales: list[float] | None = None
    mean: list[float] | None = None
    variance: list[float] | None = None
    ks_distance: list[float] | None = None
    ks_pvalue: list[float] | None = None
    mse: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self, include_samples: bool = False) -> dict:
        out = {
            "kind": self.kind,
            "seed": self.seed,
            "reps": self.reps,
            "targets": self.targets,
        }
        for name in ("centers", "scales", "mean", "variance", "ks_distance", "ks_pvalue", "mse"):
            val = getattr(self, name)
            if val is not None:
                out[name] = val
        if include_samples:
            for name in ("eigenvalues", "gamma"):
                val = getattr(self, name)
                if val is not None:
                    out[name] = val.tolist()
        out.update(self.extra)
        return out


def _center_and_scale(spec: ModelSpec, k: int, centering: str) -> tuple[float, float]:
    """Center and ``theta``-type scale for spike ``k``.

    ``centering`` selects the signal measure: ``finite`` removes only the
    spike's own block, ``bulk`` drops every spike.
    """
    if centering not in ("finite", "bulk"):
        raise ValueError("centering must be 'finite' or 'bulk'")
    H = leave_one_out(spec.bulk, spec.spikes, spec.p, k if centering == "finite" else None)
    s = spec.spikes[k]
    p, n = spec.p, spec.n
    if spec.kind == "covariance":
        lim = covariance_spike_limit(s, H, p / n)
        if not lim.valid:
            raise DomainError(f"spike {s.value} invalid: {lim.reason}")
        return lim.lambda_c, theta1(s.value, lim.lambda_c, H, p / n, check=False)
    if spec.kind == "fisher":
        lim = fisher_spike_limit(s, H, p / n, p / spec.N)
        if not lim.valid:
            raise DomainError(f"spike {s.value} invalid: {lim.reason}")
        _, th2 = theta2(s.value, lim.lambda_c, lim.lam, H, p / n, p / spec.N, check=False)
        return lim.lam, th2
    lim = cca_chain(s.value, H, p, spec.q, n)
    if not lim.valid:
        raise DomainError(f"spike {s.value} invalid: {lim.reason}")
    return lim.t, eta(s.value, lim, p, spec.q, n, H)[3]


def normalized_statistic(spec: ModelSpec, values, center: float, scale: float) -> np.ndarray:
    beta = beta_for(spec.field)
    v = np.asarray(values, dtype=float)
    root = np.sqrt(spec.q if spec.kind == "cca" else spec.n)
    return root * (v - center) / center / np.sqrt(beta * scale)


def goe_pair_sample(reps: int, seed: int, field: str = "real") -> np.ndarray:
    """Ordered eigenvalue pairs of a 2x2 GOE (real) or GUE (complex) matrix.

    Diagonal entries have variance 1 and off-diagonal entries variance 1/2, so
    the diagonal matches a standardized simple-spike statistic.
    """
    out = np.empty((reps, 2))
    for r in range(reps):
        rng = replication_rng(seed, r)
        d = rng.standard_normal(2)
        off = _gaussian(rng, (), field) / np.sqrt(2.0)
        m = np.array([[d[0], off], [np.conj(off), d[1]]])
        out[r] = np.linalg.eigvalsh(m)[::-1]
    return out


def joint_cdf_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Largest gap between the bivariate empirical CDFs of two pair samples.

    The supremum is taken over the grid of observed coordinates.
    """
    grid_x = np.unique(np.concatenate([a[:, 0], b[:, 0]]))
    grid_y = np.unique(np.concatenate([a[:, 1], b[:, 1]]))
    if grid_x.size > 400:
        grid_x = np.quantile(grid_x, np.linspace(0, 1, 400))
    if grid_y.size > 400:
        grid_y = np.quantile(grid_y, np.linspace(0, 1, 400))

    def ecdf(s):
        ix = (s[:, 0][None, :] <= grid_x[:, None]).astype(float)
        iy = (s[:, 1][None, :] <= grid_y[:, None]).astype(float)
        return ix @ iy.T / s.shape[0]

    return float(np.max(np.abs(ecdf(a) - ecdf(b))))


def run_clt(
    spec: ModelSpec,
    targets: Sequence[int] | int,
    reps: int,
    seed: int,
    workers: int = 1,
    centering: str = "finite",
    mode: str = "normal",
) -> ExperimentSummary:
    """Normalized fluctuation statistics of selected spikes.

    ``targets`` are 0-based spike indices.  In ``normal`` mode each spike
    must be simple and its statistic is compared with N(0,1).  In
    ``goe_pair`` mode a single spike of multiplicity 2 is compared with the
    ordered eigenvalues of a 2x2 GOE/GUE matrix.
    """
    if reps < 1:
        raise SpecError("reps must be at least 1")
    targets = [targets] if isinstance(targets, int) else list(targets)
    for k in targets:
        if not 0 <= k < len(spec.spikes):
            raise SpecError(f"target spike {k} does not exist")
    if mode == "normal":
        for k in targets:
            if spec.spikes[k].multiplicity != 1:
                raise SpecError("normality mode needs simple spikes; use mode='goe_pair'")
        ranks = [spec.spikes[k].rank_set[0] for k in targets]
    elif mode == "goe_pair":
        if len(targets) != 1 or spec.spikes[targets[0]].multiplicity != 2:
            raise SpecError("goe_pair mode needs exactly one spike of multiplicity 2")
        ranks = list(spec.spikes[targets[0]].rank_set)
    else:
        raise SpecError(f"unknown mode {mode!r}")

    cs = [_center_and_scale(spec, k, centering) for k in targets]
    if mode == "goe_pair":
        cs = cs * 2
    rows = _map_reps(lambda r: sample_spectrum(spec, seed, r)[ranks], reps, workers)
    eig = np.vstack(rows)
    gam = np.column_stack(
        [normalized_statistic(spec, eig[:, j], c, s) for j, (c, s) in enumerate(cs)]
    )
    summ = ExperimentSummary(
        kind=spec.kind,
        seed=int(seed),
        reps=int(reps),
        targets=targets,
        eigenvalues=eig,
        gamma=gam,
        centers=[c for c, _ in cs],
        scales=[s for _, s in cs],
        mean=gam.mean(axis=0).tolist(),
        variance=gam.var(axis=0, ddof=1).tolist() if reps > 1 else [float("nan")] * len(cs),
    )
    summ.extra["eigenvalue_mean"] = eig.mean(axis=0).tolist()
    summ.extra["centering"] = centering
    summ.extra["mode"] = mode
    if reps >= 20:
        if mode == "normal":
            ks = [ks_normal(gam[:, j]) for j in range(gam.shape[1])]
            summ.ks_distance = [d for d, _ in ks]
            summ.ks_pvalue = [pv for _, pv in ks]
        else:
            ref = goe_pair_sample(max(reps, 20000), seed + 1, spec.field)
            summ.extra["goe_joint_cdf_distance"] = joint_cdf_distance(gam, ref)
    return summ


# --------------------------------------------------------------------- MSE


PATHS = ("cov", "fisher", "cca")


def _estimates(spec: ModelSpec, path: str, eig: np.ndarray, threshold: float) -> list[float]:
    out = []
    for s in spec.spikes:
        k = s.rank_set[0]
        block = s.rank_set if s.multiplicity > 1 else None
        if path == "cov":
            out.append(estimate_spike_cov(eig, k, spec.p, spec.n, threshold, block).estimate)
        elif path == "fisher":
            out.append(
                estimate_spike_fisher(eig, k, spec.p, spec.n, spec.N, threshold, block).estimate
            )
        else:
            blocks = {k: block} if block else None
            out.append(
                estimate_cca(eig, spec.p, spec.q, spec.n, [k], threshold, blocks)[0].estimate
            )
    return out


def _path_spec(spec: ModelSpec, path: str) -> ModelSpec:
    if path == "cov":
        return replace(spec, kind="covariance", N=None)
    if path == "fisher":
        if spec.N is None:
            raise SpecError("fisher path needs N")
        return replace(spec, kind="fisher")
    if spec.kind != "cca":
        raise SpecError("cca path needs a cca model")
    return spec


def run_mse(
    spec: ModelSpec,
    paths: Sequence[str],
    reps: int,
    seed: int,
    p_grid: Sequence[int] | None = None,
    threshold: float = 0.2,
    workers: int = 1,
) -> ExperimentSummary:
    """Mean squared error of the plug-in estimators against the true spikes.

    For each ``p`` in ``p_grid`` the model is rescaled with its ratios
    preserved.  The covariance and Fisher paths share the same ``C_n`` draw in
    each replication because the Fisher draw extends the covariance one.
    Results are keyed ``mse[path][p] = [mse per spike]``.
    """
    if reps < 1:
        raise SpecError("reps must be at least 1")
    for path in paths:
        if path not in PATHS:
            raise SpecError(f"unknown estimator path {path!r}")
    grid = list(p_grid) if p_grid else [spec.p]
    mse: dict = {}
    means: dict = {}
    for path in paths:
        mse[path] = {}
        means[path] = {}
        for p in grid:
            sp = _path_spec(spec.scaled(p), path)
            est = np.array(
                _map_reps(
                    lambda r: _estimates(sp, path, sample_spectrum(sp, seed, r), threshold),
                    reps,
                    workers,
                )
            )
            truth = np.array([s.value for s in sp.spikes])
            mse[path][str(p)] = ((est - truth) ** 2).mean(axis=0).tolist()
            means[path][str(p)] = est.mean(axis=0).tolist()
    summ = ExperimentSummary(
        kind=spec.kind, seed=int(seed), reps=int(reps), targets=list(range(len(spec.spikes))), mse=mse
    )
    summ.extra["estimate_mean"] = means
    summ.extra["truth"] = [s.value for s in spec.spikes]
    summ.extra["p_grid"] = grid
    return summ
