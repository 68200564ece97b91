import numpy as np
import pytest

from spikefisher.errors import DomainError, InsufficientDataError, SpecError
from spikefisher.monte_carlo import (
    ModelSpec,
    cca_eigenvalues,
    ks_normal,
    make_xi,
    replication_rng,
    run_clt,
    run_mse,
    sample_spectrum,
)
from spikefisher.phase_maps import SpikeSpec, spike_limits
from spikefisher.spectral_core import DiscreteMeasure, solve_m2, solve_m3

D1 = DiscreteMeasure.delta(1.0)


def test_make_xi_example():
    xi = make_xi(D1, [SpikeSpec(10.0), SpikeSpec(7.5)], 5, 10)
    assert xi.shape == (5, 10)
    assert np.diag(xi) == pytest.approx([10.0, 8.6603, 3.1623, 3.1623, 3.1623], abs=1e-4)
    eig = np.linalg.eigvalsh(xi @ xi.T / 10)[::-1]
    assert eig == pytest.approx([10.0, 7.5, 1.0, 1.0, 1.0])


def test_make_xi_multiple_spike_design():
    xi = make_xi(D1, [SpikeSpec(10.0), SpikeSpec(7.5, 2)], 100, 1000)
    pop = np.diag(xi) ** 2 / 1000
    assert pop[:4] == pytest.approx([10.0, 7.5, 7.5, 1.0])
    assert np.all(pop[3:] == pytest.approx(1.0))


def test_model_spec_validation():
    with pytest.raises(SpecError):
        ModelSpec("fisher", 200, 2000)  # N missing
    with pytest.raises(SpecError):
        ModelSpec("cca", 200, 1000, q=100)  # p > q
    with pytest.raises(SpecError):
        ModelSpec("covariance", 3, 30, spikes=(SpikeSpec(5.0, 3),))
    with pytest.raises(SpecError):
        ModelSpec("cca", 10, 100, q=20, spikes=(SpikeSpec(1.0),))


def test_rng_is_keyed_by_replication():
    a = replication_rng(1, 3).standard_normal(4)
    b = replication_rng(1, 3).standard_normal(4)
    c = replication_rng(1, 4).standard_normal(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_spectrum_bounds_every_replication():
    cca = ModelSpec("cca", 20, 100, q=30)
    fis = ModelSpec("fisher", 20, 100, N=60, spikes=(SpikeSpec(5.0),))
    cov = ModelSpec("covariance", 20, 100, spikes=(SpikeSpec(5.0),), field="complex")
    for r in range(20):
        e = sample_spectrum(cca, 1, r)
        assert np.all((e >= 0) & (e < 1))
        assert np.all(sample_spectrum(fis, 1, r) >= 0)
        e = sample_spectrum(cov, 1, r)
        assert np.all(e >= -1e-12) and np.all(np.diff(e) <= 0)


def test_cca_eigenvalues_match_matrix_product():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((60, 4))
    y = rng.standard_normal((60, 6)) + x[:, :1]
    xc, yc = x - x.mean(0), y - y.mean(0)
    sxx, syy, sxy = xc.T @ xc, yc.T @ yc, xc.T @ yc
    direct = np.sort(np.linalg.eigvals(np.linalg.solve(sxx, sxy) @ np.linalg.solve(syy, sxy.T)).real)[::-1]
    assert cca_eigenvalues(x, y) == pytest.approx(direct, abs=1e-10)
    perm = rng.permutation(60)
    assert cca_eigenvalues(x[perm], y[perm]) == pytest.approx(cca_eigenvalues(x, y), abs=1e-10)


def test_ks_normal():
    rng = np.random.default_rng(1)
    d, p = ks_normal(rng.standard_normal(1000))
    assert d < 0.05 and p > 0.01
    d, _ = ks_normal(np.zeros(50))
    assert d == pytest.approx(0.5)
    with pytest.raises(InsufficientDataError):
        ks_normal([])


def test_esd_matches_lsd_cdf():
    eig = np.sort(sample_spectrum(ModelSpec("covariance", 500, 5000), 1))
    xs = np.linspace(0.0, 4.0, 801)
    dens = np.array([solve_m2(D1, 0.1, x + 1e-4j).value.imag / np.pi for x in xs])
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2 * np.diff(xs))])
    emp = np.searchsorted(eig, xs, side="right") / eig.size
    assert np.max(np.abs(cdf - emp)) < 0.05


def _fisher_right_edge(H, c1, c2, lo, hi):
    # bisection on the boundary between "inside the support" and a real solution
    for _ in range(40):
        mid = (lo + hi) / 2
        try:
            solve_m3(H, c1, c2, mid)
            hi = mid
        except DomainError:
            lo = mid
    return hi


def test_outliers_separate_from_bulk():
    spec = ModelSpec("fisher", 100, 1000, N=500, spikes=(SpikeSpec(10.0), SpikeSpec(7.5, 2)))
    edge = _fisher_right_edge(D1, 0.1, 0.2, 1.0, 9.0)
    lam_low = spike_limits("fisher", spec.spikes, D1, 100, 1000, N=500).entries[1].lam
    mid = (edge + lam_low) / 2
    sep = 0
    for r in range(100):
        e = sample_spectrum(spec, 2, r)
        sep += e[2] > mid > e[3]
    assert sep >= 99


def test_determinism_across_workers():
    spec = ModelSpec("fisher", 40, 400, N=200, spikes=(SpikeSpec(10.0), SpikeSpec(7.5)))
    a = run_clt(spec, [0, 1], 40, 9, workers=1)
    b = run_clt(spec, [0, 1], 40, 9, workers=3)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert a.to_dict() == b.to_dict()


def test_clt_rejects_bad_targets():
    spec = ModelSpec("covariance", 40, 400, spikes=(SpikeSpec(10.0), SpikeSpec(7.5, 2)))
    with pytest.raises(SpecError):
        run_clt(spec, [1], 30, 0)  # double spike needs goe_pair mode
    with pytest.raises(SpecError):
        run_clt(spec, [5], 30, 0)
    with pytest.raises(SpecError):
        run_clt(spec, [0], 0, 0)


def test_mean_matches_limit_at_desk_scale():
    spec = ModelSpec("covariance", 100, 1000, spikes=(SpikeSpec(10.0), SpikeSpec(7.5)))
    summ = run_clt(spec, [0, 1], 200, 4)
    lims = spike_limits("covariance", spec.spikes, spec.bulk, 100, 1000)
    for j, lim in enumerate(lims.entries):
        assert summ.extra["eigenvalue_mean"][j] == pytest.approx(lim.lambda_c, rel=0.01)


@pytest.mark.slow
def test_wrong_centering_is_detectable():
    spec = ModelSpec("fisher", 100, 1000, N=500, spikes=(SpikeSpec(10.0), SpikeSpec(7.5)))
    good = run_clt(spec, [0, 1], 2000, 6, centering="finite")
    bad = run_clt(spec, [0, 1], 2000, 6, centering="bulk")
    shift = np.abs(np.array(bad.mean) - np.array(good.mean))
    assert np.all(shift > 3 / np.sqrt(2000))


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["covariance", "fisher"])
def test_goe_pair_for_double_spike(kind):
    N = 1000 if kind == "fisher" else None
    spec = ModelSpec(kind, 200, 2000, N=N, spikes=(SpikeSpec(10.0), SpikeSpec(7.5, 2)))
    summ = run_clt(spec, [1], 2000, 5, mode="goe_pair")
    assert summ.extra["goe_joint_cdf_distance"] < 0.05


def test_run_mse_shape():
    spec = ModelSpec("fisher", 20, 200, N=100, spikes=(SpikeSpec(10.0), SpikeSpec(7.5)))
    summ = run_mse(spec, ["cov", "fisher"], 10, 3, p_grid=[20, 40])
    assert set(summ.mse) == {"cov", "fisher"}
    assert set(summ.mse["cov"]) == {"20", "40"}
    assert len(summ.mse["fisher"]["40"]) == 2
    with pytest.raises(SpecError):
        run_mse(spec, ["cca"], 10, 3)
