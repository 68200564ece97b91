import numpy as np
import pytest

from spikefisher.errors import DomainError
from spikefisher.fluctuation_laws import beta_for, eta, theta1, theta2, variance_report
from spikefisher.monte_carlo import ModelSpec, run_clt
from spikefisher.phase_maps import SpikeSpec, cca_chain, fisher_spike_limit, psi_cov
from spikefisher.spectral_core import DiscreteMeasure

D1 = DiscreteMeasure.delta(1.0)
HALF = DiscreteMeasure.delta(0.5)


def test_beta_convention():
    assert beta_for("real") == 2
    assert beta_for("complex") == 1
    with pytest.raises(ValueError):
        beta_for("quaternion")


@pytest.mark.parametrize("a", [3.0, 10.0])
def test_theta1_c1_zero_closed_form(a):
    assert theta1(a, a + 1, D1, 0.0) == pytest.approx((1 + 2 * a) / (1 + a) ** 2)
    assert theta1(10.0, 11.0, D1, 0.0) == pytest.approx(21 / 121)


def test_theta1_continuous_at_small_c1():
    c1 = 1e-5
    lc = psi_cov(10.0, D1, c1)
    assert theta1(10.0, lc, D1, c1) == pytest.approx(21 / 121, rel=1e-3)


def test_theta1_invalid_spike():
    with pytest.raises(DomainError):
        theta1(1.2, 2.0, D1, 0.1)


def test_theta2_reduces_to_theta1():
    lc = psi_cov(10.0, D1, 0.1)
    vt, th2 = theta2(10.0, lc, lc, D1, 0.1, 0.0)
    assert vt == 1.0
    assert th2 == pytest.approx(theta1(10.0, lc, D1, 0.1), abs=1e-10)


def test_theta2_decreases_monotonically_to_theta1():
    th1 = theta1(10.0, psi_cov(10.0, D1, 0.1), D1, 0.1)
    vals = []
    for c2 in (0.1, 0.01, 0.001):
        lim = fisher_spike_limit(10.0, D1, 0.1, c2)
        vals.append(theta2(10.0, lim.lambda_c, lim.lam, D1, 0.1, c2)[1])
    gaps = np.abs(np.array(vals) - th1)
    assert np.all(np.diff(gaps) < 0)
    assert gaps[-1] < 0.02


@pytest.mark.parametrize("a", [5.0, 7.5, 10.0, 20.0])
@pytest.mark.parametrize("c1,c2", [(0.1, 0.2), (0.05, 0.5), (0.3, 0.1)])
def test_scales_positive_on_grid(a, c1, c2):
    lim = fisher_spike_limit(a, D1, c1, c2)
    if not lim.valid:
        pytest.skip("below the phase transition")
    th1 = theta1(a, lim.lambda_c, D1, c1)
    vt, th2 = theta2(a, lim.lambda_c, lim.lam, D1, c1, c2)
    assert th1 > 0 and vt > 0 and th2 > 0


@pytest.mark.parametrize("alpha", [10 / 11, 15 / 17, 0.95])
def test_eta_positive(alpha):
    p, q, n = 200, 200, 1000
    lim = cca_chain(alpha, HALF, p, q, n)
    parts = eta(alpha, lim, p, q, n, HALF)
    assert all(v > 0 for v in parts)


def test_eta_requires_valid_spike_and_q_below_n():
    zero = DiscreteMeasure.delta(0.0)
    lim = cca_chain(0.2, zero, 200, 200, 1000)
    with pytest.raises(DomainError):
        eta(0.2, lim, 200, 200, 1000, zero)
    good = cca_chain(0.9, HALF, 200, 200, 1000)
    with pytest.raises(DomainError):
        eta(0.9, good, 200, 1000, 1000, HALF)


def test_variance_report_fields():
    lim = fisher_spike_limit(10.0, D1, 0.1, 0.2)
    rep = variance_report("fisher", 10.0, lim, D1, 200, 2000, N=1000)
    assert rep.beta == 2 and rep.theta2 > rep.theta1 > 0 and rep.eta is None


@pytest.mark.slow
def test_cca_variance_matches_simulation():
    # desk-scale version of the largest-coefficient design with ratios preserved
    spec = ModelSpec(
        "cca", 100, 500, q=100, spikes=(SpikeSpec(10 / 11), SpikeSpec(15 / 17)), bulk=HALF
    )
    summ = run_clt(spec, [0, 1], reps=600, seed=3)
    for v in summ.variance:
        assert 0.8 <= v <= 1.2
    assert min(summ.ks_pvalue) > 0.01
