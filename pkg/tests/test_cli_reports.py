import csv
import hashlib
import json

import numpy as np
import pytest

from spikefisher.cli_reports import (
    DEFAULT_SEED,
    RunConfig,
    canonical_json,
    ingest_csv,
    load_config,
    run,
)
from spikefisher.errors import ConfigError, InsufficientDataError

REAL_DATA = [0.9152, 0.7755, 0.4560, 0.4034, 0.2548, 0.2247, 0.0492]


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def run_json(tmp_path, args, name="out.json"):
    out = tmp_path / name
    code = run([*args, "--out", str(out)])
    assert code == 0
    return json.loads(out.read_text())


# ------------------------------------------------------------------ ingestion


def test_ingest_drops_incomplete_rows(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b,c\n1,2,3\n4,,6\n7,8,9\n")
    frame = ingest_csv(str(f), ["a"], ["b"], check_size=False)
    assert frame.values.shape == (2, 2) and frame.dropped == 1
    with pytest.raises(InsufficientDataError):
        ingest_csv(str(f), ["a"], ["b"])  # 2 rows do not exceed p + q = 2


def test_ingest_non_numeric_is_missing(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b\n1,2\nx,3\n4,5\n6,7\n")
    frame = ingest_csv(str(f), ["a"], ["b"])
    assert frame.dropped == 1 and frame.values.shape == (3, 2)


def test_ingest_column_errors(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        ingest_csv(str(f), ["a"], ["a"])
    with pytest.raises(ConfigError):
        ingest_csv(str(f), ["a"], ["zz"])


def test_ingest_by_index(tmp_path):
    f = tmp_path / "d.csv"
    write_csv(f, ["u", "v", "w"], [[i, i * i, 1 - i] for i in range(6)])
    frame = ingest_csv(str(f), [0], [2])
    assert frame.columns == ["u", "w"]


# --------------------------------------------------------------------- config


def test_config_defaults_and_validation():
    cfg = RunConfig("phase")
    assert cfg.seed == DEFAULT_SEED and cfg.kind == "fisher" and cfg.N == 1000
    with pytest.raises(ConfigError):
        RunConfig("clt", reps=0)
    with pytest.raises(ConfigError):
        RunConfig("nope")
    with pytest.raises(ConfigError):
        load_config("phase", None, {"unknown_key": 1})


def test_echo_omits_execution_only_keys():
    cfg = RunConfig("phase", workers=4, out="x.json")
    echo = cfg.echo()
    assert "workers" not in echo and "out" not in echo and echo["p"] == 200


def test_canonical_json_format():
    text = canonical_json({"b": 0.1, "a": [1, float("nan")], "c": np.float64(1 / 3)})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert "0.10000000000000001" in text
    assert "0.33333333333333331" in text
    assert "null" in text


# ------------------------------------------------------------------- commands


def test_phase_fisher_row(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "fisher", "spikes": [10.0], "finite": False}))
    doc = run_json(tmp_path, ["phase", "--config", str(cfg)])
    assert set(doc) == {"command", "config_echo", "seed", "results", "warnings"}
    row = doc["results"]["spikes"][0]
    assert row["valid"] and row["lambda_c"] == pytest.approx(11.1335, abs=1e-4)
    assert row["theta2"] > 0


def test_phase_invalid_spike_row(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "covariance", "spikes": [1.0], "finite": False}))
    doc = run_json(tmp_path, ["phase", "--config", str(cfg)])
    assert doc["results"]["spikes"][0]["valid"] is False
    assert doc["warnings"]


def test_phase_cca_closed_form_row(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "cca", "p": 200, "q": 200, "n": 1000, "spikes": [0.5], "bulk": 0.0}))
    doc = run_json(tmp_path, ["phase", "--config", str(cfg)])
    assert doc["results"]["spikes"][0]["t"] == pytest.approx(0.72, abs=1e-3)


def test_clt_report_and_sidecars(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "covariance", "p": 40, "n": 400, "spikes": [10.0]}))
    doc = run_json(tmp_path, ["clt", "--config", str(cfg), "--reps", "30"], "clt.json")
    res = doc["results"]
    for key in ("ks_distance", "mean", "variance", "histogram"):
        assert key in res
    for side in ("samples", "hist", "qq"):
        lines = (tmp_path / f"clt.{side}.csv").read_text().splitlines()
        assert len(lines) > 1
    assert len((tmp_path / "clt.samples.csv").read_text().splitlines()) == 31


def test_mse_csv_rows(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "fisher", "p": 10, "n": 100, "N": 50, "p_grid": [10, 20]}))
    out = tmp_path / "m.csv"
    assert run(["mse", "--config", str(cfg), "--reps", "5", "--format", "csv", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 2 * 2 * 2  # p values x estimators x spikes
    assert {r["estimator"] for r in rows} == {"cov", "fisher"}
    assert "e" in rows[0]["mse"]


def test_lsd_command(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "covariance", "z": [-1.0, 2.0, 20.0]}))
    grid = run_json(tmp_path, ["lsd", "--config", str(cfg)])["results"]["grid"]
    assert [g["inside_support"] for g in grid] == [False, True, False]


def test_exit_codes(tmp_path):
    assert run(["phase", "--reps", "0"]) == 1
    assert run(["phase", "--config", str(tmp_path / "missing.json")]) == 3
    assert run(["frobnicate"]) == 1
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"kind": "covariance", "p": 40, "n": 400, "spikes": [1.0]}))
    assert run(["clt", "--config", str(bad), "--reps", "30"]) == 2
    assert run(["phase", "--out", str(tmp_path / "no" / "dir.json")]) == 3


# --------------------------------------------------------------- cca-analyze


def test_cca_analyze_spectrum_fixture(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "cca", "p": 7, "q": 11, "n": 188, "spectrum": REAL_DATA}))
    res = run_json(tmp_path, ["cca-analyze", "--config", str(cfg)])["results"]
    assert res["lambda_sq"] == REAL_DATA
    assert res["rho_sq_hat"][0] == pytest.approx(0.9064, abs=5e-4)
    assert res["tracy_widom_pvalue"] == "not computed (out of scope)"
    assert res["variance_scales"][0]["eta"] > 0


def _synthetic(tmp_path, p, q, n, rho_sq, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n, q))
    r = np.sqrt(np.asarray(rho_sq))
    x = y[:, :p] * r + rng.standard_normal((n, p)) * np.sqrt(1 - r**2)
    data = np.hstack([x, y])
    names = [f"x{i}" for i in range(p)] + [f"y{j}" for j in range(q)]
    f = tmp_path / "syn.csv"
    write_csv(f, names, data.tolist())
    return f, names[:p], names[p:], data


def test_cca_analyze_synthetic_recovers_top_correlation(tmp_path):
    p, q, n = 200, 200, 1000
    rho = np.full(p, 0.5)
    rho[0], rho[1] = 10 / 11, 15 / 17
    f, xs, ys, _ = _synthetic(tmp_path, p, q, n, rho)
    doc = run_json(
        tmp_path,
        ["cca-analyze", "--input", str(f), "--x-cols", ",".join(xs), "--y-cols", ",".join(ys)],
    )
    assert doc["results"]["rho_sq_hat"][0] == pytest.approx(10 / 11, abs=0.01)


def test_cca_analyze_permutation_invariance(tmp_path):
    f, xs, ys, data = _synthetic(tmp_path, 3, 4, 50, [0.8, 0.3, 0.1], seed=2)
    perm = np.random.default_rng(1).permutation(50)
    g = tmp_path / "perm.csv"
    write_csv(g, xs + ys, data[perm].tolist())
    cols = ["--x-cols", ",".join(xs), "--y-cols", ",".join(ys)]
    a = run_json(tmp_path, ["cca-analyze", "--input", str(f), *cols], "a.json")
    b = run_json(tmp_path, ["cca-analyze", "--input", str(g), *cols], "b.json")
    diff = np.abs(np.array(a["results"]["lambda_sq"]) - np.array(b["results"]["lambda_sq"]))
    assert diff.max() < 1e-10


def test_cca_analyze_insufficient_samples(tmp_path):
    f, xs, ys, _ = _synthetic(tmp_path, 3, 12, 14, [0.5, 0.3, 0.1])
    code = run(["cca-analyze", "--input", str(f), "--x-cols", ",".join(xs), "--y-cols", ",".join(ys)])
    assert code == 2


# ---------------------------------------------------------------- determinism


def test_byte_identical_reruns(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "fisher", "p": 20, "n": 200, "N": 100}))
    digests = set()
    for i, workers in enumerate(["1", "1", "2", "2"]):
        out = tmp_path / f"r{i}.json"
        assert run(["clt", "--config", str(cfg), "--reps", "25", "--workers", workers, "--out", str(out)]) == 0
        digests.add(hashlib.sha256(out.read_bytes()).hexdigest())
    assert len(digests) == 1
