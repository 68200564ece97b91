"""Command-line interface, configuration, CSV ingestion and report writers.

Subcommands: ``phase``, ``clt``, ``mse``, ``cca-analyze`` and ``lsd``.  Every
command reads an optional JSON config, lets scalar flags override it, and
writes a report whose bytes depend only on the resolved config and seed.

Exit codes: 0 success, 1 usage/config error, 2 domain or phase error,
3 input/output error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import (
    ConfigError,
    DataIOError,
    DomainError,
    InsufficientDataError,
    SolverError,
    SpikeFisherError,
)
from .fluctuation_laws import beta_for, eta, theta1, theta2
from .monte_carlo import ModelSpec, cca_eigenvalues, run_clt, run_mse, sample_spectrum
from .phase_maps import SpikeSpec, _CcaContext, cca_chain, covariance_spike_limit, fisher_spike_limit, leave_one_out
from .spectral_core import DiscreteMeasure, empirical_st, solve_m2, solve_m3
from .spike_estimators import estimate_cca

DEFAULT_SEED = 20240917
COMMANDS = ("phase", "clt", "mse", "cca-analyze", "lsd")
# keys that change how a run executes but not what it computes
EXECUTION_ONLY = ("workers", "out", "format")

_DEFAULTS = {
    "covariance": {"p": 200, "n": 2000, "spikes": [10.0, 7.5], "bulk": 1.0},
    "fisher": {"p": 200, "n": 2000, "N": 1000, "spikes": [10.0, 7.5], "bulk": 1.0},
    "cca": {"p": 200, "q": 200, "n": 1000, "spikes": [10 / 11, 15 / 17], "bulk": 0.5},
}


# ------------------------------------------------------------------ config


@dataclass
class RunConfig:
    command: str
    kind: str = "fisher"
    p: int | None = None
    n: int | None = None
    N: int | None = None
    q: int | None = None
    spikes: list = field(default_factory=list)
    bulk: dict | float | None = None
    field: str = "real"
    seed: int = DEFAULT_SEED
    reps: int = 500
    workers: int = 1
    targets: list[int] | None = None
    centering: str = "finite"
    mode: str = "normal"
    paths: list[str] | None = None
    p_grid: list[int] | None = None
    threshold: float = 0.2
    finite: bool = True
    literal_sign: bool = False
    hist_bins: int = 30
    z: list[float] | None = None
    simulate: bool = False
    input: str | None = None
    spectrum: list[float] | None = None
    x_cols: list | None = None
    y_cols: list | None = None
    n_spikes: int = 1
    variance_bulk: str = "plugin"
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.kind not in _DEFAULTS:
            raise ConfigError(f"kind must be one of {sorted(_DEFAULTS)}")
        if not isinstance(self.reps, int) or self.reps < 1:
            raise ConfigError("reps must be a positive integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be json or csv")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        d = _DEFAULTS[self.kind]
        for key in ("p", "n", "N", "q"):
            if getattr(self, key) is None and key in d:
                setattr(self, key, d[key])
        if not self.spikes and self.command != "cca-analyze":
            self.spikes = list(d["spikes"])
        if self.bulk is None:
            self.bulk = d["bulk"]
        if self.x_cols is not None and self.y_cols is not None:
            if set(map(str, self.x_cols)) & set(map(str, self.y_cols)):
                raise ConfigError("x_cols and y_cols must be disjoint")

    def echo(self) -> dict:
        return {k: v for k, v in sorted(self.__dict__.items()) if k not in EXECUTION_ONLY}

    # model helpers
    def bulk_measure(self) -> DiscreteMeasure:
        b = self.bulk
        try:
            if isinstance(b, (int, float)):
                return DiscreteMeasure.delta(float(b))
            return DiscreteMeasure.from_atoms(b["locations"], b.get("weights"), normalize=True)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad bulk specification {b!r}: {exc}") from exc

    def spike_specs(self) -> tuple[SpikeSpec, ...]:
        out = []
        for s in self.spikes:
            if isinstance(s, dict):
                out.append(SpikeSpec(float(s["value"]), int(s.get("multiplicity", 1))))
            else:
                out.append(SpikeSpec(float(s)))
        return tuple(out)

    def model(self) -> ModelSpec:
        return ModelSpec(
            self.kind,
            self.p,
            self.n,
            N=self.N if self.kind == "fisher" else None,
            q=self.q if self.kind == "cca" else None,
            spikes=self.spike_specs(),
            bulk=self.bulk_measure(),
            field=self.field,
        )


def _split_cols(text: str | None):
    if text is None:
        return None
    return [c.strip() for c in text.split(",") if c.strip()]


def load_config(command: str, path: str | None, overrides: dict) -> RunConfig:
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataIOError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    data.pop("command", None)
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = set(RunConfig.__dataclass_fields__) - {"command"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return RunConfig(command=command, **data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# -------------------------------------------------------------- serializers


def _canon(x):
    if isinstance(x, dict):
        return {str(k): _canon(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_canon(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_canon(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _dump(x, out: io.StringIO, indent: int, level: int) -> None:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(x, dict):
        if not x:
            out.write("{}")
            return
        out.write("{\n")
        items = sorted(x.items())
        for i, (k, v) in enumerate(items):
            out.write(f"{pad}{json.dumps(k)}: ")
            _dump(v, out, indent, level + 1)
            out.write(",\n" if i < len(items) - 1 else "\n")
        out.write(end + "}")
    elif isinstance(x, list):
        if not x:
            out.write("[]")
            return
        out.write("[\n")
        for i, v in enumerate(x):
            out.write(pad)
            _dump(v, out, indent, level + 1)
            out.write(",\n" if i < len(x) - 1 else "\n")
        out.write(end + "]")
    elif isinstance(x, bool) or x is None:
        out.write(json.dumps(x))
    elif isinstance(x, int):
        out.write(str(x))
    elif isinstance(x, float):
        out.write(format(x, ".17g") if math.isfinite(x) else "null")
    else:
        out.write(json.dumps(str(x)))


def canonical_json(obj, indent: int = 2) -> str:
    """Sorted keys, 17 significant digits, non-finite floats as ``null``."""
    buf = io.StringIO()
    _dump(_canon(obj), buf, indent, 0)
    buf.write("\n")
    return buf.getvalue()


def _fmt_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".16e") if math.isfinite(v) else "nan"
    if v is None:
        return ""
    return str(v)


def rows_to_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt_cell(v) for v in r])
    return buf.getvalue()


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------- ingestion


@dataclass
class DatasetFrame:
    columns: list[str]
    values: np.ndarray  # rows x columns, finite floats
    dropped: int = 0

    def select(self, cols: Sequence) -> np.ndarray:
        return self.values[:, [self._index(c) for c in cols]]

    def _index(self, c) -> int:
        if isinstance(c, int) or (isinstance(c, str) and c.isdigit() and c not in self.columns):
            i = int(c)
            if not 0 <= i < len(self.columns):
                raise ConfigError(f"column index {i} out of range")
            return i
        if c not in self.columns:
            raise ConfigError(f"unknown column {c!r}")
        return self.columns.index(c)


def _parse_cell(tok: str) -> float:
    tok = tok.strip()
    if not tok:
        return math.nan
    try:
        v = float(tok)
    except ValueError:
        return math.nan
    return v if math.isfinite(v) else math.nan


def ingest_csv(path: str, x_cols: Sequence, y_cols: Sequence, check_size: bool = True) -> DatasetFrame:
    """Read the selected columns, dropping rows with missing or non-numeric cells.

    The returned frame holds the ``x`` columns followed by the ``y`` columns.
    Centering happens later, in :func:`cca_eigenvalues`.  ``check_size``
    enforces more retained rows than ``p + q``; the CLI always leaves it on.
    """
    if not x_cols or not y_cols:
        raise ConfigError("both x_cols and y_cols are required")
    if set(map(str, x_cols)) & set(map(str, y_cols)):
        raise ConfigError("x_cols and y_cols must be disjoint")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataIOError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    probe = DatasetFrame(header, np.empty((0, len(header))))
    idx = [probe._index(c) for c in list(x_cols) + list(y_cols)]
    kept, dropped = [], 0
    for r in rows[1:]:
        if not any(cell.strip() for cell in r):
            continue
        vals = [_parse_cell(r[i]) if i < len(r) else math.nan for i in idx]
        if any(math.isnan(v) for v in vals):
            dropped += 1
            continue
        kept.append(vals)
    names = [header[i] for i in idx]
    arr = np.asarray(kept, dtype=float).reshape(len(kept), len(idx))
    frame = DatasetFrame(names, arr, dropped)
    p, q = len(x_cols), len(y_cols)
    if check_size and arr.shape[0] <= p + q:
        raise InsufficientDataError(
            f"{arr.shape[0]} complete rows do not exceed p + q = {p + q}"
        )
    return frame


# ----------------------------------------------------------------- commands


def _limit_row(kind, spike, H, cfg: RunConfig) -> dict:
    p, n = cfg.p, cfg.n
    row: dict = {"value": spike.value, "multiplicity": spike.multiplicity}
    if kind == "covariance":
        lim = covariance_spike_limit(spike, H, p / n)
    elif kind == "fisher":
        lim = fisher_spike_limit(spike, H, p / n, p / cfg.N)
    else:
        lim = cca_chain(spike.value, H, p, cfg.q, n, literal_sign=cfg.literal_sign)
    row.update({k: v for k, v in lim.to_dict().items() if k != "value"})
    if not lim.valid:
        return row
    try:
        if kind == "covariance":
            row["theta1"] = theta1(spike.value, lim.lambda_c, H, p / n, check=False)
        elif kind == "fisher":
            row["theta1"] = theta1(spike.value, lim.lambda_c, H, p / n, check=False)
            row["vartheta"], row["theta2"] = theta2(
                spike.value, lim.lambda_c, lim.lam, H, p / n, p / cfg.N, check=False
            )
        elif not cfg.literal_sign:
            row["eta1"], row["eta2"], row["eta3"], row["eta"] = eta(
                spike.value, lim, p, cfg.q, n, H
            )
    except (DomainError, ArithmeticError) as exc:
        row["variance_error"] = str(exc)
    return row


def cmd_phase(cfg: RunConfig) -> dict:
    model = cfg.model()
    rows = []
    for k, s in enumerate(model.spikes):
        H = leave_one_out(model.bulk, model.spikes, model.p, k if cfg.finite else None)
        rows.append(_limit_row(cfg.kind, s, H, cfg))
    warnings = [f"spike {r['value']!r} is {r['status']}: {r['reason']}" for r in rows if not r["valid"]]
    return {"results": {"spikes": rows, "beta": beta_for(cfg.field)}, "warnings": warnings}


def _hist_and_qq(g: np.ndarray, bins: int):
    counts, edges = np.histogram(g, bins=bins)
    srt = np.sort(g)
    probs = (np.arange(1, srt.size + 1) - 0.5) / srt.size
    return counts, edges, stats.norm.ppf(probs), srt


def cmd_clt(cfg: RunConfig) -> tuple[dict, dict[str, str]]:
    model = cfg.model()
    targets = cfg.targets if cfg.targets is not None else list(range(len(model.spikes)))
    if cfg.mode == "goe_pair":
        summ = run_clt(model, targets, cfg.reps, cfg.seed, cfg.workers, cfg.centering, "goe_pair")
    else:
        summ = run_clt(model, targets, cfg.reps, cfg.seed, cfg.workers, cfg.centering)
    results = summ.to_dict()
    results["histogram"] = []
    sidecars_rows = {"samples": [], "hist": [], "qq": []}
    for j in range(summ.gamma.shape[1]):
        g = summ.gamma[:, j]
        counts, edges, theo, srt = _hist_and_qq(g, cfg.hist_bins)
        results["histogram"].append({"counts": counts.tolist(), "edges": edges.tolist()})
        for r in range(g.size):
            sidecars_rows["samples"].append([j, r, summ.eigenvalues[r, j], g[r]])
        for b in range(counts.size):
            sidecars_rows["hist"].append([j, edges[b], edges[b + 1], int(counts[b])])
        for a, b in zip(theo, srt):
            sidecars_rows["qq"].append([j, a, b])
    warnings = []
    if summ.ks_pvalue:
        for j, pv in enumerate(summ.ks_pvalue):
            if pv <= 0.01:
                warnings.append(f"column {j}: KS p-value {pv:.3g} rejects normality at 1%")
    side = {
        "samples": rows_to_csv(["column", "replication", "eigenvalue", "gamma"], sidecars_rows["samples"]),
        "hist": rows_to_csv(["column", "left", "right", "count"], sidecars_rows["hist"]),
        "qq": rows_to_csv(["column", "normal_quantile", "sample_quantile"], sidecars_rows["qq"]),
    }
    return {"results": results, "warnings": warnings}, side


def _default_paths(kind: str) -> list[str]:
    return {"covariance": ["cov"], "fisher": ["cov", "fisher"], "cca": ["cca"]}[kind]


def cmd_mse(cfg: RunConfig) -> dict:
    model = cfg.model()
    paths = cfg.paths or _default_paths(cfg.kind)
    summ = run_mse(model, paths, cfg.reps, cfg.seed, cfg.p_grid, cfg.threshold, cfg.workers)
    rows = []
    for path in paths:
        for p in summ.extra["p_grid"]:
            for k, truth in enumerate(summ.extra["truth"]):
                rows.append(
                    {
                        "p": p,
                        "estimator": path,
                        "spike": k,
                        "truth": truth,
                        "mse": summ.mse[path][str(p)][k],
                        "mean": summ.extra["estimate_mean"][path][str(p)][k],
                    }
                )
    return {"results": {"rows": rows, "reps": summ.reps}, "warnings": []}


def _cca_variance(alpha: float, others: np.ndarray, p, q, n, mode: str):
    if mode == "zero":
        H = DiscreteMeasure.delta(0.0)
    else:
        vals = np.clip(others, 0.0, 0.999)
        H = DiscreteMeasure.empirical(vals) if vals.size else DiscreteMeasure.delta(0.0)
    lim = cca_chain(alpha, H, p, q, n)
    if not lim.valid:
        return None, lim.reason or "below the phase transition"
    return eta(alpha, lim, p, q, n, H), ""


def cmd_cca_analyze(cfg: RunConfig) -> dict:
    warnings = []
    if cfg.spectrum is not None:
        l2 = np.sort(np.asarray(cfg.spectrum, dtype=float))[::-1]
        p, q, n = cfg.p, cfg.q, cfg.n
        if p != l2.size:
            raise ConfigError(f"spectrum has {l2.size} values but p = {p}")
        source = {"spectrum": "config", "p": p, "q": q, "n": n}
    else:
        if cfg.input is None:
            raise ConfigError("cca-analyze needs an input CSV or a spectrum")
        frame = ingest_csv(cfg.input, cfg.x_cols, cfg.y_cols)
        x = frame.values[:, : len(cfg.x_cols)]
        y = frame.values[:, len(cfg.x_cols):]
        if x.shape[1] > y.shape[1]:
            x, y = y, x
            warnings.append("x has more columns than y; roles swapped so that p <= q")
        n, p, q = x.shape[0], x.shape[1], y.shape[1]
        if not q < n:
            raise InsufficientDataError(f"need q < n, got q={q}, n={n}")
        l2 = cca_eigenvalues(x, y, center=True)
        source = {"input": cfg.input, "dropped_rows": frame.dropped, "p": p, "q": q, "n": n}
    if not p <= q < n:
        raise InsufficientDataError(f"need p <= q < n, got p={p}, q={q}, n={n}")
    fisher_scale = l2 / (1 - l2) * (n - q) / q
    est = estimate_cca(l2, p, q, n, threshold=cfg.threshold)
    rho2 = np.array([e.estimate for e in est])
    variances = []
    for k in range(min(cfg.n_spikes, p)):
        others = np.delete(rho2, k)
        res, why = _cca_variance(float(rho2[k]), others, p, q, n, cfg.variance_bulk)
        if res is None:
            variances.append({"index": k, "eta": None, "reason": why})
            warnings.append(f"no variance scale for index {k}: {why}")
        else:
            e1, e2, e3, e = res
            variances.append({"index": k, "eta1": e1, "eta2": e2, "eta3": e3, "eta": e})
    results = {
        "data": source,
        "lambda_sq": l2.tolist(),
        "fisher_scale": fisher_scale.tolist(),
        "estimates": [e.to_dict() for e in est],
        "rho_sq_hat": rho2.tolist(),
        "variance_scales": variances,
        "tracy_widom_pvalue": "not computed (out of scope)",
    }
    return {"results": results, "warnings": warnings}


def cmd_lsd(cfg: RunConfig) -> dict:
    """Stieltjes transforms of the model's LSD on a grid of real points."""
    model = cfg.model()
    H = leave_one_out(model.bulk, model.spikes, model.p, None)
    p, n = model.p, model.n
    zs = cfg.z if cfg.z is not None else [-1.0, -0.5, 0.05] + list(np.linspace(15.0, 40.0, 6))
    emp = sample_spectrum(model, cfg.seed) if cfg.simulate else None
    if emp is not None and model.kind == "cca":
        emp = emp / (1 - emp) * (n - model.q) / model.q
    rows = []
    for z in zs:
        row = {"z": float(z)}
        try:
            if model.kind == "covariance":
                row["m"] = solve_m2(H, p / n, float(z)).value
            elif model.kind == "fisher":
                row["m"] = solve_m3(H, p / n, p / model.N, float(z)).value
            else:
                # sample correlations on the Fisher scale
                ctx = _CcaContext.build(H, p, model.q, n)
                row["m"] = solve_m3(ctx.bulk_c, ctx.c3, ctx.c4, float(z)).value
            row["inside_support"] = False
        except DomainError:
            row["m"] = None
            row["inside_support"] = True
        except SolverError:
            row["m"] = None
            row["inside_support"] = None
        if emp is not None:
            try:
                row["empirical"] = empirical_st(emp, float(z))
            except SpikeFisherError:
                row["empirical"] = None
        rows.append(row)
    return {"results": {"grid": rows}, "warnings": []}


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spikefisher", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--reps", type=int)
        sp.add_argument("--out")
        sp.add_argument("--format", choices=("json", "csv"))
        sp.add_argument("--workers", type=int)
        sp.add_argument("--kind", choices=tuple(_DEFAULTS))
        if name == "cca-analyze":
            sp.add_argument("--input")
            sp.add_argument("--x-cols")
            sp.add_argument("--y-cols")
    return ap


def _csv_for(command: str, payload: dict) -> str:
    res = payload["results"]
    if command == "phase":
        keys = ["value", "multiplicity", "valid", "status", "lambda_c", "lam", "t", "theta1", "theta2", "eta"]
        return rows_to_csv(keys, [[r.get(k) for k in keys] for r in res["spikes"]])
    if command == "mse":
        keys = ["p", "estimator", "spike", "truth", "mse", "mean"]
        return rows_to_csv(keys, [[r[k] for k in keys] for r in res["rows"]])
    if command == "clt":
        keys = ["column", "target", "center", "scale", "mean", "variance", "ks_distance", "ks_pvalue"]
        rows = []
        for j in range(len(res["centers"])):
            tgt = res["targets"][j] if j < len(res["targets"]) else res["targets"][0]
            ks_d = res.get("ks_distance", [None] * len(res["centers"]))[j]
            ks_p = res.get("ks_pvalue", [None] * len(res["centers"]))[j]
            rows.append([j, tgt, res["centers"][j], res["scales"][j], res["mean"][j], res["variance"][j], ks_d, ks_p])
        return rows_to_csv(keys, rows)
    if command == "cca-analyze":
        keys = ["index", "lambda_sq", "fisher_scale", "rho_sq_hat"]
        rows = [[i, a, b, c] for i, (a, b, c) in enumerate(zip(res["lambda_sq"], res["fisher_scale"], res["rho_sq_hat"]))]
        return rows_to_csv(keys, rows)
    keys = ["z", "m", "inside_support", "empirical"]
    return rows_to_csv(keys, [[r.get(k) for k in keys] for r in res["grid"]])


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    overrides = {
        "seed": args.seed,
        "reps": args.reps,
        "out": args.out,
        "format": args.format,
        "workers": args.workers,
        "kind": args.kind,
    }
    if args.command == "cca-analyze":
        overrides.update(
            input=args.input, x_cols=_split_cols(args.x_cols), y_cols=_split_cols(args.y_cols)
        )
    try:
        cfg = load_config(args.command, args.config, overrides)
        side = {}
        if cfg.command == "phase":
            payload = cmd_phase(cfg)
        elif cfg.command == "clt":
            payload, side = cmd_clt(cfg)
        elif cfg.command == "mse":
            payload = cmd_mse(cfg)
        elif cfg.command == "cca-analyze":
            payload = cmd_cca_analyze(cfg)
        else:
            payload = cmd_lsd(cfg)
        doc = {
            "command": cfg.command,
            "config_echo": cfg.echo(),
            "seed": cfg.seed,
            "results": payload["results"],
            "warnings": payload["warnings"],
        }
        text = canonical_json(doc) if cfg.format == "json" else _csv_for(cfg.command, payload)
        _write(cfg.out, text)
        if side and cfg.out not in (None, "-"):
            stem = Path(cfg.out)
            for name, body in side.items():
                _write(str(stem.with_name(f"{stem.stem}.{name}.csv")), body)
    except SpikeFisherError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def main() -> None:  # pragma: no cover - console entry point
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
