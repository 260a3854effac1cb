"""Command-line front end.

Commands: ``simulate``, ``sweep``, ``fit``, ``predict``, ``experiment`` and
``replay``. Every command writes a ``manifest.json`` next to its outputs;
``riskdep replay manifest.json --out DIR`` re-runs the recorded command and
checks that every output is byte-identical.

Exit codes: 0 success, 2 invalid input, 3 file-system error, 4 numerical
failure (slice-sampler exhaustion above the tolerated fraction, or a replay
whose outputs differ).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import tempfile
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .bayes_model import BayesConfig, CellPrior, Dataset
from .copulas import INDEPENDENCE_POINT, CopulaSpec, Family
from .distributions import rng_stream
from .experiments import (
    ExperimentPlan,
    fixture_plan,
    run_fixture,
    sample_full_predictive,
)
from .loss_model import (
    DEFAULT_SWEEP_GRIDS,
    RiskCellParams,
    ScenarioSpec,
    dependence_sweep,
    empirical_quantile,
    simulate_annual_losses,
)
from .sampler import (
    ChainConfig,
    PosteriorSamples,
    Scan,
    SliceConfig,
    run_benchmark_chain,
    run_chain,
    summarize,
)

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4

# Fraction of slice updates allowed to exhaust their shrinkage budget.
EXHAUSTION_TOLERANCE = 1e-3


class ValidationError(Exception):
    pass


class NumericalError(Exception):
    pass


def _fmt_sample(x) -> str:
    return format(float(x), ".17g")


def _fmt_summary(x) -> str:
    return format(float(x), ".4g")


# ---------------------------------------------------------------------------
# Scenario loading


def load_schema() -> dict:
    text = resources.files("riskdep").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def _json_path(path) -> str:
    out = "$"
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def load_scenario(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    validate_scenario(doc)
    return doc


def validate_scenario(doc) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ValidationError(f"{_json_path(err.absolute_path)}: {err.message}")


def _copula(doc: dict | None) -> CopulaSpec:
    if not doc:
        return CopulaSpec()
    family = Family.parse(doc["family"])
    rho = doc.get("rho", INDEPENDENCE_POINT[family])
    return CopulaSpec(family, rho, doc.get("corr_matrix"))


def scenario_cells(doc: dict) -> tuple:
    if "cells" not in doc:
        raise ValidationError("$.cells: required by this command")
    return tuple(RiskCellParams(**c) for c in doc["cells"])


def scenario_spec(doc: dict, years=None) -> ScenarioSpec:
    cops = doc.get("copulas", {})
    joint = _copula(cops["joint"]) if "joint" in cops else None
    return ScenarioSpec(
        scenario_cells(doc),
        frequency_copula=_copula(cops.get("frequency")),
        severity_copula=_copula(cops.get("severity")),
        years=int(years if years is not None else doc.get("years", 1)),
        joint_copula=joint,
    )


def bayes_config(doc: dict, mode: str = "joint") -> BayesConfig:
    if "bayes" not in doc:
        raise ValidationError("$.bayes: required by this command")
    b = doc["bayes"]
    cells = tuple(CellPrior(**c) for c in b["cells"])
    if mode == "marginal":
        return BayesConfig(cells)
    copula = _copula(b["copula"]) if "copula" in b else _copula(doc.get("copulas", {}).get("frequency"))
    return BayesConfig(cells, copula, tuple(b["rho_prior_range"]) if "rho_prior_range" in b else None)


def chain_config(doc: dict, estimate_rho: bool = False, keep_lambda: bool = False) -> ChainConfig:
    c = doc.get("chain", {})
    iterations = c.get("iterations", 20_000)
    stepout = c.get("max_stepout", 50)
    shrink = c.get("max_shrink", 100)

    def sc(width, **kw):
        return SliceConfig(width=width, max_stepout=stepout, max_shrink=shrink, **kw)

    return ChainConfig(
        iterations=iterations,
        burnin=c.get("burnin", iterations // 5),
        scan=Scan(c.get("scan", "random")),
        tempering_period=c.get("tempering_period"),
        update_rho=estimate_rho,
        keep_lambda=keep_lambda,
        theta_slice=sc(c.get("theta_width", 1.0)),
        lambda_slice=sc(c.get("lambda_width", 1.0)),
        seed=doc.get("seed"),
    )


def _finish_rho_slice(ccfg: ChainConfig, cfg: BayesConfig, doc: dict) -> ChainConfig:
    c = doc.get("chain", {})
    lo, hi = cfg.rho_prior_range
    width = c.get("rho_width", 0.1 * (hi - lo) if hi > lo else 1.0)
    return ccfg.with_(
        rho_slice=SliceConfig(
            width=width,
            lower=lo,
            upper=hi if hi > lo else lo + 1.0,
            max_stepout=c.get("max_stepout", 50),
            max_shrink=c.get("max_shrink", 100),
        )
    )


# ---------------------------------------------------------------------------
# CSV input


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(cell.strip() for cell in r)]
    if not rows:
        return [], []
    header = [h.strip() for h in rows[0]]
    return header, rows[1:]


def _matrix(path, kind: str, integer: bool = False) -> np.ndarray:
    header, rows = _read_rows(path)
    keep = [i for i, h in enumerate(header) if h.lower() != "year"]
    out = []
    for r_no, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValidationError(f"{path}:{r_no}: expected {len(header)} fields, got {len(row)}")
        vals = []
        for i in keep:
            text = row[i].strip()
            try:
                v = float(text)
            except ValueError:
                raise ValidationError(f"{path}:{r_no}: {kind} value {text!r} is not a number") from None
            if integer and (v != int(v) if np.isfinite(v) else True):
                raise ValidationError(f"{path}:{r_no}: count {text!r} is not an integer")
            vals.append(v)
        out.append(vals)
    return np.array(out, dtype=float).reshape(len(out), len(keep))


def read_counts(path) -> np.ndarray:
    m = _matrix(path, "count", integer=True)
    if m.shape[0] == 0:
        raise ValidationError(f"{path}: no count rows")
    if np.any(m < 0):
        raise ValidationError(f"{path}: counts must be nonnegative")
    return m.astype(np.int64)


def read_experts(path, n_cells: int) -> np.ndarray:
    if path is None or os.path.getsize(path) == 0:
        return np.zeros((0, n_cells))
    m = _matrix(path, "expert")
    if m.shape[0] == 0:
        return np.zeros((0, n_cells))
    if np.any(~(m > 0)):
        raise ValidationError(f"{path}: expert opinions must be positive")
    return m


def read_lambda(path) -> np.ndarray:
    m = _matrix(path, "intensity")
    if np.any(~(m > 0)):
        raise ValidationError(f"{path}: intensities must be positive")
    return m


# ---------------------------------------------------------------------------
# Output


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class OutputDir:
    """Collects outputs written atomically into one directory."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.files = []

    def write_text(self, name: str, text: str) -> None:
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.path)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, self.path / name)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        if name not in self.files:
            self.files.append(name)

    def write_csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)
        self.write_text(name, buf.getvalue())

    def write_json(self, name: str, obj) -> None:
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def hashes(self) -> dict:
        return {name: _sha256(self.path / name) for name in self.files}


def _write_manifest(out: OutputDir, command: str, args: dict, config, seed, started: float, inputs=None, extra=None):
    manifest = {
        "command": command,
        "args": args,
        "config": config,
        "seed": seed,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "wall_clock_seconds": round(time.time() - started, 3),
        "inputs": {str(p): _sha256(p) for p in (inputs or [])},
        "outputs": out.hashes(),
    }
    if extra:
        manifest.update(extra)
    out.write_text("manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _abs(path):
    return None if path is None else str(Path(path).resolve())


def _seed(doc: dict, override):
    return int(override) if override is not None else int(doc.get("seed", 0))


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(a) -> int:
    started = time.time()
    doc = load_scenario(a.scenario)
    spec = scenario_spec(doc, a.years)
    seed = _seed(doc, a.seed)
    table = simulate_annual_losses(spec, rng_stream(seed, "simulate"))
    out = OutputDir(a.out)
    cols = ["year", "cell", "lambda", "psi", "count", "loss", "total"]
    rows = []
    for rec in table.rows():
        rows.append([rec[c] if isinstance(rec[c], (int, str)) else _fmt_sample(rec[c]) for c in cols])
    out.write_csv("losses.csv", cols, rows)
    args = {"scenario": _abs(a.scenario), "years": spec.years, "seed": seed, "out": _abs(a.out)}
    _write_manifest(out, "simulate", args, doc, seed, started, [a.scenario])
    return EXIT_OK


def _parse_floats(text: str, what: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"{what}: expected a comma-separated list of numbers, got {text!r}") from None


def cmd_sweep(a) -> int:
    started = time.time()
    doc = load_scenario(a.scenario)
    family = Family.parse(a.family)
    if family is Family.INDEPENDENCE:
        raise ValidationError("--family must be gaussian, clayton or gumbel")
    grid = _parse_floats(a.rho_grid, "--rho-grid") if a.rho_grid else list(DEFAULT_SWEEP_GRIDS[family])
    for r in grid:
        try:
            CopulaSpec(family, r)
        except ValueError:
            raise ValidationError(f"--rho-grid entry {r} is outside the {family.value} copula range") from None
    seed = _seed(doc, a.seed)
    template = ScenarioSpec(scenario_cells(doc), years=1)
    rows = dependence_sweep(template, family, grid, a.years_per_point, rng_stream(seed, "sweep", family.value))
    out = OutputDir(a.out)
    out.write_csv(
        "sweep.csv",
        ["family", "rho", "scenario", "spearman"],
        [[r.family, _fmt_sample(r.rho), r.scenario, _fmt_sample(r.spearman)] for r in rows],
    )
    args = {
        "scenario": _abs(a.scenario),
        "family": family.value,
        "rho_grid": ",".join(repr(r) for r in grid),
        "years_per_point": a.years_per_point,
        "seed": seed,
        "out": _abs(a.out),
    }
    _write_manifest(out, "sweep", args, doc, seed, started, [a.scenario])
    return EXIT_OK


def _samples_table(samples: PosteriorSamples, n_years: int):
    header = ["iteration"] + [f"theta[{j + 1}]" for j in range(samples.n_cells)]
    if samples.rho_estimated:
        header.append("rho")
    if samples.lam is not None:
        header += [f"lambda[{t + 1},{j + 1}]" for t in range(n_years) for j in range(samples.n_cells)]
    rows = []
    for i in range(len(samples)):
        row = [int(samples.iteration[i])] + [_fmt_sample(x) for x in samples.theta[i]]
        if samples.rho_estimated:
            row.append(_fmt_sample(samples.rho[i]))
        if samples.lam is not None:
            row += [_fmt_sample(x) for x in samples.lam[i].ravel()]
        rows.append(row)
    return header, rows


def _merge_marginal(parts) -> PosteriorSamples:
    first = parts[0]
    lam = None
    if first.lam is not None:
        lam = np.concatenate([p.lam for p in parts], axis=2)
    merged = PosteriorSamples(
        theta=np.column_stack([p.theta[:, 0] for p in parts]),
        rho=np.zeros(len(first)),
        iteration=first.iteration,
        lam=lam,
        total_iterations=first.total_iterations,
    )
    for key in first.evals:
        merged.evals[key] = sum(p.evals[key] for p in parts)
        merged.exhausted[key] = sum(p.exhausted[key] for p in parts)
        merged.updates[key] = sum(p.updates[key] for p in parts)
    return merged


def cmd_fit(a) -> int:
    started = time.time()
    doc = load_scenario(a.scenario)
    mode = a.mode
    cfg = bayes_config(doc, mode)
    counts = read_counts(a.counts)
    if counts.shape[1] != cfg.n_cells:
        raise ValidationError(f"{a.counts}: {counts.shape[1]} count columns but the scenario has {cfg.n_cells} cells")
    experts = read_experts(a.experts, cfg.n_cells)
    if experts.shape[1] != cfg.n_cells:
        raise ValidationError(f"{a.experts}: {experts.shape[1]} expert columns but the scenario has {cfg.n_cells} cells")
    data = Dataset(counts, experts)
    estimate_rho = bool(a.estimate_rho) and mode != "marginal"
    ccfg = _finish_rho_slice(chain_config(doc, estimate_rho, a.keep_lambda), cfg, doc)
    seed = _seed(doc, a.seed)
    inputs = [a.scenario, a.counts] + ([a.experts] if a.experts else [])
    if mode == "benchmark":
        if not a.lambda_csv:
            raise ValidationError("--mode benchmark requires --lambda with the true intensities")
        true_lambda = read_lambda(a.lambda_csv)
        if true_lambda.shape != counts.shape:
            raise ValidationError(f"{a.lambda_csv}: shape {true_lambda.shape} does not match counts {counts.shape}")
        inputs.append(a.lambda_csv)
        samples = run_benchmark_chain(data, cfg, ccfg, true_lambda, rng_stream(seed, "fit", mode))
    elif mode == "marginal":
        parts = [
            run_chain(data.cell(j), cfg.cell_config(j), ccfg, rng_stream(seed, "fit", mode, j))
            for j in range(cfg.n_cells)
        ]
        samples = _merge_marginal(parts)
    else:
        samples = run_chain(data, cfg, ccfg, rng_stream(seed, "fit", mode))

    out = OutputDir(a.out)
    header, rows = _samples_table(samples, data.n_years)
    out.write_csv("samples.csv", header, rows)
    summary = {name: s.to_dict() for name, s in summarize(samples).items()}
    out.write_json(
        "summary.json",
        {
            "parameters": summary,
            "retained": len(samples),
            "slice_evaluations": samples.evals,
            "slice_exhausted": samples.exhausted,
            "slice_updates": samples.updates,
        },
    )
    out.write_csv(
        "summary.csv",
        ["parameter", "mean", "sd", "q05", "q50", "q95", "mcse"],
        [[name] + [_fmt_summary(v) for v in s.values()] for name, s in summary.items()],
    )
    fit_config = {
        "mode": mode,
        "estimate_rho": estimate_rho,
        "seed": seed,
        "n_years": data.n_years,
        "n_experts": data.n_experts,
        "scenario": doc,
    }
    out.write_json("fit_config.json", fit_config)
    args = {
        "scenario": _abs(a.scenario),
        "counts": _abs(a.counts),
        "experts": _abs(a.experts),
        "lambda_csv": _abs(a.lambda_csv),
        "mode": mode,
        "estimate_rho": estimate_rho,
        "keep_lambda": bool(a.keep_lambda),
        "seed": seed,
        "out": _abs(a.out),
    }
    _write_manifest(out, "fit", args, doc, seed, started, inputs, {"n_experts": data.n_experts})
    frac = samples.exhausted_fraction()
    if frac > EXHAUSTION_TOLERANCE:
        raise NumericalError(f"slice sampler exhausted its shrinkage budget in {frac:.2%} of updates")
    return EXIT_OK


def _load_fit(fit_dir: Path):
    try:
        with open(fit_dir / "fit_config.json", encoding="utf-8") as fh:
            fit_config = json.load(fh)
        header, rows = _read_rows(fit_dir / "samples.csv")
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"missing fit artifact {exc.filename}; run 'riskdep fit' first") from None
    if not rows:
        raise ValidationError(f"{fit_dir / 'samples.csv'}: no retained samples")
    values = np.array([[float(x) for x in r] for r in rows])
    theta_cols = [i for i, h in enumerate(header) if h.startswith("theta[")]
    has_rho = "rho" in header
    samples = PosteriorSamples(
        theta=values[:, theta_cols],
        rho=values[:, header.index("rho")] if has_rho else np.zeros(len(rows)),
        iteration=values[:, 0].astype(np.int64),
        rho_estimated=has_rho,
    )
    return fit_config, samples


def cmd_predict(a) -> int:
    started = time.time()
    fit_dir = Path(a.fit_dir)
    fit_config, samples = _load_fit(fit_dir)
    doc = fit_config["scenario"]
    cfg = bayes_config(doc, fit_config["mode"])
    quantiles = _parse_floats(a.quantiles, "--quantiles")
    if 0.999 not in quantiles:
        quantiles.append(0.999)
    if any(not 0 < q < 1 for q in quantiles):
        raise ValidationError("--quantiles must lie strictly between 0 and 1")
    severity = None
    if "cells" in doc:
        severity = scenario_cells(doc)
        if len(severity) != cfg.n_cells:
            raise ValidationError("$.cells: number of cells differs from $.bayes.cells")
    sev_cop = _copula(doc.get("copulas", {}).get("severity"))
    seed = _seed(doc, a.seed if a.seed is not None else fit_config.get("seed"))
    pred = sample_full_predictive(
        samples, cfg, a.draws, rng_stream(seed, "predict"), severity, a.resample, sev_cop
    )
    j = cfg.n_cells
    header = ["draw", "state"] + [f"count[{k + 1}]" for k in range(j)] + ["count_total"]
    if pred.losses is not None:
        header += [f"loss[{k + 1}]" for k in range(j)] + ["loss_total"]
    rows = []
    for i in range(a.draws):
        row = [i + 1, int(samples.iteration[pred.state_index[i]])]
        row += [int(c) for c in pred.counts[i]] + [int(pred.counts[i].sum())]
        if pred.losses is not None:
            row += [_fmt_sample(x) for x in pred.losses[i]] + [_fmt_sample(pred.losses[i].sum())]
        rows.append(row)
    out = OutputDir(a.out if a.out else fit_dir / "predict")
    out.write_csv("predictive.csv", header, rows)
    var_rows = []
    quantities = [("count_total", pred.total_counts)]
    if pred.losses is not None:
        quantities.append(("loss_total", pred.total_losses))
    for name, x in quantities:
        for q in quantiles:
            var_rows.append([name, repr(q), _fmt_sample(empirical_quantile(x, q))])
        var_rows.append([name, "mean", _fmt_sample(np.mean(x))])
    out.write_csv("var.csv", ["quantity", "level", "value"], var_rows)
    args = {
        "fit_dir": _abs(fit_dir),
        "draws": a.draws,
        "quantiles": ",".join(repr(q) for q in quantiles),
        "resample": bool(a.resample),
        "seed": seed,
        "out": _abs(a.out if a.out else fit_dir / "predict"),
    }
    _write_manifest(
        out, "predict", args, fit_config, seed, started, [fit_dir / "samples.csv", fit_dir / "fit_config.json"]
    )
    return EXIT_OK


def cmd_experiment(a) -> int:
    started = time.time()
    overrides = {}
    if a.replicates is not None:
        overrides["replicates"] = a.replicates
    if a.year_subsets:
        overrides["year_subsets"] = tuple(int(x) for x in _parse_floats(a.year_subsets, "--year-subsets"))
    if a.seed is not None:
        overrides["seed"] = a.seed
    if a.families:
        fams = []
        for item in a.families.split(","):
            name, _, rho = item.partition(":")
            family = Family.parse(name.strip())
            fams.append((family, float(rho) if rho else INDEPENDENCE_POINT[family]))
        overrides["families"] = tuple(fams)
    plan = fixture_plan(a.fixture, a.full_scale, **overrides)
    if a.iterations is not None or a.burnin is not None or a.scan is not None:
        iterations = a.iterations if a.iterations is not None else plan.chain.iterations
        burnin = a.burnin if a.burnin is not None else min(plan.chain.burnin, iterations // 5)
        plan = ExperimentPlan(
            **{
                **{k: getattr(plan, k) for k in plan.__dataclass_fields__},
                "chain": plan.chain.with_(
                    iterations=iterations, burnin=burnin, scan=Scan(a.scan) if a.scan else plan.chain.scan
                ),
            }
        )
    report = run_fixture(plan)
    out = OutputDir(a.out)
    out.write_json("report.json", report.to_dict())
    params = sorted({r["parameter"] for r in report.rows}, key=lambda p: (p == "rho", p))
    for param in params:
        tab = list(report.table_rows(param))
        subsets = [str(s) for s in plan.year_subsets]
        name = "table_" + param.replace("[", "").replace("]", "") + ".csv"
        out.write_csv(name, ["family", "rho", "mode"] + subsets, [[r["family"], r["rho"], r["mode"]] + [r[s] for s in subsets] for r in tab])
    out.write_csv(
        "runs.csv",
        ["family", "rho_true", "replicate", "years", "mode", "parameter", "mean", "sd", "exhausted"],
        [
            [r.family, r.rho_true, r.replicate, r.years, r.mode, r.parameter, _fmt_sample(r.mean), _fmt_sample(r.sd), r.exhausted]
            for r in report.runs
        ],
    )
    args = {
        "fixture": a.fixture,
        "full_scale": bool(a.full_scale),
        "replicates": a.replicates,
        "iterations": a.iterations,
        "burnin": a.burnin,
        "scan": a.scan,
        "year_subsets": a.year_subsets,
        "families": a.families,
        "seed": a.seed,
        "out": _abs(a.out),
    }
    _write_manifest(out, "experiment", args, report.plan, plan.seed, started)
    return EXIT_OK


def _argv_from_manifest(manifest: dict, out: str) -> list:
    cmd = manifest["command"]
    args = dict(manifest["args"])
    args["out"] = out
    if cmd == "simulate":
        return [cmd, args["scenario"], "--years", str(args["years"]), "--seed", str(args["seed"]), "--out", out]
    if cmd == "sweep":
        return [
            cmd, args["scenario"], "--family", args["family"], "--rho-grid", args["rho_grid"],
            "--years-per-point", str(args["years_per_point"]), "--seed", str(args["seed"]), "--out", out,
        ]
    if cmd == "fit":
        argv = [cmd, args["scenario"], "--counts", args["counts"], "--mode", args["mode"], "--seed", str(args["seed"]), "--out", out]
        if args.get("experts"):
            argv += ["--experts", args["experts"]]
        if args.get("lambda_csv"):
            argv += ["--lambda", args["lambda_csv"]]
        if args.get("estimate_rho"):
            argv.append("--estimate-rho")
        if args.get("keep_lambda"):
            argv.append("--keep-lambda")
        return argv
    if cmd == "predict":
        argv = [cmd, args["fit_dir"], "--draws", str(args["draws"]), "--quantiles", args["quantiles"], "--seed", str(args["seed"]), "--out", out]
        if args.get("resample"):
            argv.append("--resample")
        return argv
    if cmd == "experiment":
        argv = [cmd, "--fixture", args["fixture"], "--out", out]
        if args.get("full_scale"):
            argv.append("--full-scale")
        for key, flag in (
            ("replicates", "--replicates"), ("iterations", "--iterations"), ("burnin", "--burnin"),
            ("scan", "--scan"), ("year_subsets", "--year-subsets"), ("families", "--families"), ("seed", "--seed"),
        ):
            if args.get(key) is not None:
                argv += [flag, str(args[key])]
        return argv
    raise ValidationError(f"manifest command {cmd!r} cannot be replayed")


def cmd_replay(a) -> int:
    with open(a.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    for path, digest in manifest.get("inputs", {}).items():
        if not os.path.exists(path):
            raise FileNotFoundError(f"manifest input {path} no longer exists")
        if _sha256(path) != digest:
            raise ValidationError(f"manifest input {path} has changed since the recorded run")
    out = _abs(a.out)
    code = main(_argv_from_manifest(manifest, out))
    if code != EXIT_OK:
        return code
    mismatched = []
    for name, digest in manifest["outputs"].items():
        path = Path(out) / name
        if not path.exists() or _sha256(path) != digest:
            mismatched.append(name)
    if mismatched:
        print(f"replay differs from the manifest in: {', '.join(mismatched)}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"replay reproduced {len(manifest['outputs'])} output file(s) byte-for-byte")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskdep", description="Dependent operational-risk loss simulation and Bayesian frequency fitting.")
    p.add_argument("--version", action="version", version=f"riskdep {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate annual losses for a scenario")
    s.add_argument("scenario")
    s.add_argument("--years", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="Spearman correlation of annual losses versus copula parameter")
    s.add_argument("scenario")
    s.add_argument("--family", required=True)
    s.add_argument("--rho-grid", default=None, help="comma-separated copula parameters")
    s.add_argument("--years-per-point", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("fit", help="sample the posterior of the frequency model")
    s.add_argument("scenario")
    s.add_argument("--counts", required=True)
    s.add_argument("--experts", default=None)
    s.add_argument("--lambda", dest="lambda_csv", default=None, help="true intensities (benchmark mode)")
    s.add_argument("--mode", choices=("joint", "marginal", "benchmark"), default="joint")
    s.add_argument("--estimate-rho", action="store_true")
    s.add_argument("--keep-lambda", action="store_true", help="write intensity columns to samples.csv")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", help="full predictive distribution and VaR from a fit")
    s.add_argument("fit_dir")
    s.add_argument("--draws", type=int, default=10_000)
    s.add_argument("--quantiles", default="0.5,0.9,0.99,0.999")
    s.add_argument("--resample", action="store_true", help="draw posterior states with replacement")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", default=None, help="defaults to FIT_DIR/predict")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("experiment", help="replicated simulation study at known truth")
    s.add_argument("--fixture", required=True, choices=("example1", "example2", "table5"))
    s.add_argument("--full-scale", "--paper-scale", dest="full_scale", action="store_true", help="20 replicates of 50,000 iterations")
    s.add_argument("--replicates", type=int, default=None)
    s.add_argument("--iterations", type=int, default=None)
    s.add_argument("--burnin", type=int, default=None)
    s.add_argument("--scan", choices=("random", "systematic"), default=None)
    s.add_argument("--year-subsets", default=None, help="comma-separated year prefixes")
    s.add_argument("--families", default=None, help="e.g. clayton:10,gaussian:0.9")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("replay", help="re-run a command from its manifest and compare outputs")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    try:
        return a.func(a)
    except (ValidationError, ValueError, KeyError) as exc:
        print(f"riskdep: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"riskdep: file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"riskdep: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
